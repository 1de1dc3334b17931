"""Epoch scan + downstream signal on the rebalanced small fixture world."""
import sys, time
sys.path.insert(0, "src")
from dataclasses import replace

import numpy as np

from gist.config import CbjtConfig, WorldConfig
from gist.simgen import gen_world, true_click_prob, true_neighbors
from gist.data import SOURCE, clicked_history, tick_of
from gist import cbjt, metrics, nn


def spearman(a, b):
    ra = np.argsort(np.argsort(a)).astype(float)
    rb = np.argsort(np.argsort(b)).astype(float)
    return float(np.corrcoef(ra, rb)[0, 1])


W = WorldConfig(users=300, source_items=100, target_items=50, categories=6,
                source_events_per_user_tick=12, target_events_per_user_tick=1,
                ticks=7, seed=7)
BASE = CbjtConfig(d_e=16, tower_hidden=16, content_epochs=25, content_batch=64,
                  source_epochs=3, source_batch=128, source_history_cap=50,
                  behavior_epochs=40, behavior_batch=128,
                  union_epochs=30, union_batch=128,
                  distill_max_impressions=1_000_000)

ds, world = gen_world(W)
src_events = [e for e in ds.events if e.domain == SOURCE]
train_ev = [e for e in src_events if tick_of(e.timestamp) < 6]
test_ev = [e for e in src_events if tick_of(e.timestamp) == 6]
labels = np.array([e.label for e in test_ev])
hist = clicked_history(src_events, SOURCE)

best = None
for epochs in [3, 5, 8]:
    cfg = replace(BASE, source_epochs=epochs)
    model, curve = cbjt.train_source_model(train_ev, ds.items, W.users, cfg, seed=4)
    preds = cbjt.predict_source(model, test_ev, hist, cfg.source_history_cap)
    a = metrics.auc(labels, preds)
    print(f"source epochs={epochs}: loss {curve[-1]:.3f} test AUC {a:.3f}")
    if best is None or a > best[1]:
        best = (epochs, a, model)

epochs, auc_best, model = best
print(f"using epochs={epochs} (AUC {auc_best:.3f})")

# behavior alignment margin with this model
benc, bcurve = cbjt.train_behavior_encoder(ds.items, model, BASE, seed=6)
by_id = {it.id: it for it in ds.items}
q = [by_id[int(i)] for i in model.qualifying_ids]
_, qva, qvb = cbjt.item_views(q)
bh = benc.embed(qva, qvb)
idv = nn.l2_normalize_rows(model.id_embeddings([it.id for it in q]))
aligned = float(np.einsum("ij,ij->i", bh, idv).mean())
perm = float(np.einsum("ij,ij->i", bh, np.roll(idv, 1, axis=0)).mean())
print(f"behavior: curve {bcurve[0]:.3f}->{bcurve[-1]:.3f} margin {aligned - perm:.3f} "
      f"(aligned {aligned:.3f} vs {perm:.3f}, n_q={len(q)})")

# longer behavior training?
for be in [80, 150]:
    benc2, bc2 = cbjt.train_behavior_encoder(ds.items, model, replace(BASE, behavior_epochs=be), seed=6)
    bh2 = benc2.embed(qva, qvb)
    al2 = float(np.einsum("ij,ij->i", bh2, idv).mean())
    pm2 = float(np.einsum("ij,ij->i", bh2, np.roll(idv, 1, axis=0)).mean())
    print(f"behavior epochs={be}: loss {bc2[-1]:.3f} margin {al2 - pm2:.3f}")

# distill + pair quality vs latent truth
res = cbjt.distill_esu_pairs(model, train_ev, hist, 0.4, BASE, seed=5)
usable = [p for p in res.pairs if p.target != p.best]
hits = sum(1 for p in usable if p.best in true_neighbors(world, p.target, 10))
rnd = np.random.default_rng(0)
ids_src = model.item_ids
rhits = 0
for p in usable:
    fake = int(rnd.choice(ids_src))
    if fake != p.target and fake in true_neighbors(world, p.target, 10):
        rhits += 1
print(f"distill: {len(usable)} usable pairs; best in true top-10 of target: "
      f"{hits}/{len(usable)} vs random {rhits}/{len(usable)}")
print("by_tick:", {k: round(v, 3) for k, v in res.mean_max_by_tick.items()})

# content encoder + zero-noise check with longer training
t0 = time.time()
znw = replace(W, users=40, source_items=200, target_items=50,
              view_noise_a=0.0, view_noise_b=0.0, ticks=1,
              source_events_per_user_tick=2, seed=11)
zn_ds, zn_world = gen_world(znw)
for ce in [60, 150, 300]:
    zenc, zcurve = cbjt.train_content_encoder(zn_ds.items, replace(BASE, content_epochs=ce), seed=2)
    ids, va, vb = cbjt.item_views(zn_ds.items)
    ct = zenc.embed(va, vb)
    rng = np.random.default_rng(3)
    n = len(ids)
    pi, pj = rng.integers(0, n, 600), rng.integers(0, n, 600)
    keep = pi != pj
    pi, pj = pi[keep], pj[keep]
    learned = np.einsum("ij,ij->i", ct[pi], ct[pj])
    z = zn_world.z_items[ids]
    true = np.einsum("ij,ij->i", z[pi], z[pj])
    print(f"zero-noise content epochs={ce}: loss {zcurve[-1]:.3f} spearman {spearman(learned, true):.3f} ({time.time()-t0:.0f}s)")
