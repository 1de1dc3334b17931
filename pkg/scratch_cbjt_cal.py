"""Calibration scratch: signal levels + grad-check seed scan for cbjt tests."""
import sys, time
sys.path.insert(0, "src")
from dataclasses import replace

import numpy as np

from gist.config import CbjtConfig, WorldConfig
from gist.simgen import gen_world
from gist.data import SOURCE, clicked_history, tick_of
from gist import cbjt, nn, metrics

t0 = time.time()

SMALL_WORLD = WorldConfig(
    users=150, source_items=300, target_items=80, categories=6,
    source_events_per_user_tick=8, target_events_per_user_tick=1, ticks=7, seed=7,
)
SMALL = CbjtConfig(
    d_e=16, tower_hidden=16,
    content_epochs=25, content_batch=64,
    source_epochs=3, source_batch=128, source_history_cap=50,
    behavior_epochs=40, behavior_batch=128,
    union_epochs=30, union_batch=128,
    distill_max_impressions=1_000_000,
)

ds, world = gen_world(SMALL_WORLD)
src_events = [e for e in ds.events if e.domain == SOURCE]
print(f"world: {len(ds.events)} events ({len(src_events)} source) in {time.time()-t0:.1f}s")

# content encoder
t1 = time.time()
enc, curve = cbjt.train_content_encoder(ds.items, SMALL, seed=1)
print(f"content: {curve[0]:.3f} -> {curve[-1]:.3f} in {time.time()-t1:.1f}s")

# zero-noise rank correlation
t1 = time.time()
zn_cfg = replace(SMALL_WORLD, users=40, source_items=200, target_items=50,
                 view_noise_a=0.0, view_noise_b=0.0, ticks=1,
                 source_events_per_user_tick=2, seed=11)
zn_ds, zn_world = gen_world(zn_cfg)
zn_enc, zn_curve = cbjt.train_content_encoder(zn_ds.items, replace(SMALL, content_epochs=60), seed=2)
ids, va, vb = cbjt.item_views(zn_ds.items)
ct = zn_enc.embed(va, vb)
rng = np.random.default_rng(3)
n = len(ids)
pi = rng.integers(0, n, 500); pj = rng.integers(0, n, 500)
keep = pi != pj
pi, pj = pi[keep], pj[keep]
learned = np.einsum("ij,ij->i", ct[pi], ct[pj])
z = zn_world.z_items[ids]
true = np.einsum("ij,ij->i", z[pi], z[pj])
def spearman(a, b):
    ra = np.argsort(np.argsort(a)).astype(float)
    rb = np.argsort(np.argsort(b)).astype(float)
    return float(np.corrcoef(ra, rb)[0, 1])
print(f"zero-noise spearman: {spearman(learned, true):.3f} (curve {zn_curve[0]:.3f}->{zn_curve[-1]:.3f}) in {time.time()-t1:.1f}s")

# source model
t1 = time.time()
train_ev = [e for e in src_events if tick_of(e.timestamp) < 6]
test_ev = [e for e in src_events if tick_of(e.timestamp) == 6]
model, scurve = cbjt.train_source_model(train_ev, ds.items, SMALL_WORLD.users, SMALL, seed=4)
hist = clicked_history(src_events, SOURCE)
preds = cbjt.predict_source(model, test_ev, hist, SMALL.source_history_cap)
labels = np.array([e.label for e in test_ev])
auc_tr = metrics.auc(labels, preds)
m0, _ = cbjt.train_source_model(train_ev, ds.items, SMALL_WORLD.users, replace(SMALL, source_epochs=0), seed=4)
p0 = cbjt.predict_source(m0, test_ev, hist, SMALL.source_history_cap)
auc_0 = metrics.auc(labels, p0)
print(f"source: curve {scurve[0]:.3f}->{scurve[-1]:.3f}, test AUC {auc_tr:.3f}, untrained {auc_0:.3f}, n_test={len(test_ev)} in {time.time()-t1:.1f}s")

# distill
t1 = time.time()
res = cbjt.distill_esu_pairs(model, train_ev, hist, 0.4, SMALL, seed=5)
print(f"distill: {len(res.pairs)} pairs from {res.n_impressions} impressions, "
      f"by_tick={{k: round(v,3) for k,v in res.mean_max_by_tick.items()}}")
print("   by_tick:", {k: round(v, 3) for k, v in res.mean_max_by_tick.items()},
      f"in {time.time()-t1:.1f}s")

# behavior
t1 = time.time()
benc, bcurve = cbjt.train_behavior_encoder(ds.items, model, SMALL, seed=6)
by_id = {it.id: it for it in ds.items}
q = [by_id[int(i)] for i in model.qualifying_ids]
_, qva, qvb = cbjt.item_views(q)
bh = benc.embed(qva, qvb)
idv = nn.l2_normalize_rows(model.id_embeddings([it.id for it in q]))
aligned = float(np.einsum("ij,ij->i", bh, idv).mean())
perm = float(np.einsum("ij,ij->i", bh, np.roll(idv, 1, axis=0)).mean())
print(f"behavior: curve {bcurve[0]:.3f}->{bcurve[-1]:.3f}, aligned {aligned:.3f} vs mismatched {perm:.3f}, margin {aligned-perm:.3f} in {time.time()-t1:.1f}s")

# union on real reps + pairs
t1 = time.time()
ids_all, ct_all, bh_all, _ = cbjt.compute_item_reps(enc, benc, cbjt.UnionModel.create(SMALL.d_e, np.random.default_rng(0)), ds.items)
union, ucurve = cbjt.train_union_model(res.pairs, ids_all, ct_all, bh_all, SMALL, seed=7)
joint = cbjt.fuse(union, ct_all, bh_all)
u0, _ = cbjt.train_union_model(res.pairs, ids_all, ct_all, bh_all, SMALL, seed=7, epochs=0)
joint0 = cbjt.fuse(u0, ct_all, bh_all)
usable = [p for p in res.pairs if p.target != p.best]
pr = [(p.target, p.best) for p in usable]
r_tr = metrics.recall_at_k(ids_all, joint, pr, 10)
r_0 = metrics.recall_at_k(ids_all, joint0, pr, 10)
r_bh = metrics.recall_at_k(ids_all, bh_all, pr, 10)
print(f"union: curve {ucurve[0]:.3f}->{ucurve[-1]:.3f}, recall@10 trained {r_tr:.3f} vs init {r_0:.3f} vs bh {r_bh:.3f}, {len(usable)} usable pairs in {time.time()-t1:.1f}s")

print(f"TOTAL {time.time()-t0:.1f}s")
