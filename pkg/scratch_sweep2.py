"""Sweep 2: sharper labels/selection; measure rho on the popular head."""
import sys, time
sys.path.insert(0, "src")
from dataclasses import replace

import numpy as np

from gist.config import CbjtConfig, WorldConfig
from gist.simgen import gen_world, true_click_prob
from gist.data import SOURCE, clicked_history, tick_of
from gist import cbjt, metrics, nn


def spearman(a, b):
    ra = np.argsort(np.argsort(a)).astype(float)
    rb = np.argsort(np.argsort(b)).astype(float)
    return float(np.corrcoef(ra, rb)[0, 1])


def rho_over(world, ids, emb, n_pairs=4000, seed=99):
    rng = np.random.default_rng(seed)
    pi = rng.integers(0, len(ids), n_pairs)
    pj = rng.integers(0, len(ids), n_pairs)
    keep = pi != pj
    pi, pj = pi[keep], pj[keep]
    e = nn.l2_normalize_rows(emb + 1e-12)
    learned = np.einsum("ij,ij->i", e[pi], e[pj])
    z = world.z_items[ids]
    true = np.einsum("ij,ij->i", z[pi], z[pj])
    return spearman(learned, true)


def run(tag, wcfg, ccfg):
    t0 = time.time()
    ds, world = gen_world(wcfg)
    src_events = [e for e in ds.events if e.domain == SOURCE]
    train_ev = [e for e in src_events if tick_of(e.timestamp) < wcfg.ticks - 1]
    test_ev = [e for e in src_events if tick_of(e.timestamp) == wcfg.ticks - 1]
    labels = np.array([e.label for e in test_ev])
    p_true = np.array([true_click_prob(world, e.user, e.item) for e in test_ev])
    bayes = metrics.auc(labels, p_true)
    seen = {(e.user, e.item) for e in train_ev}
    repeat = np.mean([(e.user, e.item) in seen for e in test_ev])
    hist = clicked_history(src_events, SOURCE)
    model, curve = cbjt.train_source_model(train_ev, ds.items, wcfg.users, ccfg, seed=4)
    preds = cbjt.predict_source(model, test_ev, hist, ccfg.source_history_cap)
    a = metrics.auc(labels, preds)
    rho_all = rho_over(world, model.item_ids, model.item_emb)
    q = model.qualifying_ids
    qrows = np.array([model.row_of[int(i)] for i in q])
    rho_head = rho_over(world, q, model.item_emb[qrows])
    # share of train events on qualifying items
    qset = set(int(i) for i in q)
    share = np.mean([e.item in qset for e in train_ev])
    print(f"{tag}: AUC {a:.3f} (bayes {bayes:.3f}) rho_all {rho_all:.3f} "
          f"rho_head {rho_head:.3f} click {labels.mean():.2f} repeat {repeat:.2f} "
          f"head-share {share:.2f} loss {curve[0]:.3f}->{curve[-1]:.3f} ({time.time()-t0:.0f}s)",
          flush=True)


W0 = WorldConfig()

run("E z1.1 b5 c8 d16 ep6",
    replace(W0, zipf_exponent=1.1, beta_select=5.0, beta_click=8.0),
    CbjtConfig(d_e=16, source_epochs=6))
run("F z1.3 b6 c8 d16 ep6",
    replace(W0, zipf_exponent=1.3, beta_select=6.0, beta_click=8.0),
    CbjtConfig(d_e=16, source_epochs=6))
run("G z1.1 b5 c8 d32 ep10",
    replace(W0, zipf_exponent=1.1, beta_select=5.0, beta_click=8.0),
    CbjtConfig(source_epochs=10))
