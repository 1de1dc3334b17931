"""Default-scale world/training sweep for the source model."""
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


def run(tag, wcfg, ccfg):
    t0 = time.time()
    ds, world = gen_world(wcfg)
    src_events = [e for e in ds.events if e.domain == SOURCE]
    train_ev = [e for e in src_events if tick_of(e.timestamp) < wcfg.ticks - 1]
    test_ev = [e for e in src_events if tick_of(e.timestamp) == wcfg.ticks - 1]
    labels = np.array([e.label for e in test_ev])
    p_true = np.array([true_click_prob(world, e.user, e.item) for e in test_ev])
    bayes = metrics.auc(labels, p_true)
    hist = clicked_history(src_events, SOURCE)
    model, curve = cbjt.train_source_model(train_ev, ds.items, wcfg.users, ccfg, seed=4)
    preds = cbjt.predict_source(model, test_ev, hist, ccfg.source_history_cap)
    a = metrics.auc(labels, preds)
    rng = np.random.default_rng(99)
    ids = model.item_ids
    pi = rng.integers(0, len(ids), 2000)
    pj = rng.integers(0, len(ids), 2000)
    keep = pi != pj
    pi, pj = pi[keep], pj[keep]
    emb = nn.l2_normalize_rows(model.item_emb + 1e-12)
    learned = np.einsum("ij,ij->i", emb[pi], emb[pj])
    z = world.z_items[ids]
    true = np.einsum("ij,ij->i", z[pi], z[pj])
    print(f"{tag}: loss {curve[0]:.3f}->{curve[-1]:.3f} test AUC {a:.3f} "
          f"(bayes {bayes:.3f}) emb-rho {spearman(learned, true):.3f} "
          f"click-rate {labels.mean():.2f} ({time.time()-t0:.0f}s)", flush=True)


W0 = WorldConfig()  # U=2000 I_s=5000 I_t=1000 epu=20 zipf=0.8 bsel=3 bclk=4

run("A epu20 zipf1.1 bsel5 d32 ep6",
    replace(W0, zipf_exponent=1.1, beta_select=5.0),
    CbjtConfig(source_epochs=6))
run("B epu20 zipf1.1 bsel5 d16 ep6",
    replace(W0, zipf_exponent=1.1, beta_select=5.0),
    CbjtConfig(d_e=16, source_epochs=6))
run("C base-world d32 ep8 lr5e-3",
    W0,
    CbjtConfig(source_epochs=8, source_lr=5e-3))
run("D epu20 zipf1.1 bsel5 d16 ep8 lr5e-3",
    replace(W0, zipf_exponent=1.1, beta_select=5.0),
    CbjtConfig(d_e=16, source_epochs=8, source_lr=5e-3))
