"""Source model at default scale + rebalanced small worlds.

Reports held-out AUC, and Spearman between item_emb cosine and latent cosine
(the signal that actually feeds behavior alignment + ESU pairs).
"""
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


def run(tag, wcfg, ccfg, seeds=(4,)):
    ds, world = gen_world(wcfg)
    src_events = [e for e in ds.events if e.domain == SOURCE]
    train_ev = [e for e in src_events if tick_of(e.timestamp) < wcfg.ticks - 1]
    test_ev = [e for e in src_events if tick_of(e.timestamp) == wcfg.ticks - 1]
    labels = np.array([e.label for e in test_ev])
    p_true = np.array([true_click_prob(world, e.user, e.item) for e in test_ev])
    bayes = metrics.auc(labels, p_true)
    hist = clicked_history(src_events, SOURCE)
    for seed in seeds:
        t0 = time.time()
        model, curve = cbjt.train_source_model(train_ev, ds.items, wcfg.users, ccfg, seed=seed)
        preds = cbjt.predict_source(model, test_ev, hist, ccfg.source_history_cap)
        a = metrics.auc(labels, preds)
        # item_emb geometry vs latent geometry over random source item pairs
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
        rho = spearman(learned, true)
        print(f"{tag} seed={seed}: loss {curve[0]:.3f}->{curve[-1]:.3f} "
              f"test AUC {a:.3f} (bayes {bayes:.3f}) emb-rho {rho:.3f} "
              f"n_train={len(train_ev)} ({time.time()-t0:.0f}s)")


which = sys.argv[1] if len(sys.argv) > 1 else "small"

if which == "small":
    # rebalanced small: more events per parameter
    for users, items_s, epu, d_e in [(300, 100, 12, 16), (300, 100, 12, 8), (200, 150, 16, 16)]:
        w = WorldConfig(users=users, source_items=items_s, target_items=50, categories=6,
                        source_events_per_user_tick=epu, target_events_per_user_tick=1,
                        ticks=7, seed=7)
        c = CbjtConfig(d_e=d_e, tower_hidden=16, source_epochs=3, source_batch=128,
                       source_history_cap=50, distill_max_impressions=1_000_000)
        run(f"U{users}/I{items_s}/epu{epu}/d{d_e}", w, c)
else:
    w = WorldConfig()  # default: 2000 users, 5000 source items, epu 20, 7 ticks
    for epochs, lr in [(2, 2e-3), (1, 2e-3)]:
        c = CbjtConfig(source_epochs=epochs, source_lr=lr)
        run(f"default ep{epochs} lr{lr}", w, c)
