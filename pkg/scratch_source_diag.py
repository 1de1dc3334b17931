"""Why is held-out source AUC at chance? Bayes bound + training levers."""
import sys, time
sys.path.insert(0, "src")
from dataclasses import replace

import numpy as np

from gist.config import CbjtConfig, WorldConfig
from gist.simgen import gen_world, true_click_prob
from gist.data import SOURCE, clicked_history, tick_of
from gist import cbjt, metrics

SMALL_WORLD = WorldConfig(
    users=150, source_items=300, target_items=80, categories=6,
    source_events_per_user_tick=8, target_events_per_user_tick=1, ticks=7, seed=7,
)
SMALL = CbjtConfig(
    d_e=16, tower_hidden=16, content_epochs=25, content_batch=64,
    source_epochs=3, source_batch=128, source_history_cap=50,
    behavior_epochs=40, behavior_batch=128, union_epochs=30, union_batch=128,
    distill_max_impressions=1_000_000,
)

ds, world = gen_world(SMALL_WORLD)
src_events = [e for e in ds.events if e.domain == SOURCE]
train_ev = [e for e in src_events if tick_of(e.timestamp) < 6]
test_ev = [e for e in src_events if tick_of(e.timestamp) == 6]
labels = np.array([e.label for e in test_ev])
labels_tr = np.array([e.label for e in train_ev])

# Bayes bound: AUC of the true click probability
p_true = np.array([true_click_prob(world, e.user, e.item) for e in test_ev])
print(f"click rate test {labels.mean():.3f}; Bayes AUC bound {metrics.auc(labels, p_true):.4f}")
p_true_tr = np.array([true_click_prob(world, e.user, e.item) for e in train_ev])
print(f"train Bayes bound {metrics.auc(labels_tr, p_true_tr):.4f}")

hist = clicked_history(src_events, SOURCE)

for epochs, lr in [(3, 2e-3), (10, 2e-3), (10, 5e-3), (20, 5e-3)]:
    t0 = time.time()
    cfg = replace(SMALL, source_epochs=epochs, source_lr=lr)
    model, curve = cbjt.train_source_model(train_ev, ds.items, SMALL_WORLD.users, cfg, seed=4)
    preds_te = cbjt.predict_source(model, test_ev, hist, cfg.source_history_cap)
    preds_tr = cbjt.predict_source(model, train_ev, hist, cfg.source_history_cap)
    print(f"epochs={epochs} lr={lr}: loss {curve[0]:.3f}->{curve[-1]:.3f}, "
          f"train AUC {metrics.auc(labels_tr, preds_tr):.3f}, test AUC {metrics.auc(labels, preds_te):.3f} "
          f"({time.time()-t0:.1f}s)")
