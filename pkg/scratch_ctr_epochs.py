"""Per-epoch test AUC for each variant on the finished seed-7 artifacts."""
import json, time
import numpy as np
from dataclasses import replace
from gist import ctr, nn
from gist.config import default_config
from gist.data import SOURCE, TARGET, clicked_history, load_bundle
from gist.metrics import auc
from gist.pipeline import Paths, stage_seeds, _target_split, CTR_RUNS
from gist.search import load_search_log

cfg = default_config()
paths = Paths("/tmp/run_s7b")
ds = load_bundle(paths.dataset)
train_ev, test_ev = _target_split(ds, cfg)
tgt_hist = clicked_history([e for e in ds.events if e.domain == TARGET], TARGET)
users = {u.id: u for u in ds.users}
tgt_ids = sorted(it.id for it in ds.items if it.domain == TARGET)
src_ids = sorted(it.id for it in ds.items if it.domain == SOURCE)
seeds = stage_seeds(cfg.world.seed)

logs = {}
def log_for(name):
    if name is None:
        return None
    if name not in logs:
        logs[name] = load_search_log(paths.search_log(name))
    return logs[name]

EPOCHS = 10
for run, variant, asi, log_name in CTR_RUNS:
    if run in ("gist_score", "gist_off"):
        continue
    log = log_for(log_name)
    train_samples = ctr.build_samples(train_ev, tgt_hist, log, cfg.ctr.target_history_cap)
    test_samples = ctr.build_samples(test_ev, tgt_hist, log, cfg.ctr.target_history_cap)
    model = ctr.create_ctr_model(
        cfg.ctr, len(ds.users), ds.meta.profile_vocab_sizes, tgt_ids, src_ids,
        seeds[f"ctr.{run}"], variant=variant, asi=asi,
    )
    train_inp = ctr.build_inputs(model, train_samples, users)
    test_inp = ctr.build_inputs(model, test_samples, users)
    labels = np.array([s.label for s in test_samples])
    rng = np.random.default_rng(seeds[f"ctr.{run}"] + 1)
    params = model.params()
    opt = nn.Adam(lr=cfg.ctr.lr)
    aucs = []
    n = len(train_inp.user)
    for ep in range(EPOCHS):
        order = rng.permutation(n)
        for start in range(0, n, cfg.ctr.batch):
            idx = order[start : start + cfg.ctr.batch]
            loss, grads = ctr._step(model, train_inp, idx)
            opt.step(params, grads)
        aucs.append(auc(labels, ctr.predict_ctr(model, test_inp)))
    print(f"{run:14s} " + " ".join(f"{a:.4f}" for a in aucs), flush=True)
