"""CTR weight-decay x epochs sweep on fixed logs (criterion-1 margins)."""
import numpy as np
from gist import ctr, nn
from gist.config import default_config
from gist.data import TARGET, clicked_history, load_bundle
from gist.metrics import auc
from gist.pipeline import Paths, stage_seeds, _target_split
from gist.search import load_search_log

cfg = default_config()
paths = Paths("/tmp/run_s7b")
ds = load_bundle(paths.dataset)
train_ev, test_ev = _target_split(ds, cfg)
tgt_hist = clicked_history([e for e in ds.events if e.domain == TARGET], TARGET)
users = {u.id: u for u in ds.users}
tgt_ids = sorted(it.id for it in ds.items if it.domain == TARGET)
src_ids = sorted(it.id for it in ds.items if it.domain == SOURCE) if False else sorted(
    it.id for it in ds.items if it.domain != TARGET)
seeds = stage_seeds(7)

RUNS = [("din", "din", "off", None), ("sim_hard", "sim_hard", "off", "hard"),
        ("sim_soft_pool", "sim_soft_pool", "off", "content"),
        ("sim_soft_attn", "sim_soft_attn", "off", "content")]

logs = {}
def log_for(name):
    if name is None:
        return None
    if name not in logs:
        logs[name] = load_search_log(paths.search_log(name))
    return logs[name]

def decays(name):
    return ".b" not in name  # embeddings and MLP weights decay; biases do not

EPOCHS = 6
for wd in (0.0, 3e-3, 1e-2, 3e-2):
    print(f"weight_decay={wd}")
    for run, variant, asi, log_name in RUNS:
        log = log_for(log_name)
        tr = ctr.build_samples(train_ev, tgt_hist, log, cfg.ctr.target_history_cap)
        te = ctr.build_samples(test_ev, tgt_hist, log, cfg.ctr.target_history_cap)
        model = ctr.create_ctr_model(cfg.ctr, len(ds.users), ds.meta.profile_vocab_sizes,
                                     tgt_ids, src_ids, seeds[f"ctr.{run}"],
                                     variant=variant, asi=asi)
        tri = ctr.build_inputs(model, tr, users)
        tei = ctr.build_inputs(model, te, users)
        labels = np.array([s.label for s in te])
        rng = np.random.default_rng(seeds[f"ctr.{run}"] + 1)
        params = model.params()
        opt = nn.Adam(lr=cfg.ctr.lr)
        n = len(tri.user)
        aucs = []
        for ep in range(EPOCHS):
            order = rng.permutation(n)
            for start in range(0, n, cfg.ctr.batch):
                idx = order[start:start + cfg.ctr.batch]
                _, grads = ctr._step(model, tri, idx)
                opt.step(params, grads)
                if wd:
                    for name, arr in params.items():
                        if decays(name):
                            arr -= cfg.ctr.lr * wd * arr
            aucs.append(auc(labels, ctr.predict_ctr(model, tei)))
        print(f"  {run:14s} " + " ".join(f"{a:.4f}" for a in aucs), flush=True)
