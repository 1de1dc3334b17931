"""Seed scan for CTR grad checks across variants."""
import sys
sys.path.insert(0, "src")

import numpy as np

from gist import ctr, nn
from gist.config import CtrConfig
from gist.data import SearchResult, TrainingSample, UserRecord


CFG = CtrConfig(
    item_dim=4, user_dim=3, profile_dim=2, asi_dim=3, hist_dim=4,
    att_hidden=5, top_hidden=[6], m1=6, m2=3, hist_buckets=3,
    epochs=1, batch=4, lr=1e-2, target_history_cap=8,
)
VOCAB = [3, 2]
TGT = [100, 101, 102, 103]
SRC = list(range(10))


def toy_samples(rng):
    users = {i: UserRecord(id=i, profile_features=[int(rng.integers(3)), int(rng.integers(2))]) for i in range(5)}
    samples = []
    for i in range(6):
        n_h = int(rng.integers(0, 5))
        n_k = int(rng.integers(1, 6)) if i != 3 else 0
        hits = [
            (int(rng.choice(SRC)), float(rng.uniform(-1, 1))) for _ in range(n_k)
        ]
        # dedup hit ids to mimic real results
        seen, ded = set(), []
        for item, s in hits:
            if item not in seen:
                seen.add(item)
                ded.append((item, s))
        samples.append(
            TrainingSample(
                user=int(rng.integers(5)),
                target_item=int(rng.choice(TGT)),
                target_history=[int(rng.choice(TGT)) for _ in range(n_h)],
                search_result=SearchResult(target=0, hits=ded),
                label=int(rng.integers(2)),
                timestamp=i,
            )
        )
    return users, samples


def make(variant, asi, seed):
    rng = np.random.default_rng(seed)
    users, samples = toy_samples(rng)
    model = ctr.create_ctr_model(CFG, 5, VOCAB, TGT, SRC, seed, variant=variant, asi=asi)
    inp = ctr.build_inputs(model, samples, users)
    return (lambda: ctr._step(model, inp, np.arange(len(samples)))), model.params()


for variant, asi in [("gist", "score+dist"), ("gist", "score"), ("sim_soft_attn", "off"),
                     ("sim_soft_pool", "off"), ("sim_hard", "off"), ("din", "off")]:
    rows = []
    for s in range(10):
        loss_fn, params = make(variant, asi, s)
        err = nn.grad_check(loss_fn, params)
        rows.append((err, s))
    rows.sort()
    print(f"{variant}/{asi}: best {[(f'{e:.2e}', s) for e, s in rows[:3]]}", flush=True)
