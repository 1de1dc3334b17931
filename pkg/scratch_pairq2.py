import csv, json
import numpy as np
from dataclasses import replace
from gist.config import default_config
from gist.simgen import gen_world

cfg = default_config()
_, world = gen_world(replace(cfg.world, seed=7))
Z = world.z_items

def pair_stats(path, name):
    rows = [json.loads(line) for line in open(path)]
    t = np.array([r["target"] for r in rows])
    b = np.array([r["best"] for r in rows])
    s = np.array([r["score"] for r in rows])
    sims = np.einsum("ij,ij->i", Z[t], Z[b])
    q = np.quantile(s, [0, 0.25, 0.5, 0.75, 1.0])
    print(f"{name}: n={len(rows)} mean_zsim={sims.mean():.3f} score_range=[{q[0]:.2f},{q[-1]:.2f}]")
    for lo, hi in zip(q[:-1], q[1:]):
        m = (s >= lo) & (s <= hi)
        print(f"   score {lo:.2f}-{hi:.2f}: zsim={sims[m].mean():.3f}")

pair_stats("/tmp/run_s7b/cbjt/pairs_esu.csv", "esu")
pair_stats("/tmp/run_s7b/cbjt/pairs_cooc.csv", "cooc")
rng = np.random.default_rng(0)
a, b = rng.integers(0, 5000, 4000), rng.integers(0, 5000, 4000)
print("random pair zsim:", np.einsum("ij,ij->i", Z[a], Z[b]).mean().round(3))

def log_stats(path):
    zs, cors = [], []
    with open(path) as f:
        for line in f:
            rec = json.loads(line)
            if not rec["hits"]:
                continue
            ids = np.array([h for h, _ in rec["hits"]])
            sc = np.array([s for _, s in rec["hits"]])
            sim = Z[ids] @ Z[rec["target"]]
            zs.append(sim.mean())
            if len(ids) > 2 and sc.std() > 0 and sim.std() > 0:
                cors.append(np.corrcoef(sc, sim)[0, 1])
    print(f"{path.split('/')[-1]:22s} mean_hit_zsim={np.mean(zs):.4f} score_zsim_corr={np.mean(cors):.4f}")

for n in ["log_content", "log_joint", "log_joint_cooc", "log_hard"]:
    log_stats(f"/tmp/run_s7b/search/{n}.csv")
