import json, numpy as np
from dataclasses import replace
from gist.config import default_config
from gist.simgen import gen_world

cfg = default_config()
_, world = gen_world(replace(cfg.world, seed=7))
Z = world.z_items

def log_stats(path):
    zs, cors, nh, n = [], [], [], 0
    with open(path) as f:
        for line in f:
            rec = json.loads(line)
            n += 1
            if not rec["hits"]:
                continue
            ids = np.array([h for h, _ in rec["hits"]])
            sc = np.array([s for _, s in rec["hits"]])
            sim = Z[ids] @ Z[rec["target"]]
            zs.append(sim.mean())
            nh.append(len(ids))
            if len(ids) > 2 and sc.std() > 0 and sim.std() > 0:
                cors.append(np.corrcoef(sc, sim)[0, 1])
    print(f"{path.split('/')[-1]:24s} imps={n} mean_hit_zsim={np.mean(zs):.4f} "
          f"score_zsim_corr={np.mean(cors):.4f} mean_hits={np.mean(nh):.1f}")

for name in ["log_content", "log_joint", "log_joint_cooc", "log_hard"]:
    log_stats(f"/tmp/run_s7/search/{name}.csv")
