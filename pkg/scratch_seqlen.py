import json, numpy as np

lens = []
with open("/tmp/run_s7/search/log_joint.csv") as f:
    for line in f:
        lens.append(len(json.loads(line)["hits"]))
lens = np.array(lens)
print("impressions:", len(lens))
print("hit-count percentiles (k=100 clips):",
      np.percentile(lens, [5, 25, 50, 75, 95]).round(1), "mean", lens.mean().round(1))
print("share with full k=100:", (lens >= 100).mean().round(3))
print("share with <20:", (lens < 20).mean().round(3))
