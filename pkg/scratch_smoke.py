"""Small-world end-to-end smoke run of the pipeline."""
import json
import shutil
import sys
import time

sys.path.insert(0, "src")
from dataclasses import replace

from gist.config import CbjtConfig, Config, CtrConfig, WorldConfig
from gist.pipeline import run_pipeline

cfg = Config(
    world=WorldConfig(
        users=300, source_items=100, target_items=50, categories=6,
        source_events_per_user_tick=12, target_events_per_user_tick=1,
        ticks=7, seed=3,
    ),
    cbjt=CbjtConfig(
        d_e=16, tower_hidden=16, content_epochs=25, content_batch=64,
        source_epochs=8, source_batch=128, source_history_cap=50,
        behavior_epochs=150, behavior_batch=128,
        union_epochs=30, union_batch=128,
    ),
    ctr=CtrConfig(epochs=3),
)
shutil.rmtree("/tmp/smoke", ignore_errors=True)
t0 = time.time()
path = run_pipeline(cfg, "/tmp/smoke")
print(f"pipeline done in {time.time()-t0:.0f}s")
doc = json.loads(path.read_text())
print(json.dumps(doc["metrics"], indent=1)[:2500])
