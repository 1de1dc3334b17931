"""Pair-quality diagnostic: true latent similarity of mined pairs."""
import sys
sys.path.insert(0, "src")
import numpy as np

from gist.cbjt import load_pairs
from gist.config import default_config
from gist.simgen import gen_world

cfg = default_config()
_, world = gen_world(cfg.world)  # same seed as the run
z = world.z_items

for name in ("pairs_esu", "pairs_cooc"):
    pairs = load_pairs(f"/tmp/run_s7/cbjt/{name}.csv")
    t = np.array([p.target for p in pairs])
    b = np.array([p.best for p in pairs])
    s = np.array([p.score for p in pairs])
    sims = np.einsum("ij,ij->i", z[t], z[b])
    print(f"{name}: n={len(pairs)} mean_zsim={sims.mean():.3f}")
    qs = np.quantile(s, [0, 0.25, 0.5, 0.75, 1.0])
    for lo, hi in zip(qs[:-1], qs[1:]):
        m = (s >= lo) & (s <= hi)
        print(f"  score [{lo:.2f},{hi:.2f}]: n={m.sum():5d} zsim={sims[m].mean():.3f}")

rng = np.random.default_rng(0)
i = rng.integers(0, cfg.world.source_items, 20000)
j = rng.integers(0, cfg.world.source_items, 20000)
keep = i != j
print(f"random source pairs zsim={np.einsum('ij,ij->i', z[i[keep]], z[j[keep]]).mean():.3f}")

# same-category baseline: what hard search effectively exploits
cats = world.categories if hasattr(world, 'categories') else None
print("cat attr:", [a for a in dir(world) if not a.startswith('_')])
