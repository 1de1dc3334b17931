"""Union epoch sweep on cached encoders: recall, calibration, gate ablation."""
import json
import numpy as np
from dataclasses import replace
from gist import cbjt, nn
from gist.config import default_config
from gist.data import load_bundle
from gist.metrics import recall_at_k
from gist.pipeline import Paths, stage_seeds
from gist.simgen import gen_world

cfg = default_config()
c = cfg.cbjt
paths = Paths("/tmp/run_s7b")
seeds = stage_seeds(7)
ds = load_bundle(paths.dataset)
_, world = gen_world(replace(cfg.world, seed=7))
Z = world.z_items

def load_pairs(path):
    return [cbjt.EsuPair(**json.loads(l)) for l in open(path)]

esu_train = load_pairs(paths.cbjt / "pairs_esu_train.csv")
esu_eval = load_pairs(paths.cbjt / "pairs_esu_eval.csv")
cooc_train = load_pairs(paths.cbjt / "pairs_cooc.csv")[: len(esu_train)]
eval_pairs = [(p.target, p.best) for p in esu_eval]

ids, va, vb = cbjt.item_views(ds.items)
content = cbjt.TwoTowerEncoder.create("content", va.shape[1], c.tower_hidden, c.d_e, np.random.default_rng(0))
behavior = cbjt.TwoTowerEncoder.create("behavior", va.shape[1], c.tower_hidden, c.d_e, np.random.default_rng(0))
for enc, name in ((content, "content"), (behavior, "behavior")):
    stored = nn.load_params(paths.cbjt / name)
    p = enc.params()
    for k, v in stored.items():
        np.copyto(p[k], v)
ct = content.embed(va, vb)
bh = behavior.embed(va, vb)

# calibration probe: random (source query, source candidate) crosses
rng = np.random.default_rng(5)
src = ids[ids < 5000]
qs = rng.choice(src, 3000)
cands = rng.choice(src, 3000)
true_sim = np.einsum("ij,ij->i", Z[qs], Z[cands])
row = {int(i): r for r, i in enumerate(ids)}
qr = np.array([row[int(i)] for i in qs]); cr = np.array([row[int(i)] for i in cands])

def probe(union):
    joint = cbjt.fuse(union, ct, bh)
    rec = {k: recall_at_k(ids, joint, eval_pairs, k) for k in (1, 10, 100)}
    cos = np.einsum("ij,ij->i", joint[qr], joint[cr])
    corr = np.corrcoef(cos, true_sim)[0, 1]
    return rec, corr

for epochs in (30, 60, 100, 150):
    out = {}
    for label, pairs, mode in (("full", esu_train, "full"), ("no_gate", esu_train, "no_gate"),
                               ("concat", esu_train, "concat"), ("cooc", cooc_train, "full")):
        union, curve = cbjt.train_union_model(pairs, ids, ct, bh, c, seeds["union"],
                                              mode=mode, epochs=epochs)
        rec, corr = probe(union)
        out[label] = (rec, corr, curve[-1])
    print(f"epochs={epochs}")
    for label, (rec, corr, fl) in out.items():
        print(f"  {label:8s} r@1={rec[1]:.4f} r@10={rec[10]:.4f} r@100={rec[100]:.4f} "
              f"corr={corr:.3f} loss={fl:.3f}", flush=True)
