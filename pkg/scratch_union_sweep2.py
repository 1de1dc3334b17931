"""Behavior-overfit x union-decay sweep for fusion/recall margins."""
import json, os, time
import numpy as np
from dataclasses import replace
from gist import cbjt, nn
from gist.config import default_config
from gist.data import SOURCE, clicked_history, load_bundle
from gist.metrics import recall_at_k
from gist.pipeline import Paths, stage_seeds, _source_split, _split_pairs
from gist.simgen import gen_world

cfg = default_config()
c = cfg.cbjt
paths = Paths("/tmp/run_s7b")
seeds = stage_seeds(7)
ds = load_bundle(paths.dataset)
_, world = gen_world(replace(cfg.world, seed=7))
Z = world.z_items

def load_pairs_f(path):
    return [cbjt.EsuPair(**json.loads(l)) for l in open(path)]

all_esu = load_pairs_f(paths.cbjt / "pairs_esu.csv")          # theta >= 0.4 already
cooc = load_pairs_f(paths.cbjt / "pairs_cooc.csv")

ids, va, vb = cbjt.item_views(ds.items)
content = cbjt.TwoTowerEncoder.create("content", va.shape[1], c.tower_hidden, c.d_e, np.random.default_rng(0))
p = content.params()
for k, v in nn.load_params(paths.cbjt / "content").items():
    np.copyto(p[k], v)
ct = content.embed(va, vb)

CACHE = "/tmp/src_cache.npz"
if os.path.exists(CACHE):
    z = np.load(CACHE)
    qual_ids, id_targets = z["qual_ids"], z["id_targets"]
else:
    src_train, _ = _source_split(ds, cfg)
    t0 = time.time()
    source, _ = cbjt.train_source_model(src_train, ds.items, len(ds.users), c, seeds["source"])
    print("source retrained in", round(time.time() - t0, 1), "s", flush=True)
    qual_ids = np.asarray(source.qualifying_ids)
    id_targets = source.id_embeddings([int(i) for i in qual_ids])
    np.savez(CACHE, qual_ids=qual_ids, id_targets=id_targets)

by_id = {it.id: it for it in ds.items}
qual_items = [by_id[int(i)] for i in qual_ids]
_, qva, qvb = cbjt.item_views(qual_items)

def train_behavior(epochs, lr, seed):
    rng = np.random.default_rng(seed)
    enc = cbjt.TwoTowerEncoder.create("behavior", qva.shape[1], c.tower_hidden, c.d_e, rng)
    params = enc.params()
    opt = nn.Adam(lr=lr)
    for _ in range(epochs):
        order = rng.permutation(len(qva))
        for start in range(0, len(qva), c.behavior_batch):
            idx = order[start:start + c.behavior_batch]
            if len(idx) < 2:
                continue
            _, grads = cbjt.alignment_step(enc, qva[idx], qvb[idx], id_targets[idx])
            opt.step(params, grads)
            nn.clamp_log_tau(params, "behavior.log_tau")
    return enc

def train_union_wd(pairs, bh, mode, epochs, wd_cross, wd_gate, seed):
    usable = [p for p in pairs if p.target != p.best]
    rng = np.random.default_rng(seed)
    union = cbjt.UnionModel.create(ct.shape[1], rng, mode=mode)
    params = union.params()
    opt = nn.Adam(lr=c.union_lr)
    rows = cbjt.row_map(ids)
    t_rows = np.array([rows[p.target] for p in usable])
    b_rows = np.array([rows[p.best] for p in usable])
    for _ in range(epochs):
        order = rng.permutation(len(usable))
        for start in range(0, len(usable), c.union_batch):
            idx = order[start:start + c.union_batch]
            if len(idx) < 2:
                continue
            _, grads = cbjt.union_step(union, ct[t_rows[idx]], bh[t_rows[idx]],
                                       ct[b_rows[idx]], bh[b_rows[idx]])
            opt.step(params, grads)
            nn.clamp_log_tau(params, "union.log_tau")
            for name, arr in params.items():
                if name == "union.log_tau":
                    continue
                wd = wd_gate if ".gate_" in name else wd_cross
                if wd:
                    arr -= c.union_lr * wd * arr
    return union

rng = np.random.default_rng(5)
src = ids[ids < 5000]
qs, cands = rng.choice(src, 3000), rng.choice(src, 3000)
true_sim = np.einsum("ij,ij->i", Z[qs], Z[cands])
row = {int(i): r for r, i in enumerate(ids)}
qr = np.array([row[int(i)] for i in qs]); cr = np.array([row[int(i)] for i in cands])

def corr_of(vecs):
    cos = np.einsum("ij,ij->i", vecs[qr], vecs[cr])
    return float(np.corrcoef(cos, true_sim)[0, 1])

esu_train, esu_eval = _split_pairs(all_esu, c.pair_holdout_frac, seeds["pair_split"])
cooc_train, _ = _split_pairs(cooc, c.pair_holdout_frac, seeds["pair_split"])
eval_pairs = [(p.target, p.best) for p in esu_eval]

def rec(vecs, k):
    return recall_at_k(ids, vecs, eval_pairs, k)

RESULTS = open("/tmp/union_sweep2_results.jsonl", "a")
def emit(**kw):
    RESULTS.write(json.dumps(kw) + "\n"); RESULTS.flush()
    print("  ", kw, flush=True)

emit(tag="content", r1=rec(ct,1), r10=rec(ct,10), r100=rec(ct,100), corr=corr_of(ct),
     n_eval=len(eval_pairs))

# higher-threshold pair variant (candidate theta_pair=0.5)
esu05 = [p for p in all_esu if p.score >= 0.5]
esu05_train, esu05_eval = _split_pairs(esu05, c.pair_holdout_frac, seeds["pair_split"])
eval05 = [(p.target, p.best) for p in esu05_eval]
def rec05(vecs, k):
    return recall_at_k(ids, vecs, eval05, k)
emit(tag="content@t05", r1=rec05(ct,1), r10=rec05(ct,10), r100=rec05(ct,100),
     n_eval=len(eval05), n_train=len(esu05_train))

for b_label, b_epochs, b_lr in (("bh300", 300, 3e-3), ("bh600", 600, 3e-3), ("bh900", 900, 5e-3)):
    t0 = time.time()
    bh = train_behavior(b_epochs, b_lr, seeds["behavior"]).embed(va, vb)
    emit(tag=b_label, r1=rec(bh,1), r10=rec(bh,10), r100=rec(bh,100), corr=corr_of(bh),
         r1_t05=rec05(bh,1), secs=round(time.time()-t0,1))
    for u_label, ep, wdc, wdg in (("u150/0/0", 150, 0.0, 0.0),
                                  ("u150/0/3e-3", 150, 0.0, 3e-3),
                                  ("u100/1e-4/3e-3", 100, 1e-4, 3e-3),
                                  ("u60/3e-4/1e-2", 60, 3e-4, 1e-2)):
        for mode_label, pairs, mode in (("full", esu_train, "full"),
                                        ("no_gate", esu_train, "no_gate"),
                                        ("concat", esu_train, "concat"),
                                        ("cooc", cooc_train, "full")):
            t0 = time.time()
            u = train_union_wd(pairs, bh, mode, ep, wdc, wdg, seeds["union"])
            j = cbjt.fuse(u, ct, bh)
            emit(tag=f"{b_label} {u_label} {mode_label}", r1=rec(j,1), r10=rec(j,10),
                 r100=rec(j,100), corr=corr_of(j), secs=round(time.time()-t0,1))
    # theta=0.5 training probe for this behavior encoder (full mode only)
    for u_label, ep, wdc, wdg in (("u150/0/0", 150, 0.0, 0.0),
                                  ("u100/1e-4/3e-3", 100, 1e-4, 3e-3)):
        u = train_union_wd(esu05_train, bh, "full", ep, wdc, wdg, seeds["union"])
        j = cbjt.fuse(u, ct, bh)
        emit(tag=f"{b_label} {u_label} full@t05", r1=rec05(j,1), r10=rec05(j,10),
             r100=rec05(j,100), corr=corr_of(j))
