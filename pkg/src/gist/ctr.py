"""Target-domain CTR models: DIN baseline, similarity-search variants, and
the full model with asymmetric similarity features.

Every variant shares the same non-sequence features (user, profile, target
item, target-domain history attention) so measured deltas isolate how the
searched source-domain sequence is used. The searched side enters only as
item ids and logged scores; source-side embeddings for those ids are learned
here, from scratch, in their own table.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .attention import attention_backward, attention_forward
from .config import CtrConfig
from .data import SearchLogRecord, TrainingSample, history_before
from .nn import Mlp, Params, sigmoid

VARIANTS = ("din", "sim_hard", "sim_soft_pool", "sim_soft_attn", "gist")
ASI_MODES = ("off", "score", "score+dist")

# matches Mlp bias entries like "top.b0"; plain ".b" would also catch "att_b.w0"
_BIAS_RE = re.compile(r"\.b\d+$")


# ---------------------------------------------------------------------------
# asymmetric similarity features
# ---------------------------------------------------------------------------

def asi_bin(scores, m1: int):
    """Uniform bins over [-1, 1], left-closed right-open, last bin closed."""
    s = np.clip(np.asarray(scores, dtype=np.float64), -1.0, 1.0)
    bins = np.floor((s + 1.0) / 2.0 * m1).astype(np.int64)
    return np.minimum(bins, m1 - 1)


def asi_histogram(scores, m2: int) -> np.ndarray:
    """Counts of scores per bin; sums to len(scores)."""
    if len(scores) == 0:
        return np.zeros(m2, dtype=np.int64)
    return np.bincount(asi_bin(scores, m2), minlength=m2)


def count_bucket(counts, n_buckets: int):
    """Log-scale count bucketization: 0, 1, 2-3, 4-7, ... capped."""
    c = np.asarray(counts, dtype=np.int64)
    out = np.zeros_like(c)
    pos = c > 0
    out[pos] = np.minimum(np.floor(np.log2(c[pos])).astype(np.int64) + 1, n_buckets - 1)
    return out


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

@dataclass
class CtrModel:
    variant: str
    asi: str
    user_emb: np.ndarray
    prof_embs: list[np.ndarray]
    tgt_emb: np.ndarray
    src_emb: np.ndarray
    asi_emb: np.ndarray | None
    hist_emb: np.ndarray | None   # (m2 * hist_buckets, hist_dim)
    att_b: Mlp
    att_s: Mlp | None
    top: Mlp
    tgt_row: dict[int, int]
    src_row: dict[int, int]
    m1: int
    m2: int
    hist_buckets: int

    @property
    def uses_hits(self) -> bool:
        return self.variant != "din"

    @property
    def attends_hits(self) -> bool:
        return self.variant in ("sim_hard", "sim_soft_attn", "gist")

    @property
    def side_dim(self) -> int:
        return 0 if self.asi_emb is None else self.asi_emb.shape[1]

    @property
    def has_histogram(self) -> bool:
        return self.hist_emb is not None

    def params(self) -> Params:
        p: Params = {
            "ctr.user": self.user_emb,
            "ctr.tgt_item": self.tgt_emb,
            "ctr.src_item": self.src_emb,
        }
        for f, emb in enumerate(self.prof_embs):
            p[f"ctr.prof{f}"] = emb
        if self.asi_emb is not None:
            p["ctr.asi"] = self.asi_emb
        if self.hist_emb is not None:
            p["ctr.hist"] = self.hist_emb
        p.update(self.att_b.param_items("ctr.att_b"))
        if self.att_s is not None:
            p.update(self.att_s.param_items("ctr.att_s"))
        p.update(self.top.param_items("ctr.top"))
        return p


def create_ctr_model(
    cfg: CtrConfig,
    n_users: int,
    profile_vocab_sizes: list[int],
    tgt_ids,
    src_ids,
    seed: int,
    variant: str | None = None,
    asi: str | None = None,
) -> CtrModel:
    variant = cfg.variant if variant is None else variant
    asi = cfg.asi if asi is None else asi
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if asi not in ASI_MODES:
        raise ValueError(f"unknown asi mode {asi!r}")
    rng = np.random.default_rng(seed)
    scale = 0.1
    d = cfg.item_dim
    with_side = variant == "gist" and asi != "off"
    with_hist = variant == "gist" and asi == "score+dist"
    asi_emb = rng.normal(0.0, scale, size=(cfg.m1, cfg.asi_dim)) if with_side else None
    hist_emb = (
        rng.normal(0.0, scale, size=(cfg.m2 * cfg.hist_buckets, cfg.hist_dim))
        if with_hist
        else None
    )
    att_b = Mlp.create([4 * d, cfg.att_hidden, 1], rng)
    att_s = None
    if variant in ("sim_hard", "sim_soft_attn", "gist"):
        side = cfg.asi_dim if with_side else 0
        att_s = Mlp.create([4 * d + side, cfg.att_hidden, 1], rng)
    top_in = cfg.user_dim + cfg.profile_dim * len(profile_vocab_sizes) + 2 * d
    if variant == "sim_soft_pool":
        top_in += d
    elif variant in ("sim_hard", "sim_soft_attn", "gist"):
        top_in += d + (cfg.asi_dim if with_side else 0)
    if with_hist:
        top_in += cfg.hist_dim
    top = Mlp.create([top_in] + list(cfg.top_hidden) + [1], rng)
    return CtrModel(
        variant=variant,
        asi=asi,
        user_emb=rng.normal(0.0, scale, size=(n_users, cfg.user_dim)),
        prof_embs=[
            rng.normal(0.0, scale, size=(v, cfg.profile_dim)) for v in profile_vocab_sizes
        ],
        tgt_emb=rng.normal(0.0, scale, size=(len(tgt_ids), d)),
        src_emb=rng.normal(0.0, scale, size=(len(src_ids), d)),
        asi_emb=asi_emb,
        hist_emb=hist_emb,
        att_b=att_b,
        att_s=att_s,
        top=top,
        tgt_row={int(i): r for r, i in enumerate(tgt_ids)},
        src_row={int(i): r for r, i in enumerate(src_ids)},
        m1=cfg.m1,
        m2=cfg.m2,
        hist_buckets=cfg.hist_buckets,
    )


# ---------------------------------------------------------------------------
# sample assembly
# ---------------------------------------------------------------------------

def build_samples(
    events,
    target_histories: dict[int, list[tuple[int, int]]],
    log_records: list[SearchLogRecord] | None,
    cap: int,
) -> list[TrainingSample]:
    """Join target-domain events with their search-log results.

    With a log, every event must have a record under (user, target,
    timestamp); missing ones are an error, not an empty result. Samples come
    back canonically ordered; a sample's id is its position in that order.
    """
    by_key = None
    if log_records is not None:
        by_key = {(r.user, r.target, r.timestamp): r.result for r in log_records}
    samples = []
    missing = []
    for e in events:
        result = None
        if by_key is not None:
            result = by_key.get((e.user, e.item, e.timestamp))
            if result is None:
                missing.append((e.user, e.item, e.timestamp))
                continue
        past = history_before(target_histories.get(e.user, []), e.timestamp, cap)
        samples.append(
            TrainingSample(
                user=e.user,
                target_item=e.item,
                target_history=past,
                search_result=result,
                label=e.label,
                timestamp=e.timestamp,
            )
        )
    if missing:
        raise KeyError(f"{len(missing)} events missing from search log, first: {missing[0]}")
    samples.sort(key=lambda s: (s.timestamp, s.user, s.target_item))
    return samples


@dataclass
class _Inputs:
    user: np.ndarray        # (N,)
    prof: np.ndarray        # (N, F)
    tgt: np.ndarray         # (N,) rows into tgt_emb
    hb: np.ndarray          # (N, Rb) rows into tgt_emb, -1 pad
    hb_mask: np.ndarray
    hit: np.ndarray         # (N, K) rows into src_emb, -1 pad
    hit_mask: np.ndarray
    score: np.ndarray       # (N, K) logged scores, 0 pad
    label: np.ndarray


def build_inputs(model: CtrModel, samples: list[TrainingSample], users) -> _Inputs:
    n = len(samples)
    prof_feats = np.array([users[s.user].profile_features for s in samples], dtype=np.int64)
    rb = max((len(s.target_history) for s in samples), default=0) or 1
    k = 1
    if model.uses_hits:
        k = max((len(s.search_result.hits) for s in samples), default=0) or 1
    user = np.empty(n, dtype=np.int64)
    tgt = np.empty(n, dtype=np.int64)
    label = np.empty(n, dtype=np.float64)
    hb = np.full((n, rb), -1, dtype=np.int64)
    hit = np.full((n, k), -1, dtype=np.int64)
    score = np.zeros((n, k), dtype=np.float64)
    for i, s in enumerate(samples):
        user[i] = s.user
        tgt[i] = model.tgt_row[s.target_item]
        label[i] = s.label
        for j, item in enumerate(s.target_history):
            hb[i, j] = model.tgt_row[item]
        if model.uses_hits:
            for j, (item, sc) in enumerate(s.search_result.hits):
                hit[i, j] = model.src_row[item]
                score[i, j] = sc
    return _Inputs(
        user=user,
        prof=prof_feats,
        tgt=tgt,
        hb=hb,
        hb_mask=hb >= 0,
        hit=hit,
        hit_mask=hit >= 0,
        score=score,
        label=label,
    )


def _trim(rows: np.ndarray, mask: np.ndarray, extra: np.ndarray | None = None):
    width = max(int(mask.sum(axis=1).max()), 1) if len(rows) else 1
    if extra is None:
        return rows[:, :width], mask[:, :width]
    return rows[:, :width], mask[:, :width], extra[:, :width]


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _forward(model: CtrModel, inp: _Inputs, idx: np.ndarray):
    cache: dict = {}
    u = model.user_emb[inp.user[idx]]
    profs = [emb[inp.prof[idx, f]] for f, emb in enumerate(model.prof_embs)]
    t = model.tgt_emb[inp.tgt[idx]]
    hb, mb = _trim(inp.hb[idx], inp.hb_mask[idx])
    xb = model.tgt_emb[np.where(hb >= 0, hb, 0)] * mb[:, :, None]
    pooled_b, _, cache["b"] = attention_forward(model.att_b, t, xb, mb)
    cache["hb"], cache["mb"] = hb, mb
    blocks = [u, *profs, t, pooled_b]
    if model.uses_hits:
        hit, ms, score = _trim(inp.hit[idx], inp.hit_mask[idx], inp.score[idx])
        xs = model.src_emb[np.where(hit >= 0, hit, 0)] * ms[:, :, None]
        cache["hit"], cache["ms"] = hit, ms
        if model.variant == "sim_soft_pool":
            cnt = ms.sum(axis=1)
            denom = np.maximum(cnt, 1)[:, None]
            pooled_s = xs.sum(axis=1) / denom
            cache["pool_denom"] = denom
        else:
            side = None
            if model.side_dim:
                bins = asi_bin(score, model.m1)
                side = model.asi_emb[bins] * ms[:, :, None]
                cache["bins"] = bins
            pooled_s, _, cache["s"] = attention_forward(model.att_s, t, xs, ms, side)
        blocks.append(pooled_s)
    if model.has_histogram:
        nb = model.hist_buckets
        counts = np.zeros((len(idx), model.m2), dtype=np.int64)
        bins2 = asi_bin(inp.score[idx], model.m2)
        rows_i = np.repeat(np.arange(len(idx)), inp.score.shape[1]).reshape(bins2.shape)
        np.add.at(counts, (rows_i[inp.hit_mask[idx]], bins2[inp.hit_mask[idx]]), 1)
        buckets = count_bucket(counts, nb)
        hist_rows = np.arange(model.m2)[None, :] * nb + buckets
        blocks.append(model.hist_emb[hist_rows].sum(axis=1))
        cache["hist_rows"] = hist_rows
    top_in = np.concatenate(blocks, axis=1)
    z, cache["top"] = model.top.forward(top_in)
    cache["widths"] = [b.shape[1] for b in blocks]
    return z[:, 0], cache


def _step(model: CtrModel, inp: _Inputs, idx: np.ndarray):
    z, cache = _forward(model, inp, idx)
    loss, dz = nn.bce_loss(z, inp.label[idx])
    d_top_in, top_grads = model.top.backward(cache["top"], dz[:, None])
    grads: Params = {}
    nn.accumulate(grads, model.top.grad_items("ctr.top", top_grads))

    parts = np.split(d_top_in, np.cumsum(cache["widths"])[:-1], axis=1)
    n_prof = len(model.prof_embs)
    du = parts[0]
    dprofs = parts[1 : 1 + n_prof]
    dt = parts[1 + n_prof].copy()
    d_pooled_b = parts[2 + n_prof]
    next_part = 3 + n_prof

    d_user = np.zeros_like(model.user_emb)
    np.add.at(d_user, inp.user[idx], du)
    grads["ctr.user"] = d_user
    for f, dp in enumerate(dprofs):
        g = np.zeros_like(model.prof_embs[f])
        np.add.at(g, inp.prof[idx, f], dp)
        grads[f"ctr.prof{f}"] = g

    d_tgt = np.zeros_like(model.tgt_emb)
    d_src = np.zeros_like(model.src_emb)

    dt_b, dxb, _, att_b_grads = attention_backward(model.att_b, cache["b"], d_pooled_b)
    dt += dt_b
    nn.accumulate(grads, model.att_b.grad_items("ctr.att_b", att_b_grads))
    hb, mb = cache["hb"], cache["mb"]
    np.add.at(d_tgt, hb[mb], dxb[mb])

    if model.uses_hits:
        d_pooled_s = parts[next_part]
        next_part += 1
        hit, ms = cache["hit"], cache["ms"]
        if model.variant == "sim_soft_pool":
            dxs = np.repeat(
                (d_pooled_s / cache["pool_denom"])[:, None, :], ms.shape[1], axis=1
            )
            np.add.at(d_src, hit[ms], dxs[ms])
        else:
            dt_s, dxs, d_side, att_s_grads = attention_backward(
                model.att_s, cache["s"], d_pooled_s
            )
            dt += dt_s
            nn.accumulate(grads, model.att_s.grad_items("ctr.att_s", att_s_grads))
            np.add.at(d_src, hit[ms], dxs[ms])
            if model.side_dim:
                d_asi = np.zeros_like(model.asi_emb)
                np.add.at(d_asi, cache["bins"][ms], d_side[ms])
                grads["ctr.asi"] = d_asi

    if model.has_histogram:
        d_hist_vec = parts[next_part]
        next_part += 1
        d_hist = np.zeros_like(model.hist_emb)
        hist_rows = cache["hist_rows"]
        np.add.at(
            d_hist,
            hist_rows.reshape(-1),
            np.repeat(d_hist_vec[:, None, :], model.m2, axis=1).reshape(
                -1, d_hist_vec.shape[1]
            ),
        )
        grads["ctr.hist"] = d_hist

    np.add.at(d_tgt, inp.tgt[idx], dt)
    grads["ctr.tgt_item"] = d_tgt
    grads["ctr.src_item"] = d_src
    return loss, grads


def predict_ctr(model: CtrModel, inp: _Inputs, batch: int = 4096) -> np.ndarray:
    out = np.empty(len(inp.user))
    for start in range(0, len(inp.user), batch):
        idx = np.arange(start, min(start + batch, len(inp.user)))
        z, _ = _forward(model, inp, idx)
        out[idx] = sigmoid(z)
    return out


def train_ctr(model: CtrModel, inp: _Inputs, cfg: CtrConfig, seed: int) -> list[float]:
    """Mini-batch Adam on mean binary cross-entropy; returns the loss curve.

    weight_decay is decoupled (applied after the Adam step) and skips biases;
    with thousands of from-scratch ID embeddings and only tens of thousands of
    impressions, undecayed rare-ID rows memorize their few appearances.
    """
    n = len(inp.user)
    if n == 0:
        raise ValueError("no training samples")
    pos = inp.label.sum()
    if pos == 0 or pos == n:
        warnings.warn("training labels are single-class", stacklevel=2)
    rng = np.random.default_rng(seed)
    params = model.params()
    decayed = [arr for name, arr in params.items() if not _BIAS_RE.search(name)]
    opt = nn.Adam(lr=cfg.lr)
    curve = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch):
            idx = order[start : start + cfg.batch]
            loss, grads = _step(model, inp, idx)
            opt.step(params, grads)
            if cfg.weight_decay:
                for arr in decayed:
                    arr -= cfg.lr * cfg.weight_decay * arr
            total += loss * len(idx)
        curve.append(total / n)
    return curve


# ---------------------------------------------------------------------------
# predictions export
# ---------------------------------------------------------------------------

def write_preds(path: str | Path, labels, scores) -> None:
    """sample_id,label,score rows; scores at fixed 9 decimals."""
    with open(path, "w") as fh:
        fh.write("sample_id,label,score\n")
        for i, (y, s) in enumerate(zip(labels, scores)):
            fh.write(f"{i},{int(y)},{s:.9f}\n")


def load_preds(path: str | Path):
    ids, labels, scores = [], [], []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "sample_id,label,score":
            raise ValueError(f"unexpected preds header: {header!r}")
        for line in fh:
            a, b, c = line.strip().split(",")
            ids.append(int(a))
            labels.append(int(b))
            scores.append(float(c))
    return np.array(ids), np.array(labels), np.array(scores, dtype=np.float64)
