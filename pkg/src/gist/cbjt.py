"""Content-behavior joint training.

Four training stages produce the joint item representations:

1. content encoder: two MLP towers contrast an item's two content views
   against each other in-batch, yielding ct_i.
2. source reference model: a click model (ID embeddings + history attention)
   on source-domain events; its ID embedding rows for the high-interaction
   ("qualifying") items become alignment targets id_i, and its attention
   weights over a user's recent history are mined for guidance pairs.
3. behavior encoder: an architectural copy of the content encoder, aligned
   contrastively to id_i over qualifying items, yielding bh_i for every item
   including cold ones.
4. union model: gated outer-product fusion of (ct_i, bh_i) into u_i, trained
   contrastively on the mined pairs with both encoders frozen.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .attention import attention_backward, attention_forward
from .config import CbjtConfig
from .data import SOURCE, ItemRecord, history_before, tick_of
from .nn import Mlp, Params, sigmoid


def row_map(ids) -> dict[int, int]:
    return {int(item_id): row for row, item_id in enumerate(ids)}


# ---------------------------------------------------------------------------
# two-tower view encoder (content encoder; behavior encoder is a fresh copy)
# ---------------------------------------------------------------------------

@dataclass
class TwoTowerEncoder:
    prefix: str
    tower_a: Mlp
    tower_b: Mlp
    log_tau: np.ndarray  # 0-d, learned in log space

    @classmethod
    def create(cls, prefix: str, d_c: int, hidden: int, d_e: int, rng) -> "TwoTowerEncoder":
        return cls(
            prefix=prefix,
            tower_a=Mlp.create([d_c, hidden, d_e], rng),
            tower_b=Mlp.create([d_c, hidden, d_e], rng),
            log_tau=np.array(np.log(nn.INIT_TAU)),
        )

    def params(self) -> Params:
        p = dict(self.tower_a.param_items(f"{self.prefix}.a"))
        p.update(self.tower_b.param_items(f"{self.prefix}.b"))
        p[f"{self.prefix}.log_tau"] = self.log_tau
        return p

    def embed(self, views_a: np.ndarray, views_b: np.ndarray) -> np.ndarray:
        """Unit-norm mean of the two tower outputs."""
        ya, _ = self.tower_a.forward(views_a)
        yb, _ = self.tower_b.forward(views_b)
        return nn.l2_normalize_rows(0.5 * (ya + yb))


def item_views(items: list[ItemRecord]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ids = np.array([it.id for it in items], dtype=np.int64)
    va = np.stack([it.view_a for it in items])
    vb = np.stack([it.view_b for it in items])
    return ids, va, vb


def contrastive_step(enc: TwoTowerEncoder, va: np.ndarray, vb: np.ndarray):
    """One content-encoder loss evaluation: views of the same item are the
    positive pair, other batch rows are negatives. Returns (loss, grads)."""
    ya, ca = enc.tower_a.forward(va)
    yb, cb = enc.tower_b.forward(vb)
    loss, dya, dyb, dlt = nn.info_nce(ya, yb, float(enc.log_tau))
    grads: Params = {}
    _, ga = enc.tower_a.backward(ca, dya)
    _, gb = enc.tower_b.backward(cb, dyb)
    nn.accumulate(grads, enc.tower_a.grad_items(f"{enc.prefix}.a", ga))
    nn.accumulate(grads, enc.tower_b.grad_items(f"{enc.prefix}.b", gb))
    grads[f"{enc.prefix}.log_tau"] = np.array(dlt)
    return loss, grads


def alignment_step(enc: TwoTowerEncoder, va, vb, id_targets: np.ndarray):
    """Behavior-alignment loss: encoder output vs frozen ID embedding rows."""
    ya, ca = enc.tower_a.forward(va)
    yb, cb = enc.tower_b.forward(vb)
    mean = 0.5 * (ya + yb)
    loss, d_mean, _d_ids, dlt = nn.info_nce(mean, id_targets, float(enc.log_tau))
    grads: Params = {}
    _, ga = enc.tower_a.backward(ca, 0.5 * d_mean)
    _, gb = enc.tower_b.backward(cb, 0.5 * d_mean)
    nn.accumulate(grads, enc.tower_a.grad_items(f"{enc.prefix}.a", ga))
    nn.accumulate(grads, enc.tower_b.grad_items(f"{enc.prefix}.b", gb))
    grads[f"{enc.prefix}.log_tau"] = np.array(dlt)
    return loss, grads


def _epoch_batches(n: int, batch: int, rng) -> list[np.ndarray]:
    order = rng.permutation(n)
    out = []
    for start in range(0, n, batch):
        idx = order[start : start + batch]
        if len(idx) >= 2:
            out.append(idx)
    return out


def train_content_encoder(
    items: list[ItemRecord], cfg: CbjtConfig, seed: int
) -> tuple[TwoTowerEncoder, list[float]]:
    if cfg.content_batch < 2:
        raise ValueError("contrastive training needs batches of at least 2")
    rng = np.random.default_rng(seed)
    _, va, vb = item_views(items)
    enc = TwoTowerEncoder.create("content", va.shape[1], cfg.tower_hidden, cfg.d_e, rng)
    params = enc.params()
    opt = nn.Adam(lr=cfg.content_lr)
    curve = []
    for _ in range(cfg.content_epochs):
        total, count = 0.0, 0
        for idx in _epoch_batches(len(va), cfg.content_batch, rng):
            loss, grads = contrastive_step(enc, va[idx], vb[idx])
            opt.step(params, grads)
            nn.clamp_log_tau(params, "content.log_tau")
            total += loss * len(idx)
            count += len(idx)
        curve.append(total / max(count, 1))
    return enc, curve


# ---------------------------------------------------------------------------
# source-domain reference model
# ---------------------------------------------------------------------------

@dataclass
class SourceModel:
    item_emb: np.ndarray        # (n_source_items, d_e), row order = sorted source ids
    user_emb: np.ndarray        # (n_users, d_e)
    att: Mlp
    top: Mlp
    item_ids: np.ndarray        # row -> item id
    row_of: dict[int, int]      # item id -> row
    qualifying_ids: np.ndarray  # top-fraction source items by interaction_count

    def params(self) -> Params:
        p = {"src.item_emb": self.item_emb, "src.user_emb": self.user_emb}
        p.update(self.att.param_items("src.att"))
        p.update(self.top.param_items("src.top"))
        return p

    def id_embeddings(self, item_ids) -> np.ndarray:
        rows = np.array([self.row_of[int(i)] for i in item_ids])
        return self.item_emb[rows]


@dataclass
class _Block:
    user: np.ndarray   # (N,)
    item: np.ndarray   # (N,) rows into item_emb
    hist: np.ndarray   # (N, R) rows, -1 pad
    mask: np.ndarray   # (N, R) bool
    label: np.ndarray  # (N,)
    tick: np.ndarray   # (N,)


def _build_block(events, histories, row_of, cap: int, keep_empty: bool = True) -> _Block:
    n = len(events)
    user = np.empty(n, dtype=np.int64)
    item = np.empty(n, dtype=np.int64)
    label = np.empty(n, dtype=np.float64)
    tick = np.empty(n, dtype=np.int64)
    hist = np.full((n, cap), -1, dtype=np.int64)
    for i, e in enumerate(events):
        user[i] = e.user
        item[i] = row_of[e.item]
        label[i] = e.label
        tick[i] = tick_of(e.timestamp)
        past = history_before(histories.get(e.user, []), e.timestamp, cap)
        for j, it in enumerate(past):
            hist[i, j] = row_of[it]
    mask = hist >= 0
    if not keep_empty:
        keep = mask.any(axis=1)
        return _Block(user[keep], item[keep], hist[keep], mask[keep], label[keep], tick[keep])
    return _Block(user, item, hist, mask, label, tick)


def _source_forward(model: SourceModel, blk: _Block, idx: np.ndarray):
    hist = blk.hist[idx]
    mask = blk.mask[idx]
    width = max(int(mask.sum(axis=1).max()), 1) if len(idx) else 1
    hist, mask = hist[:, :width], mask[:, :width]
    t = model.item_emb[blk.item[idx]]
    h = model.item_emb[np.where(hist >= 0, hist, 0)] * mask[:, :, None]
    pooled, weights, acache = attention_forward(model.att, t, h, mask)
    u = model.user_emb[blk.user[idx]]
    top_in = np.concatenate([u, t, pooled], axis=1)
    z, tcache = model.top.forward(top_in)
    return z[:, 0], weights, (t, h, hist, mask, pooled, acache, top_in, tcache)


def _source_step(model: SourceModel, blk: _Block, idx: np.ndarray):
    d_e = model.item_emb.shape[1]
    z, _, cache = _source_forward(model, blk, idx)
    _, h, hist, mask, _, acache, _, tcache = cache
    loss, dz = nn.bce_loss(z, blk.label[idx])
    d_top_in, top_grads = model.top.backward(tcache, dz[:, None])
    du = d_top_in[:, :d_e]
    dt = d_top_in[:, d_e : 2 * d_e].copy()
    d_pooled = d_top_in[:, 2 * d_e :]
    dt_att, dh, _, att_grads = attention_backward(model.att, acache, d_pooled)
    dt += dt_att
    d_item = np.zeros_like(model.item_emb)
    np.add.at(d_item, blk.item[idx], dt)
    np.add.at(d_item, hist[mask], dh[mask])
    d_user = np.zeros_like(model.user_emb)
    np.add.at(d_user, blk.user[idx], du)
    grads: Params = {"src.item_emb": d_item, "src.user_emb": d_user}
    nn.accumulate(grads, model.att.grad_items("src.att", att_grads))
    nn.accumulate(grads, model.top.grad_items("src.top", top_grads))
    return loss, grads


def _subsample(n: int, cap: int, rng) -> np.ndarray:
    if n <= cap:
        return np.arange(n)
    return np.sort(rng.choice(n, size=cap, replace=False))


def train_source_model(
    events, items: list[ItemRecord], n_users: int, cfg: CbjtConfig, seed: int
) -> tuple[SourceModel, list[float]]:
    """Train the source-domain click model on source events.

    `events` must be source-domain only and in time order per user; histories
    are the user's source clicks strictly before each event.
    """
    rng = np.random.default_rng(seed)
    source_items = sorted((it for it in items if it.domain == SOURCE), key=lambda it: it.id)
    ids = np.array([it.id for it in source_items], dtype=np.int64)
    row_of = row_map(ids)
    n_qualify = max(1, int(len(source_items) * cfg.qualify_top_frac))
    by_count = sorted(source_items, key=lambda it: (-it.interaction_count, it.id))
    qualifying = np.array(sorted(it.id for it in by_count[:n_qualify]), dtype=np.int64)

    d_e = cfg.d_e
    scale = 0.1
    model = SourceModel(
        item_emb=rng.normal(0.0, scale, size=(len(ids), d_e)),
        user_emb=rng.normal(0.0, scale, size=(n_users, d_e)),
        att=Mlp.create([4 * d_e, 32, 1], rng),
        top=Mlp.create([3 * d_e, 64, 32, 1], rng),
        item_ids=ids,
        row_of=row_of,
        qualifying_ids=qualifying,
    )

    from .data import clicked_history

    histories = clicked_history(events, SOURCE)
    keep = _subsample(len(events), cfg.source_max_events, rng)
    blk = _build_block([events[i] for i in keep], histories, row_of, cfg.source_history_cap)

    params = model.params()
    opt = nn.Adam(lr=cfg.source_lr)
    curve = []
    n = len(blk.user)
    for _ in range(cfg.source_epochs):
        total = 0.0
        order = rng.permutation(n)
        for start in range(0, n, cfg.source_batch):
            idx = order[start : start + cfg.source_batch]
            loss, grads = _source_step(model, blk, idx)
            opt.step(params, grads)
            total += loss * len(idx)
        curve.append(total / n)
    return model, curve


def predict_source(model: SourceModel, events, histories, cap: int) -> np.ndarray:
    """Click scores for source events; histories as from data.clicked_history."""
    blk = _build_block(events, histories, model.row_of, cap)
    out = np.empty(len(events))
    for start in range(0, len(events), 4096):
        idx = np.arange(start, min(start + 4096, len(events)))
        z, _, _ = _source_forward(model, blk, idx)
        out[idx] = sigmoid(z)
    return out


# ---------------------------------------------------------------------------
# guidance-pair distillation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EsuPair:
    target: int
    best: int
    score: float


@dataclass
class DistillResult:
    pairs: list[EsuPair]
    mean_max_by_tick: dict[int, float]
    n_impressions: int


def select_pair(item_ids: np.ndarray, weights: np.ndarray, theta: float):
    """Pick the max-attention history item; ties go to the lowest item id.

    Returns (item id, score) or None when the max is below theta or the
    history is empty.
    """
    if len(item_ids) == 0:
        return None
    top = float(np.max(weights))
    if top < theta:
        return None
    best = int(np.min(item_ids[weights == top]))
    return best, top


def distill_esu_pairs(
    model: SourceModel, events, histories, theta: float, cfg: CbjtConfig, seed: int
) -> DistillResult:
    """Mine (impression item, argmax-attention history item) pairs.

    Attention weights are the model's softmax weights over the user's recent
    history, so scores live on the probability simplex and the absolute
    threshold is meaningful. Impressions with fewer than distill_min_history
    items contribute to the per-tick attention curve but never to pairs: a
    softmax over two items clears any threshold without carrying signal.
    Pairs are deduplicated by (target, best) keeping the highest score;
    output order is canonical, so the result is invariant to impression
    processing order.
    """
    rng = np.random.default_rng(seed)
    keep = _subsample(len(events), cfg.distill_max_impressions, rng)
    sub = [events[i] for i in keep]
    # canonical processing order: batch membership changes matmul shapes, and
    # with them the last bits of the scores
    sub.sort(key=lambda e: (e.timestamp, e.user, e.item))
    blk = _build_block(
        sub, histories, model.row_of, cfg.source_history_cap, keep_empty=False,
    )
    n = len(blk.user)
    best_score: dict[tuple[int, int], float] = {}
    tick_sum: dict[int, float] = {}
    tick_cnt: dict[int, int] = {}
    huge = np.iinfo(np.int64).max
    for start in range(0, n, 2048):
        idx = np.arange(start, min(start + 2048, n))
        _, weights, cache = _source_forward(model, blk, idx)
        _, _, hist, mask, _, _, _, _ = cache
        top = weights.max(axis=1)
        n_hist = mask.sum(axis=1)
        ids_at = np.where(mask, model.item_ids[np.where(hist >= 0, hist, 0)], huge)
        at_max = np.where((weights == top[:, None]) & mask, ids_at, huge)
        best_ids = at_max.min(axis=1)
        targets = model.item_ids[blk.item[idx]]
        ticks = blk.tick[idx]
        for row in range(len(idx)):
            t = int(ticks[row])
            tick_sum[t] = tick_sum.get(t, 0.0) + float(top[row])
            tick_cnt[t] = tick_cnt.get(t, 0) + 1
            if top[row] >= theta and n_hist[row] >= cfg.distill_min_history:
                key = (int(targets[row]), int(best_ids[row]))
                if best_score.get(key, -1.0) < top[row]:
                    best_score[key] = float(top[row])
    pairs = [EsuPair(t, b, s) for (t, b), s in sorted(best_score.items())]
    by_tick = {t: tick_sum[t] / tick_cnt[t] for t in sorted(tick_sum)}
    return DistillResult(pairs=pairs, mean_max_by_tick=by_tick, n_impressions=n)


def save_pairs(path: str | Path, pairs: list[EsuPair]) -> None:
    with open(path, "w") as fh:
        for p in pairs:
            fh.write(json.dumps({"target": p.target, "best": p.best, "score": p.score}) + "\n")


def load_pairs(path: str | Path) -> list[EsuPair]:
    out = []
    with open(path) as fh:
        for line in fh:
            r = json.loads(line)
            out.append(EsuPair(r["target"], r["best"], r["score"]))
    return out


def cooc_pairs(events, window: int, n_pairs: int) -> list[EsuPair]:
    """Co-occurrence guidance pairs: items clicked near each other in source
    sequences, ranked by count. A stand-in mined signal to compare against
    attention-distilled pairs."""
    from .data import clicked_history

    counts: dict[tuple[int, int], int] = {}
    for _, seq in sorted(clicked_history(events, SOURCE).items()):
        items_only = [item for _, item in seq]
        for i, a in enumerate(items_only):
            for b in items_only[i + 1 : i + 1 + window]:
                if a == b:
                    continue
                key = (a, b) if a < b else (b, a)
                counts[key] = counts.get(key, 0) + 1
    if not counts:
        return []
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:n_pairs]
    top = ranked[0][1]
    return [EsuPair(a, b, c / top) for (a, b), c in ranked]


# ---------------------------------------------------------------------------
# behavior encoder
# ---------------------------------------------------------------------------

def train_behavior_encoder(
    items: list[ItemRecord], source_model: SourceModel, cfg: CbjtConfig, seed: int
) -> tuple[TwoTowerEncoder, list[float]]:
    if len(source_model.qualifying_ids) == 0:
        raise ValueError("no qualifying items to align against")
    rng = np.random.default_rng(seed)
    by_id = {it.id: it for it in items}
    qualifying = [by_id[int(i)] for i in source_model.qualifying_ids]
    _, va, vb = item_views(qualifying)
    id_targets = source_model.id_embeddings([it.id for it in qualifying]).copy()

    enc = TwoTowerEncoder.create("behavior", va.shape[1], cfg.tower_hidden, cfg.d_e, rng)
    params = enc.params()
    opt = nn.Adam(lr=cfg.behavior_lr)
    curve = []
    for _ in range(cfg.behavior_epochs):
        total, count = 0.0, 0
        for idx in _epoch_batches(len(va), cfg.behavior_batch, rng):
            loss, grads = alignment_step(enc, va[idx], vb[idx], id_targets[idx])
            opt.step(params, grads)
            nn.clamp_log_tau(params, "behavior.log_tau")
            total += loss * len(idx)
            count += len(idx)
        curve.append(total / max(count, 1))
    return enc, curve


# ---------------------------------------------------------------------------
# union model
# ---------------------------------------------------------------------------

UNION_MODES = ("full", "no_gate", "concat")


@dataclass
class UnionModel:
    mode: str
    gate_ct: Mlp | None
    gate_bh: Mlp | None
    cross: Mlp
    log_tau: np.ndarray

    @classmethod
    def create(cls, d_e: int, rng, mode: str = "full") -> "UnionModel":
        if mode not in UNION_MODES:
            raise ValueError(f"unknown union mode {mode!r}")
        gate_ct = gate_bh = None
        if mode != "no_gate":
            gate_ct = Mlp.create([d_e, d_e], rng)
            gate_bh = Mlp.create([d_e, d_e], rng)
        cross_in = 2 * d_e if mode == "concat" else d_e * d_e
        cross = Mlp.create([cross_in, d_e], rng)
        return cls(mode, gate_ct, gate_bh, cross, np.array(np.log(nn.INIT_TAU)))

    def params(self) -> Params:
        p: Params = {}
        if self.gate_ct is not None:
            p.update(self.gate_ct.param_items("union.gate_ct"))
            p.update(self.gate_bh.param_items("union.gate_bh"))
        p.update(self.cross.param_items("union.cross"))
        p["union.log_tau"] = self.log_tau
        return p


def gate_vectors(union: UnionModel, ct: np.ndarray, bh: np.ndarray):
    """The gated inputs (ĉt, b̂h) before crossing; gates are 2*sigmoid scaled
    so a zero gate output is exactly the identity."""
    if union.mode == "no_gate":
        return ct, bh
    g_c, _ = union.gate_ct.forward(ct)
    g_b, _ = union.gate_bh.forward(bh)
    return 2.0 * sigmoid(g_c) * ct, 2.0 * sigmoid(g_b) * bh


def fuse_forward(union: UnionModel, ct: np.ndarray, bh: np.ndarray):
    """Unnormalized joint representation plus backward cache."""
    caches = {}
    if union.mode == "no_gate":
        chat, bhat = ct, bh
    else:
        g_c, caches["gc"] = union.gate_ct.forward(ct)
        g_b, caches["gb"] = union.gate_bh.forward(bh)
        caches["sc"] = 2.0 * sigmoid(g_c)
        caches["sb"] = 2.0 * sigmoid(g_b)
        chat = caches["sc"] * ct
        bhat = caches["sb"] * bh
    if union.mode == "concat":
        x = np.concatenate([chat, bhat], axis=1)
    else:
        x = (chat[:, :, None] * bhat[:, None, :]).reshape(len(ct), -1)
    y, caches["cross"] = union.cross.forward(x)
    caches["ct"], caches["bh"] = ct, bh
    caches["chat"], caches["bhat"] = chat, bhat
    return y, caches


def fuse_backward(union: UnionModel, caches: dict, dy: np.ndarray) -> Params:
    """Parameter gradients of fuse_forward; encoder inputs are frozen."""
    grads: Params = {}
    d_e = caches["ct"].shape[1]
    dx, cross_grads = union.cross.backward(caches["cross"], dy)
    nn.accumulate(grads, union.cross.grad_items("union.cross", cross_grads))
    if union.mode == "concat":
        d_chat, d_bhat = dx[:, :d_e], dx[:, d_e:]
    else:
        dX = dx.reshape(-1, d_e, d_e)
        d_chat = np.einsum("bij,bj->bi", dX, caches["bhat"])
        d_bhat = np.einsum("bij,bi->bj", dX, caches["chat"])
    if union.mode != "no_gate":
        # chat = 2*sigmoid(g_c) * ct; d g_c = d_chat * ct * 2*sigmoid' = d_chat*ct*sc*(1-sc/2)
        sc, sb = caches["sc"], caches["sb"]
        dg_c = d_chat * caches["ct"] * sc * (1.0 - 0.5 * sc)
        dg_b = d_bhat * caches["bh"] * sb * (1.0 - 0.5 * sb)
        _, gct_grads = union.gate_ct.backward(caches["gc"], dg_c)
        _, gbh_grads = union.gate_bh.backward(caches["gb"], dg_b)
        nn.accumulate(grads, union.gate_ct.grad_items("union.gate_ct", gct_grads))
        nn.accumulate(grads, union.gate_bh.grad_items("union.gate_bh", gbh_grads))
    return grads


def fuse(union: UnionModel, ct: np.ndarray, bh: np.ndarray) -> np.ndarray:
    """Joint representations u_i, unit-norm rows."""
    y, _ = fuse_forward(union, ct, bh)
    return nn.l2_normalize_rows(y)


def union_step(union: UnionModel, ct_t, bh_t, ct_b, bh_b):
    """Contrastive loss over pair batches: row i of the (target, best) sides
    is the positive pair. Returns (loss, grads)."""
    yl, cl = fuse_forward(union, ct_t, bh_t)
    yr, cr = fuse_forward(union, ct_b, bh_b)
    loss, dyl, dyr, dlt = nn.info_nce(yl, yr, float(union.log_tau))
    grads = fuse_backward(union, cl, dyl)
    nn.accumulate(grads, fuse_backward(union, cr, dyr).items())
    grads["union.log_tau"] = np.array(dlt)
    return loss, grads


def train_union_model(
    pairs: list[EsuPair],
    ids: np.ndarray,
    ct: np.ndarray,
    bh: np.ndarray,
    cfg: CbjtConfig,
    seed: int,
    mode: str = "full",
    epochs: int | None = None,
) -> tuple[UnionModel, list[float]]:
    """Train the fusion on guidance pairs; ct/bh rows are frozen encoder
    outputs aligned with `ids`. Self-pairs are dropped up front."""
    usable = [p for p in pairs if p.target != p.best]
    if len({(p.target, p.best) for p in usable}) < 2:
        raise ValueError("need at least 2 distinct non-trivial pairs")
    rng = np.random.default_rng(seed)
    union = UnionModel.create(ct.shape[1], rng, mode=mode)
    params = union.params()
    opt = nn.Adam(lr=cfg.union_lr)
    # Decoupled decay, applied after each step. Gate weights get their own
    # rate because decaying a gate toward zero pulls the fusion toward the
    # identity map (zero gate output passes content/behavior through
    # unchanged), which is the safe fallback, while decaying the cross
    # projection just shrinks the learned mixing.
    decayed = [
        (arr, cfg.union_gate_decay if ".gate_" in name else cfg.union_weight_decay)
        for name, arr in params.items()
        if name != "union.log_tau"
    ]
    decayed = [(arr, wd) for arr, wd in decayed if wd]
    rows = row_map(ids)
    t_rows = np.array([rows[p.target] for p in usable])
    b_rows = np.array([rows[p.best] for p in usable])
    curve = []
    for _ in range(cfg.union_epochs if epochs is None else epochs):
        total, count = 0.0, 0
        for idx in _epoch_batches(len(usable), cfg.union_batch, rng):
            loss, grads = union_step(
                union, ct[t_rows[idx]], bh[t_rows[idx]], ct[b_rows[idx]], bh[b_rows[idx]]
            )
            opt.step(params, grads)
            nn.clamp_log_tau(params, "union.log_tau")
            for arr, wd in decayed:
                arr -= cfg.union_lr * wd * arr
            total += loss * len(idx)
            count += len(idx)
        curve.append(total / max(count, 1))
    return union, curve


def compute_item_reps(
    content_enc: TwoTowerEncoder,
    behavior_enc: TwoTowerEncoder,
    union: UnionModel,
    items: list[ItemRecord],
):
    """(ids, ct, bh, joint) for every item, all unit rows."""
    ids, va, vb = item_views(items)
    ct = content_enc.embed(va, vb)
    bh = behavior_enc.embed(va, vb)
    joint = fuse(union, ct, bh)
    return ids, ct, bh, joint
