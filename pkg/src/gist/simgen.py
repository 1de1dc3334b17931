"""Synthetic two-domain world with known ground truth.

Users and items get unit-norm latent vectors. Content views are noisy linear
maps of item latents, categories come from nearest-anchor assignment, and
interactions are sampled with a popularity-skewed, affinity-tilted choice
model. Click labels are Bernoulli draws from a logistic model on the
user-item latent dot product, so every downstream claim can be checked
against the latent oracle.

The source domain emits many events per user per tick, the target domain
few; that sparsity gap is the premise of the whole exercise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import WorldConfig
from .data import (
    SOURCE,
    TARGET,
    TICK_SPAN,
    BundleMeta,
    Dataset,
    InteractionEvent,
    ItemRecord,
    UserRecord,
)
from .nn import sigmoid

# Target events sit mid-tick so a tick's source activity precedes the tick's
# target impressions.
_TARGET_OFFSET = TICK_SPAN // 2


@dataclass
class LatentWorld:
    """Oracle state hidden from all learning modules."""

    z_users: np.ndarray          # (U, d_z) unit rows
    z_items: np.ndarray          # (I_s + I_t, d_z) unit rows, row = item id
    categories: np.ndarray       # (I,) int
    anchors: np.ndarray          # (C, d_z)
    source_ids: np.ndarray       # (I_s,)
    target_ids: np.ndarray       # (I_t,)
    beta_click: float

    def domain_of(self, item_id: int) -> str:
        return SOURCE if item_id < len(self.source_ids) else TARGET


def _unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _zipf_weights(rng: np.random.Generator, n: int, exponent: float) -> np.ndarray:
    """Popularity weights: rank^-exponent under a random rank assignment."""
    ranks = np.empty(n, dtype=np.float64)
    ranks[rng.permutation(n)] = np.arange(1, n + 1)
    w = ranks ** -exponent
    return w / w.sum()


def true_click_prob(world: LatentWorld, user_id: int, item_id: int) -> float:
    z_u = world.z_users[user_id]
    z_v = world.z_items[item_id]
    return float(sigmoid(np.array([world.beta_click * float(z_u @ z_v)]))[0])


def true_neighbors(world: LatentWorld, item_id: int, k: int) -> list[int]:
    """Exact same-domain top-k by latent cosine; ties by ascending id, self excluded."""
    ids = world.source_ids if world.domain_of(item_id) == SOURCE else world.target_ids
    sims = world.z_items[ids] @ world.z_items[item_id]
    order = np.lexsort((ids, -sims))
    out = [int(ids[i]) for i in order if int(ids[i]) != item_id]
    return out[:k]


def gen_world(cfg: WorldConfig) -> tuple[Dataset, LatentWorld]:
    rng = np.random.default_rng(cfg.seed)

    anchors = _unit_rows(rng, cfg.categories, cfg.d_z)
    z_users = _unit_rows(rng, cfg.users, cfg.d_z)
    profiles = np.column_stack(
        [rng.integers(0, v, size=cfg.users) for v in cfg.profile_vocab_sizes]
    )

    n_items = cfg.source_items + cfg.target_items
    z_items = _unit_rows(rng, n_items, cfg.d_z)
    categories = np.argmax(z_items @ anchors.T, axis=1)

    map_a = rng.normal(size=(cfg.d_c, cfg.d_z))
    map_b = rng.normal(size=(cfg.d_c, cfg.d_z))
    views_a = z_items @ map_a.T + cfg.view_noise_a * rng.normal(size=(n_items, cfg.d_c))
    views_b = z_items @ map_b.T + cfg.view_noise_b * rng.normal(size=(n_items, cfg.d_c))

    source_ids = np.arange(cfg.source_items)
    target_ids = np.arange(cfg.source_items, n_items)
    pop = {
        SOURCE: _zipf_weights(rng, cfg.source_items, cfg.zipf_exponent),
        TARGET: _zipf_weights(rng, cfg.target_items, cfg.zipf_exponent),
    }
    domain_ids = {SOURCE: source_ids, TARGET: target_ids}
    per_tick = {
        SOURCE: cfg.source_events_per_user_tick,
        TARGET: cfg.target_events_per_user_tick,
    }

    events: list[InteractionEvent] = []
    clicks = np.zeros(n_items, dtype=np.int64)
    for u in range(cfg.users):
        z_u = z_users[u]
        for domain in (SOURCE, TARGET):
            ids = domain_ids[domain]
            affinity = cfg.beta_select * (z_items[ids] @ z_u)
            logits = affinity + np.log(pop[domain])
            logits -= logits.max()
            p = np.exp(logits)
            p /= p.sum()
            n_draws = cfg.ticks * per_tick[domain]
            drawn = rng.choice(len(ids), size=n_draws, p=p)
            click_p = sigmoid(cfg.beta_click * (z_items[ids[drawn]] @ z_u))
            labels = (rng.random(n_draws) < click_p).astype(np.int64)
            base = _TARGET_OFFSET if domain == TARGET else 0
            for j in range(n_draws):
                tick, off = divmod(j, per_tick[domain])
                item = int(ids[drawn[j]])
                events.append(
                    InteractionEvent(
                        user=u,
                        item=item,
                        domain=domain,
                        timestamp=tick * TICK_SPAN + base + off,
                        label=int(labels[j]),
                    )
                )
                if labels[j]:
                    clicks[item] += 1

    events.sort(key=lambda e: (e.timestamp, e.user, e.item))

    items = [
        ItemRecord(
            id=i,
            domain=SOURCE if i < cfg.source_items else TARGET,
            category=int(categories[i]),
            view_a=views_a[i],
            view_b=views_b[i],
            interaction_count=int(clicks[i]),
        )
        for i in range(n_items)
    ]
    users = [UserRecord(id=u, profile_features=[int(f) for f in profiles[u]]) for u in range(cfg.users)]
    meta = BundleMeta(
        profile_vocab_sizes=list(cfg.profile_vocab_sizes),
        categories=cfg.categories,
        d_c=cfg.d_c,
    )
    dataset = Dataset(items=items, users=users, events=events, meta=meta)
    world = LatentWorld(
        z_users=z_users,
        z_items=z_items,
        categories=categories,
        anchors=anchors,
        source_ids=source_ids,
        target_ids=target_ids,
        beta_click=cfg.beta_click,
    )
    return dataset, world


# ---------------------------------------------------------------------------
# oracle files (tests and eval only; never read by training code)
# ---------------------------------------------------------------------------

def save_oracle(directory: str | Path, world: LatentWorld, neighbor_k: int = 10) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "user_latents.jsonl", "w") as fh:
        for u in range(len(world.z_users)):
            fh.write(json.dumps({"id": u, "z": [float(x) for x in world.z_users[u]]}) + "\n")
    with open(directory / "item_latents.jsonl", "w") as fh:
        for i in range(len(world.z_items)):
            fh.write(
                json.dumps(
                    {
                        "id": i,
                        "z": [float(x) for x in world.z_items[i]],
                        "category": int(world.categories[i]),
                    }
                )
                + "\n"
            )
    with open(directory / "true_neighbors.jsonl", "w") as fh:
        for i in range(len(world.z_items)):
            fh.write(json.dumps({"id": i, "neighbors": true_neighbors(world, i, neighbor_k)}) + "\n")
    meta = {
        "beta_click": world.beta_click,
        "source_items": int(len(world.source_ids)),
        "target_items": int(len(world.target_ids)),
        "neighbor_k": neighbor_k,
    }
    (directory / "oracle_meta.json").write_text(json.dumps(meta) + "\n")


def load_oracle(directory: str | Path) -> LatentWorld:
    directory = Path(directory)
    meta = json.loads((directory / "oracle_meta.json").read_text())
    z_users = []
    with open(directory / "user_latents.jsonl") as fh:
        for line in fh:
            z_users.append(json.loads(line)["z"])
    z_items, cats = [], []
    with open(directory / "item_latents.jsonl") as fh:
        for line in fh:
            rec = json.loads(line)
            z_items.append(rec["z"])
            cats.append(rec["category"])
    n_s = meta["source_items"]
    n_t = meta["target_items"]
    z_items = np.array(z_items)
    return LatentWorld(
        z_users=np.array(z_users),
        z_items=z_items,
        categories=np.array(cats, dtype=np.int64),
        anchors=np.zeros((0, z_items.shape[1])),
        source_ids=np.arange(n_s),
        target_ids=np.arange(n_s, n_s + n_t),
        beta_click=meta["beta_click"],
    )
