"""Core entity types, dataset bundle IO, validation, and temporal splitting.

A dataset bundle is a directory of line-delimited JSON: `items.jsonl`,
`users.jsonl`, `events.jsonl`, plus `meta.json` declaring vocabulary sizes
(profile feature vocabularies, category count, view dimension) so validation
does not have to infer them.

Timestamps are integers on a fine grid: tick t spans
[t * TICK_SPAN, (t+1) * TICK_SPAN), which keeps ticks abstract while letting
every event of a user carry a distinct, strictly increasing timestamp.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SOURCE = "source"
TARGET = "target"
DOMAINS = (SOURCE, TARGET)

TICK_SPAN = 1_000_000


def tick_of(timestamp: int) -> int:
    return timestamp // TICK_SPAN


@dataclass
class ItemRecord:
    id: int
    domain: str
    category: int
    view_a: np.ndarray
    view_b: np.ndarray
    interaction_count: int


@dataclass
class UserRecord:
    id: int
    profile_features: list[int]


@dataclass
class InteractionEvent:
    user: int
    item: int
    domain: str
    timestamp: int
    label: int


@dataclass
class BundleMeta:
    profile_vocab_sizes: list[int]
    categories: int
    d_c: int


@dataclass
class Dataset:
    items: list[ItemRecord]
    users: list[UserRecord]
    events: list[InteractionEvent]
    meta: BundleMeta

    def item_by_id(self) -> dict[int, ItemRecord]:
        return {it.id: it for it in self.items}


@dataclass
class SearchResult:
    """Decoupled search output: ids and scores only, no embedding values."""

    target: int
    hits: list[tuple[int, float]]


@dataclass
class SearchLogRecord:
    user: int
    target: int
    timestamp: int
    result: SearchResult


@dataclass
class TrainingSample:
    user: int
    target_item: int
    target_history: list[int]
    search_result: SearchResult | None
    label: int
    timestamp: int


# ---------------------------------------------------------------------------
# bundle IO
# ---------------------------------------------------------------------------

def _vec_to_json(v: np.ndarray) -> list[float]:
    return [float(x) for x in v]


def save_bundle(directory: str | Path, ds: Dataset) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "items.jsonl", "w") as fh:
        for it in ds.items:
            fh.write(
                json.dumps(
                    {
                        "id": it.id,
                        "domain": it.domain,
                        "category": it.category,
                        "view_a": _vec_to_json(it.view_a),
                        "view_b": _vec_to_json(it.view_b),
                        "interaction_count": it.interaction_count,
                    }
                )
                + "\n"
            )
    with open(directory / "users.jsonl", "w") as fh:
        for u in ds.users:
            fh.write(json.dumps({"id": u.id, "profile_features": u.profile_features}) + "\n")
    with open(directory / "events.jsonl", "w") as fh:
        for e in ds.events:
            fh.write(
                json.dumps(
                    {
                        "user": e.user,
                        "item": e.item,
                        "domain": e.domain,
                        "timestamp": e.timestamp,
                        "label": e.label,
                    }
                )
                + "\n"
            )
    with open(directory / "meta.json", "w") as fh:
        json.dump(
            {
                "profile_vocab_sizes": ds.meta.profile_vocab_sizes,
                "categories": ds.meta.categories,
                "d_c": ds.meta.d_c,
            },
            fh,
        )
        fh.write("\n")


def _load_jsonl(path: Path) -> list[dict]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: bad record: {exc}") from exc
    return records


def load_bundle(directory: str | Path) -> Dataset:
    directory = Path(directory)
    for name in ("items.jsonl", "users.jsonl", "events.jsonl", "meta.json"):
        if not (directory / name).exists():
            raise FileNotFoundError(f"missing bundle file: {directory / name}")
    items = [
        ItemRecord(
            id=r["id"],
            domain=r["domain"],
            category=r["category"],
            view_a=np.array(r["view_a"], dtype=np.float64),
            view_b=np.array(r["view_b"], dtype=np.float64),
            interaction_count=r["interaction_count"],
        )
        for r in _load_jsonl(directory / "items.jsonl")
    ]
    users = [
        UserRecord(id=r["id"], profile_features=list(r["profile_features"]))
        for r in _load_jsonl(directory / "users.jsonl")
    ]
    events = [
        InteractionEvent(
            user=r["user"],
            item=r["item"],
            domain=r["domain"],
            timestamp=r["timestamp"],
            label=r["label"],
        )
        for r in _load_jsonl(directory / "events.jsonl")
    ]
    meta_raw = json.loads((directory / "meta.json").read_text())
    meta = BundleMeta(
        profile_vocab_sizes=list(meta_raw["profile_vocab_sizes"]),
        categories=meta_raw["categories"],
        d_c=meta_raw["d_c"],
    )
    return Dataset(items=items, users=users, events=events, meta=meta)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def validate_dataset(ds: Dataset) -> list[str]:
    """Check every type invariant; returns one message per violation."""
    violations: list[str] = []

    seen_items: dict[int, str] = {}
    for it in ds.items:
        if it.domain not in DOMAINS:
            violations.append(f"item {it.id}: unknown domain {it.domain!r}")
        if it.id in seen_items:
            violations.append(f"duplicate item id {it.id}")
        seen_items[it.id] = it.domain
        if it.id < 0:
            violations.append(f"item id {it.id} is negative")
        if not (0 <= it.category < ds.meta.categories):
            violations.append(f"item {it.id}: category {it.category} out of range")
        for name, v in (("view_a", it.view_a), ("view_b", it.view_b)):
            if len(v) != ds.meta.d_c:
                violations.append(f"item {it.id}: {name} has dim {len(v)}, want {ds.meta.d_c}")
            elif not np.isfinite(v).all():
                violations.append(f"item {it.id}: {name} contains non-finite values")
        if it.interaction_count < 0:
            violations.append(f"item {it.id}: negative interaction_count")

    seen_users: set[int] = set()
    for u in ds.users:
        if u.id in seen_users:
            violations.append(f"duplicate user id {u.id}")
        seen_users.add(u.id)
        if len(u.profile_features) != len(ds.meta.profile_vocab_sizes):
            violations.append(
                f"user {u.id}: expected {len(ds.meta.profile_vocab_sizes)} profile features"
            )
            continue
        for k, (feat, vocab) in enumerate(zip(u.profile_features, ds.meta.profile_vocab_sizes)):
            if not (0 <= feat < vocab):
                violations.append(f"user {u.id}: profile feature {k} value {feat} out of range")

    last_ts: dict[tuple[int, str], int] = {}
    for e in ds.events:
        if e.user not in seen_users:
            violations.append(f"event references unknown user {e.user}")
        if e.item not in seen_items:
            violations.append(f"event references unknown item {e.item}")
        elif seen_items[e.item] != e.domain:
            violations.append(f"event domain {e.domain!r} does not match item {e.item}")
        if e.label not in (0, 1):
            violations.append(f"event for user {e.user}: label {e.label} not binary")
        key = (e.user, e.domain)
        if key in last_ts and e.timestamp <= last_ts[key]:
            violations.append(
                f"out-of-order timestamps for user {e.user} in domain {e.domain}"
            )
        last_ts[key] = e.timestamp

    return violations


# ---------------------------------------------------------------------------
# temporal split
# ---------------------------------------------------------------------------

def split_temporal(
    events: list[InteractionEvent], train_fraction_of_time: float
) -> tuple[list[InteractionEvent], list[InteractionEvent]]:
    """Split at the global time quantile, snapped down to a tick boundary.

    Every train timestamp is strictly below every test timestamp. Events on
    the boundary tick land in test, so a single-tick dataset with any
    fraction puts everything in test.
    """
    if not (0.0 < train_fraction_of_time < 1.0):
        raise ValueError(f"train fraction must be in (0,1), got {train_fraction_of_time}")
    if not events:
        raise ValueError("no events to split")
    ts = np.sort(np.array([e.timestamp for e in events], dtype=np.int64))
    pos = min(int(math.floor(train_fraction_of_time * len(ts))), len(ts) - 1)
    cut = int(ts[pos]) // TICK_SPAN * TICK_SPAN
    train = [e for e in events if e.timestamp < cut]
    test = [e for e in events if e.timestamp >= cut]
    return train, test


# ---------------------------------------------------------------------------
# behavior sequences
# ---------------------------------------------------------------------------

def clicked_history(
    events: list[InteractionEvent], domain: str
) -> dict[int, list[tuple[int, int]]]:
    """Per-user clicked (timestamp, item) lists for one domain, time order."""
    out: dict[int, list[tuple[int, int]]] = {}
    for e in events:
        if e.domain == domain and e.label == 1:
            out.setdefault(e.user, []).append((e.timestamp, e.item))
    return out


def history_before(
    history: list[tuple[int, int]], timestamp: int, cap: int
) -> list[int]:
    """Items clicked strictly before `timestamp`, most recent `cap` of them.

    Assumes `history` is time-ordered (as produced by clicked_history).
    Returned oldest-first.
    """
    lo, hi = 0, len(history)
    while lo < hi:
        mid = (lo + hi) // 2
        if history[mid][0] < timestamp:
            lo = mid + 1
        else:
            hi = mid
    start = max(0, lo - cap)
    return [item for _, item in history[start:lo]]
