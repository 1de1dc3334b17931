"""Lifelong-sequence search over the representation store.

Soft search is an exact top-K cosine scan of a user's source-domain sequence
against the target item's stored representation; hard search filters the
sequence by the target's category. Either way the output record carries item
ids and scores only. Downstream target-domain training never touches the
store again; that separation is load-bearing and tested.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import SearchLogRecord, SearchResult

MODES = ("soft", "hard")


# ---------------------------------------------------------------------------
# representation store (jsonl: {"item": id, "rep": [floats]})
# ---------------------------------------------------------------------------

def write_rep_store(path: str | Path, ids, vecs: np.ndarray) -> None:
    seen = set()
    for i in ids:
        if int(i) in seen:
            raise ValueError(f"duplicate item id {int(i)} in representation export")
        seen.add(int(i))
    with open(path, "w") as fh:
        for i, v in zip(ids, vecs):
            fh.write(json.dumps({"item": int(i), "rep": [float(x) for x in v]}) + "\n")


def load_rep_store(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    ids, vecs = [], []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            ids.append(rec["item"])
            vecs.append(rec["rep"])
    if not ids:
        return np.zeros(0, dtype=np.int64), np.zeros((0, 0))
    return np.array(ids, dtype=np.int64), np.array(vecs, dtype=np.float64)


# ---------------------------------------------------------------------------
# index
# ---------------------------------------------------------------------------

@dataclass
class RepIndex:
    ids: np.ndarray
    vecs: np.ndarray            # (N, d), unit rows
    row_of: dict[int, int]
    checksum: str

    @property
    def dim(self) -> int:
        return self.vecs.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def vector(self, item_id: int) -> np.ndarray:
        return self.vecs[self.row_of[item_id]]

    def meta(self) -> dict:
        return {"count": len(self.ids), "dim": int(self.dim), "checksum": self.checksum}


def build_index(ids: np.ndarray, vecs: np.ndarray) -> RepIndex:
    """Index a loaded store; duplicate ids, ragged dims, or non-unit rows are
    build errors."""
    if len(ids) != len(vecs):
        raise ValueError("ids and vectors disagree in length")
    row_of: dict[int, int] = {}
    for row, item_id in enumerate(ids):
        key = int(item_id)
        if key in row_of:
            raise ValueError(f"duplicate item id {key} in store")
        row_of[key] = row
    if len(vecs):
        norms = np.linalg.norm(vecs, axis=1)
        bad = np.nonzero(np.abs(norms - 1.0) > 1e-6)[0]
        if bad.size:
            raise ValueError(f"non-unit vector for item {int(ids[bad[0]])}")
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(ids).tobytes())
    digest.update(np.ascontiguousarray(vecs).tobytes())
    return RepIndex(ids=ids, vecs=vecs, row_of=row_of, checksum=digest.hexdigest())


def load_index(store_path: str | Path) -> RepIndex:
    ids, vecs = load_rep_store(store_path)
    return build_index(ids, vecs)


# ---------------------------------------------------------------------------
# search
# ---------------------------------------------------------------------------

def _dedup_keep_first(seq) -> list[int]:
    seen = set()
    out = []
    for item in seq:
        if item not in seen:
            seen.add(item)
            out.append(item)
    return out


def soft_search(index: RepIndex, target_item: int, lifelong_seq, k: int) -> SearchResult:
    """Exact top-k cosine over the (deduplicated) sequence; ties by ascending
    item id."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if target_item not in index.row_of:
        raise KeyError(f"target item {target_item} not in index")
    seq = _dedup_keep_first(int(i) for i in lifelong_seq)
    missing = [i for i in seq if i not in index.row_of]
    if missing:
        raise KeyError(f"sequence items missing from index: {missing}")
    if not seq:
        return SearchResult(target=target_item, hits=[])
    rows = np.array([index.row_of[i] for i in seq])
    scores = index.vecs[rows] @ index.vector(target_item)
    ids = np.array(seq, dtype=np.int64)
    order = np.lexsort((ids, -scores))[:k]
    hits = [(int(ids[i]), float(scores[i])) for i in order]
    return SearchResult(target=target_item, hits=hits)


def hard_search(
    target_item: int, lifelong_seq, k: int, category_of: dict[int, int]
) -> SearchResult:
    """Most recent k same-category sequence items, newest first, unscored."""
    if k < 1:
        raise ValueError("k must be at least 1")
    want = category_of[target_item]
    seq = _dedup_keep_first(int(i) for i in lifelong_seq)
    same = [i for i in seq if category_of[i] == want]
    hits = [(i, 0.0) for i in reversed(same[-k:])]
    return SearchResult(target=target_item, hits=hits)


@dataclass
class Impression:
    user: int
    target: int
    timestamp: int
    sequence: list[int]


def batch_search(
    index: RepIndex | None,
    impressions: list[Impression],
    k: int,
    mode: str,
    category_of: dict[int, int] | None = None,
) -> tuple[list[SearchLogRecord], list[str]]:
    """Search every impression; failures are collected, not fatal. Records
    come back canonically sorted so content is scheduling-independent."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    records, failures = [], []
    for imp in impressions:
        try:
            if mode == "soft":
                result = soft_search(index, imp.target, imp.sequence, k)
            else:
                result = hard_search(imp.target, imp.sequence, k, category_of)
            records.append(
                SearchLogRecord(
                    user=imp.user, target=imp.target, timestamp=imp.timestamp, result=result
                )
            )
        except (KeyError, ValueError) as exc:
            failures.append(f"user {imp.user} target {imp.target} at {imp.timestamp}: {exc}")
    records.sort(key=lambda r: (r.timestamp, r.user, r.target))
    return records, failures


# ---------------------------------------------------------------------------
# search log (canonical 9-decimal scores so logs diff cleanly)
# ---------------------------------------------------------------------------

def write_search_log(path: str | Path, records: list[SearchLogRecord]) -> None:
    with open(path, "w") as fh:
        for r in records:
            hits = ",".join(f'[{item},{score:.9f}]' for item, score in r.result.hits)
            fh.write(
                f'{{"user":{r.user},"target":{r.target},"timestamp":{r.timestamp},'
                f'"hits":[{hits}]}}\n'
            )


def load_search_log(path: str | Path) -> list[SearchLogRecord]:
    out = []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            result = SearchResult(
                target=rec["target"],
                hits=[(int(i), float(s)) for i, s in rec["hits"]],
            )
            out.append(
                SearchLogRecord(
                    user=rec["user"],
                    target=rec["target"],
                    timestamp=rec["timestamp"],
                    result=result,
                )
            )
    return out
