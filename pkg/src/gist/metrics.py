"""Ranking metrics: AUC, relative AUC gain, Recall@K, grouped gains."""

from __future__ import annotations

import numpy as np


def auc(labels, scores) -> float:
    """Mann-Whitney AUC with average ranks, so ties contribute one half.

    Needs at least one positive and one negative label.
    """
    labels = np.asarray(labels, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape:
        raise ValueError("labels and scores disagree in length")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: labels are single-class")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(len(scores), dtype=np.float64)
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auc_gain(auc_value: float, base_auc: float) -> float:
    """Relative improvement in percent."""
    if base_auc <= 0.0:
        raise ValueError("base AUC must be positive")
    return (auc_value - base_auc) / base_auc * 100.0


def recall_at_k(
    ids: np.ndarray, vecs: np.ndarray, pairs: list[tuple[int, int]], k: int
) -> float:
    """Fraction of (query, answer) pairs whose answer is among the query's
    exact top-k cosine neighbors in the store (self excluded, ties by
    ascending id)."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if not pairs:
        raise ValueError("no ground-truth pairs")
    row_of = {int(i): r for r, i in enumerate(ids)}
    missing = sorted({q for q, _ in pairs if q not in row_of})
    if missing:
        raise KeyError(f"query items missing from store: {missing}")
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    unit = vecs / np.where(norms == 0.0, 1.0, norms)
    ids = np.asarray(ids, dtype=np.int64)
    hits = 0
    for q, answer in pairs:
        row = row_of[q]
        sims = unit @ unit[row]
        sims[row] = -np.inf
        order = np.lexsort((ids, -sims))[:k]
        if answer in set(int(ids[r]) for r in order):
            hits += 1
    return hits / len(pairs)


def grouped_gain(
    target_items,
    labels,
    scores_main,
    scores_base,
    count_of: dict[int, int],
    split: float | None = None,
) -> tuple[float, float]:
    """AUC gain of main over base, separately for samples whose target item
    has low vs high interaction count. The split defaults to the median count
    over the item catalog; low means count <= split."""
    counts_catalog = np.array(sorted(count_of.values()), dtype=np.float64)
    if split is None:
        split = float(np.median(counts_catalog))
    target_items = np.asarray(target_items)
    labels = np.asarray(labels, dtype=np.float64)
    scores_main = np.asarray(scores_main, dtype=np.float64)
    scores_base = np.asarray(scores_base, dtype=np.float64)
    sample_counts = np.array([count_of[int(t)] for t in target_items], dtype=np.float64)
    low = sample_counts <= split
    gains = []
    for group_mask, name in ((low, "low"), (~low, "high")):
        if not group_mask.any():
            raise ValueError(f"{name}-interaction group is empty")
        gains.append(
            auc_gain(
                auc(labels[group_mask], scores_main[group_mask]),
                auc(labels[group_mask], scores_base[group_mask]),
            )
        )
    return gains[0], gains[1]
