"""AUC and user-grouped gAUC."""
from __future__ import annotations

import numpy as np


class UndefinedMetric(ValueError):
    """AUC needs both classes; raised instead of returning a fill value."""


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    # start index of each run of equal scores
    boundaries = np.flatnonzero(np.diff(sorted_scores)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [len(scores)]])
    run_rank = (starts + ends + 1) / 2.0  # mean of 1-based ranks start+1..end
    ranks = np.empty(len(scores))
    ranks[order] = np.repeat(run_rank, ends - starts)
    return ranks


def auc(scores, labels) -> float:
    """P(random positive outranks random negative), ties counted as one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUC needs at least one positive and one negative")
    rank_sum = _average_ranks(scores)[pos].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def gauc(user_ids, scores, labels) -> float:
    """Per-user AUC averaged with per-user example counts as weights.

    Users whose examples are all one class are left out of both the weighted sum
    and the normaliser.
    """
    user_ids = np.asarray(user_ids)
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    order = np.argsort(user_ids, kind="stable")
    uids, starts, counts = np.unique(user_ids[order], return_index=True, return_counts=True)
    total, weight = 0.0, 0
    for start, count in zip(starts, counts):
        idx = order[start:start + count]
        y = labels[idx]
        n_pos = int((y == 1).sum())
        if n_pos == 0 or n_pos == count:
            continue
        total += count * auc(scores[idx], y)
        weight += count
    if weight == 0:
        raise UndefinedMetric("no user has both positive and negative examples")
    return float(total / weight)


def safe(metric, *args) -> float:
    """Metric value, or NaN when it is undefined for this batch."""
    try:
        return metric(*args)
    except UndefinedMetric:
        return float("nan")
