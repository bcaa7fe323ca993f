"""Detection metrics. Higher score = more in-distribution throughout."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ConfigError, EmptyScoreList


def _as_scores(values: Sequence[float], what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise EmptyScoreList(f"{what} must be a non-empty 1-D score list")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{what} contains non-finite scores")
    return arr


def auroc(id_scores: Sequence[float], ood_scores: Sequence[float]) -> float:
    """Probability that a random ID score exceeds a random OOD score,
    ties counted half (Mann-Whitney), via sort-and-rank in O(n log n).

    Rank sums of half-integer average ranks are exact in double
    precision for any realistic list size, so this equals the O(n^2)
    pairwise count bit-for-bit.
    """
    ids = _as_scores(id_scores, "id_scores")
    oods = _as_scores(ood_scores, "ood_scores")
    n_id, n_ood = ids.size, oods.size
    combined = np.concatenate([ids, oods])
    order = np.argsort(combined, kind="stable")
    ranks = np.empty(combined.size, dtype=np.float64)
    sorted_vals = combined[order]
    i = 0
    while i < sorted_vals.size:
        j = i
        while j + 1 < sorted_vals.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0  # average of 1-based ranks
        i = j + 1
    rank_sum_id = float(ranks[:n_id].sum())
    return (rank_sum_id - n_id * (n_id + 1) / 2.0) / (n_id * n_ood)


def fpr_at_tpr(
    id_scores: Sequence[float], ood_scores: Sequence[float], tpr_target: float = 0.95
) -> float:
    """False positive rate at the conservative threshold achieving the
    target true positive rate.

    The threshold is the largest observed score value t (over both
    lists) such that the fraction of ID scores strictly above t is >=
    ``tpr_target``; ID is declared when score > t. When no observed
    value qualifies, the threshold falls below all scores and the FPR
    is 1. No ROC interpolation is performed.
    """
    if not 0 < tpr_target < 1:
        raise ConfigError(f"tpr_target must lie in (0, 1), got {tpr_target}")
    ids = np.sort(_as_scores(id_scores, "id_scores"))
    oods = np.sort(_as_scores(ood_scores, "ood_scores"))
    candidates = np.unique(np.concatenate([ids, oods]))
    # fraction of ID scores strictly greater than each candidate
    above = ids.size - np.searchsorted(ids, candidates, side="right")
    qualifying = candidates[above / ids.size >= tpr_target]
    if qualifying.size == 0:
        return 1.0
    threshold = qualifying[-1]
    return float(oods.size - np.searchsorted(oods, threshold, side="right")) / oods.size
