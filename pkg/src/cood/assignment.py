"""Globally optimal rectangular assignment, exact and deterministic.

Maximizes the summed similarity of a one-to-one assignment that fully
matches the smaller side of an (na, nb) similarity matrix. Floating
point inputs are lifted exactly into integers (every finite double is a
dyadic rational), so optimality is exact rather than
approximate-within-epsilon, and ties are broken deterministically: among
all optimal assignments, the pair list sorted by first index is
lexicographically smallest.

The tie-break is folded into the objective. Reading the assignment as a
word over rows 0..na-1 with per-row symbols (column j, or "skip"),
ordered cols-ascending-then-skip, lexicographic comparison of pair lists
equals positional base-B comparison of words with B = nb + 2. Charging
pair (i, j) the weight (nb - j) * B^(na-1-i) and maximizing makes that
the secondary objective; scaling the primary similarities by a constant
larger than any possible secondary spread keeps the primary dominant.
The combined integer problem is solved once with a shortest-augmenting-
path Hungarian method, O(n^3) in the larger side.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DataError, EmptySet


@dataclass(frozen=True)
class Assignment:
    """One-to-one pairs (index into set A, index into set B), sorted by
    the first index, plus their total similarity."""

    pairs: tuple[tuple[int, int], ...]
    total_similarity: float


def _scaled_ints(matrix: np.ndarray) -> list[list[int]]:
    """Exact integer lift of a float matrix via a common dyadic denominator."""
    fracs = [[Fraction(float(v)) for v in row] for row in matrix]
    denom = 1
    for row in fracs:
        for f in row:
            if f.denominator > denom:
                denom = f.denominator
    return [[int(f.numerator * (denom // f.denominator)) for f in row] for row in fracs]


def _hungarian_min(cost: list[list[int]]) -> list[int]:
    """Min-cost assignment for an nr x nc integer matrix with nr <= nc.
    Returns the matched column for each row. Shortest-augmenting-path
    formulation with dual potentials; exact in integer arithmetic."""
    nr, nc = len(cost), len(cost[0])
    inf = float("inf")  # sentinel only; every candidate slack is a finite int
    u = [0] * (nr + 1)
    v = [0] * (nc + 1)
    matched_row = [0] * (nc + 1)  # 1-based row matched to each column; 0 = free
    way = [0] * (nc + 1)
    for i in range(1, nr + 1):
        matched_row[0] = i
        j0 = 0
        min_slack = [inf] * (nc + 1)
        used = [False] * (nc + 1)
        while True:
            used[j0] = True
            i0 = matched_row[j0]
            delta = inf
            j1 = 0
            row_cost = cost[i0 - 1]
            for j in range(1, nc + 1):
                if used[j]:
                    continue
                cur = row_cost[j - 1] - u[i0] - v[j]
                if cur < min_slack[j]:
                    min_slack[j] = cur
                    way[j] = j0
                if min_slack[j] < delta:
                    delta = min_slack[j]
                    j1 = j
            for j in range(nc + 1):
                if used[j]:
                    u[matched_row[j]] += delta
                    v[j] -= delta
                else:
                    min_slack[j] -= delta
            j0 = j1
            if matched_row[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            matched_row[j0] = matched_row[j1]
            j0 = j1
    col_of_row = [-1] * nr
    for j in range(1, nc + 1):
        if matched_row[j] != 0:
            col_of_row[matched_row[j] - 1] = j - 1
    return col_of_row


def max_similarity_assignment(similarity: np.ndarray) -> Assignment:
    """Maximum-total-similarity one-to-one assignment of an (na, nb)
    matrix; min(na, nb) pairs; exact optimum; lexicographic tie-break."""
    sim = np.asarray(similarity, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] == 0 or sim.shape[1] == 0:
        raise EmptySet(f"similarity matrix must be non-empty 2-D, got shape {sim.shape}")
    if not np.all(np.isfinite(sim)):
        raise DataError("similarity matrix contains non-finite values")
    na, nb = sim.shape
    sim_int = _scaled_ints(sim)

    base = nb + 2
    # Secondary weights fit below primary_scale, so one unit of scaled
    # similarity always outranks any tie-break difference.
    tie_weight = [[(nb - j) * base ** (na - 1 - i) for j in range(nb)] for i in range(na)]
    primary_scale = 2 * base**na + 1

    if na <= nb:
        cost = [
            [-(sim_int[i][j] * primary_scale + tie_weight[i][j]) for j in range(nb)]
            for i in range(na)
        ]
        col_of_row = _hungarian_min(cost)
        pairs = tuple((i, col_of_row[i]) for i in range(na))
    else:
        cost = [
            [-(sim_int[i][j] * primary_scale + tie_weight[i][j]) for i in range(na)]
            for j in range(nb)
        ]
        row_of_col = _hungarian_min(cost)
        pairs = tuple(sorted((row_of_col[j], j) for j in range(nb)))

    total = 0.0
    for i, j in pairs:
        total += float(sim[i, j])
    return Assignment(pairs=pairs, total_similarity=total)
