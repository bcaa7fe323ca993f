from fractions import Fraction
from itertools import combinations, permutations

import numpy as np
import pytest

from cood.assignment import max_similarity_assignment
from cood.errors import DataError, EmptySet


def brute_force(sim):
    """Exact-arithmetic argmax over all maximal one-to-one pair sets,
    keeping the lexicographically smallest pair list among ties."""
    na, nb = sim.shape
    r = min(na, nb)
    best_total = None
    best_pairs = None
    for rows in combinations(range(na), r):
        for cols in permutations(range(nb), r):
            pairs = tuple(zip(rows, cols))
            total = sum((Fraction(float(sim[i, j])) for i, j in pairs), Fraction(0))
            if (
                best_total is None
                or total > best_total
                or (total == best_total and pairs < best_pairs)
            ):
                best_total, best_pairs = total, pairs
    return best_pairs


class TestExamples:
    def test_two_by_two(self):
        result = max_similarity_assignment(np.array([[0.9, 0.1], [0.2, 0.8]]))
        assert result.pairs == ((0, 0), (1, 1))
        assert result.total_similarity == pytest.approx(1.7, abs=1e-12)

    def test_three_by_three_all_ties(self):
        # entries 1..9 row-major: every permutation totals 15
        sim = np.arange(1.0, 10.0).reshape(3, 3)
        result = max_similarity_assignment(sim)
        assert result.pairs == ((0, 0), (1, 1), (2, 2))
        assert result.total_similarity == 15.0

    def test_one_by_three(self):
        result = max_similarity_assignment(np.array([[0.1, 0.9, 0.3]]))
        assert result.pairs == ((0, 1),)
        assert result.total_similarity == pytest.approx(0.9)

    def test_three_by_one_prefers_best_row(self):
        result = max_similarity_assignment(np.array([[0.1], [0.9], [0.3]]))
        assert result.pairs == ((1, 0),)

    def test_rectangular_tie_prefers_lower_row(self):
        result = max_similarity_assignment(np.array([[0.5], [0.5]]))
        assert result.pairs == ((0, 0),)

    def test_constant_matrix_identity(self):
        result = max_similarity_assignment(np.full((4, 4), 0.3))
        assert result.pairs == tuple((i, i) for i in range(4))

    def test_negative_entries_fully_matched(self):
        result = max_similarity_assignment(np.array([[-0.5, -0.9], [-0.2, -0.1]]))
        assert len(result.pairs) == 2
        assert result.pairs == brute_force(np.array([[-0.5, -0.9], [-0.2, -0.1]]))


class TestErrors:
    def test_empty(self):
        with pytest.raises(EmptySet):
            max_similarity_assignment(np.zeros((0, 3)))

    def test_non_finite(self):
        with pytest.raises(DataError):
            max_similarity_assignment(np.array([[np.nan, 0.0]]))


class TestRandomOracle:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(42)
        for trial in range(200):
            na = int(rng.integers(1, 6))
            nb = int(rng.integers(1, 6))
            if trial % 3 == 0:
                sim = rng.integers(-3, 4, size=(na, nb)).astype(float)
            else:
                sim = rng.uniform(-1, 1, size=(na, nb))
            result = max_similarity_assignment(sim)
            expected = brute_force(sim)
            assert result.pairs == expected
            total = 0.0
            for i, j in expected:
                total += float(sim[i, j])
            assert result.total_similarity == total
