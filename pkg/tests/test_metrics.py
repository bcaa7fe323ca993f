import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cood.errors import ConfigError, EmptyScoreList
from cood.metrics import auroc, fpr_at_tpr


def auroc_pairwise(ids, oods):
    """O(n^2) oracle: wins plus half-ties over all pairs."""
    wins = 0.0
    for a in ids:
        for b in oods:
            if a > b:
                wins += 1.0
            elif a == b:
                wins += 0.5
    return wins / (len(ids) * len(oods))


def fpr_sweep_oracle(ids, oods, target):
    """Scan every distinct observed value as a threshold candidate."""
    ids = list(ids)
    oods = list(oods)
    best_t = None
    for t in sorted(set(ids) | set(oods)):
        tpr = sum(1 for v in ids if v > t) / len(ids)
        if tpr >= target and (best_t is None or t > best_t):
            best_t = t
    if best_t is None:
        return 1.0
    return sum(1 for v in oods if v > best_t) / len(oods)


class TestAuroc:
    def test_perfect_separation(self):
        assert auroc([0.9, 0.8], [0.2, 0.1]) == 1.0

    def test_all_ties(self):
        assert auroc([0.5, 0.5, 0.5], [0.5, 0.5]) == 0.5

    def test_fixed_example(self):
        assert auroc([0.9, 0.4], [0.5, 0.1]) == 0.75

    def test_matches_pairwise_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(60):
            n = int(rng.integers(1, 50))
            m = int(rng.integers(1, 50))
            ids = rng.integers(0, 10, size=n) / 7.0  # plenty of exact ties
            oods = rng.integers(0, 10, size=m) / 7.0
            assert auroc(ids, oods) == auroc_pairwise(ids.tolist(), oods.tolist())

    @settings(max_examples=30, deadline=None)
    @given(
        seed=st.integers(0, 10_000),
        scale=st.floats(0.1, 10),
        shift=st.floats(-5, 5),
    )
    def test_invariant_under_increasing_transform(self, seed, scale, shift):
        rng = np.random.default_rng(seed)
        ids = rng.standard_normal(20)
        oods = rng.standard_normal(15)
        base = auroc(ids, oods)
        transformed = auroc(np.tanh(ids) * scale + shift, np.tanh(oods) * scale + shift)
        assert transformed == pytest.approx(base, abs=1e-12)

    def test_empty(self):
        with pytest.raises(EmptyScoreList):
            auroc([], [0.5])
        with pytest.raises(EmptyScoreList):
            auroc([0.5], [])


class TestFprAtTpr:
    def test_perfect_separation(self):
        assert fpr_at_tpr([0.9, 0.8, 0.7], [0.2, 0.1], 0.95) == 0.0

    def test_identical_lists(self):
        scores = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
        value = fpr_at_tpr(scores, scores, 0.95)
        assert value >= 0.95 - 1.0 / len(scores)
        assert value == fpr_sweep_oracle(scores, scores, 0.95)

    def test_shifted_uniform_ranks(self):
        ids = [(i + 1) / 20 for i in range(20)]
        step = ids[-1] - ids[0]
        oods = [v - step / 2 for v in ids]
        expected = fpr_sweep_oracle(ids, oods, 0.95)
        assert fpr_at_tpr(ids, oods, 0.95) == expected

    def test_matches_sweep_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(60):
            ids = (rng.integers(0, 12, size=int(rng.integers(1, 40))) / 9.0).tolist()
            oods = (rng.integers(0, 12, size=int(rng.integers(1, 40))) / 9.0).tolist()
            for target in (0.8, 0.9, 0.95):
                assert fpr_at_tpr(ids, oods, target) == fpr_sweep_oracle(ids, oods, target)

    def test_monotone_in_target(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            ids = rng.standard_normal(30).tolist()
            oods = (rng.standard_normal(25) - 0.5).tolist()
            values = [fpr_at_tpr(ids, oods, t) for t in (0.99, 0.9, 0.8, 0.5, 0.2)]
            assert all(a >= b for a, b in zip(values, values[1:]))

    def test_no_qualifying_threshold(self):
        # no observed value keeps 95% of ID strictly above it
        assert fpr_at_tpr([0.5, 0.5, 0.5], [0.6, 0.7], 0.95) == 1.0
        assert fpr_sweep_oracle([0.5, 0.5, 0.5], [0.6, 0.7], 0.95) == 1.0

    def test_target_domain(self):
        with pytest.raises(ConfigError):
            fpr_at_tpr([0.5], [0.4], 1.0)
