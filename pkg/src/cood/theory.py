"""False-positive-rate theory for component-count detectors.

A detector sums per-component presence indicators, each Bernoulli with
parameter psi (psi_in on in-distribution data, psi_out on OOD), declares
ID when the sum exceeds an integer threshold, and targets a true
positive rate lambda. This module provides the Gaussian closed form for
the FPR at TPR lambda, its sensitivity to the component count, a
first-order penalty for correlated components, and the exact binomial
counterpart: integer threshold selection, exact FPR, the closed-form
change in FPR when one component is added, and a Monte Carlo validator.

Normal CDF / inverse CDF come from the standard library's NormalDist
(erf-based CDF, rational-approximation inverse); absolute error is well
below the 1e-12 / 1e-9 budgets assumed here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Literal, NamedTuple

import numpy as np

from .errors import ConfigError, InternalInconsistency

_NORMAL = NormalDist()

# Binomial tails switch to log-domain accumulation beyond this n, where
# exact integer binomial coefficients overflow float conversion.
_LOG_DOMAIN_N = 500

ThresholdConvention = Literal["min_tail_le", "max_tail_ge"]


@dataclass(frozen=True)
class BernoulliComponentModel:
    """Component count and per-component ID/OOD presence probabilities."""

    n_components: int
    psi_in: float
    psi_out: float

    def __post_init__(self):
        if self.n_components < 1:
            raise ConfigError("n_components must be >= 1")
        for name, val in (("psi_in", self.psi_in), ("psi_out", self.psi_out)):
            if not 0.0 < val < 1.0:
                raise ConfigError(f"{name} must lie strictly in (0, 1), got {val}")


@dataclass(frozen=True)
class GaussianScorePair:
    """Normal score models for ID and OOD populations."""

    mu_in: float
    sigma_in: float
    mu_out: float
    sigma_out: float

    def __post_init__(self):
        if not (self.sigma_in > 0 and self.sigma_out > 0):
            raise ConfigError("sigmas must be strictly positive")

    @staticmethod
    def from_bernoulli(m: BernoulliComponentModel) -> "GaussianScorePair":
        n = m.n_components
        return GaussianScorePair(
            mu_in=n * m.psi_in,
            sigma_in=math.sqrt(n * m.psi_in * (1.0 - m.psi_in)),
            mu_out=n * m.psi_out,
            sigma_out=math.sqrt(n * m.psi_out * (1.0 - m.psi_out)),
        )


def normal_cdf(x: float) -> float:
    return _NORMAL.cdf(x)


def normal_ppf(p: float) -> float:
    return _NORMAL.inv_cdf(p)


def fpr_normal(g: GaussianScorePair, lam: float) -> float:
    """Gaussian FPR at TPR lambda:
    Phi((mu_out - mu_in)/sigma_out + (sigma_in/sigma_out) * Phi^-1(lam))."""
    if not 0.0 < lam < 1.0:
        raise ConfigError(f"lambda must lie in (0, 1), got {lam}")
    arg = (g.mu_out - g.mu_in) / g.sigma_out + (g.sigma_in / g.sigma_out) * normal_ppf(lam)
    return normal_cdf(arg)


def fpr_component_sensitivity(m: BernoulliComponentModel) -> float:
    """Quantity proportional to d FPR / d n_components:
    (psi_out - psi_in) / (2 sqrt(n psi_out (1 - psi_out))). Negative iff
    psi_in > psi_out, i.e. adding components helps exactly when ID
    components are more reliably present than OOD ones."""
    n = m.n_components
    return (m.psi_out - m.psi_in) / (2.0 * math.sqrt(n * m.psi_out * (1.0 - m.psi_out)))


def correlation_penalty(
    g: GaussianScorePair, lam: float, cov_in_sum: float, cov_out_sum: float
) -> float:
    """First-order change of the Gaussian FPR argument when a new
    component covaries with the existing ones (summed covariances under
    ID and OOD), relative to an independent new component."""
    if not 0.0 < lam < 1.0:
        raise ConfigError(f"lambda must lie in (0, 1), got {lam}")
    q = normal_ppf(lam)
    so2 = g.sigma_out * g.sigma_out
    inner = (
        (g.mu_in - g.mu_out) / so2 * cov_out_sum
        + q / g.sigma_in * cov_in_sum
        - g.sigma_in * q / so2 * cov_out_sum
    )
    return inner / g.sigma_out


def _binomial_pmf(n: int, k: int, psi: float) -> float:
    if k < 0 or k > n:
        return 0.0
    if n <= _LOG_DOMAIN_N:
        return math.comb(n, k) * psi**k * (1.0 - psi) ** (n - k)
    log_pmf = (
        math.lgamma(n + 1)
        - math.lgamma(k + 1)
        - math.lgamma(n - k + 1)
        + k * math.log(psi)
        + (n - k) * math.log1p(-psi)
    )
    return math.exp(log_pmf)


def binomial_tail(n: int, t: int, psi: float) -> float:
    """P(S > t) for S ~ Binomial(n, psi).

    Directly sums whichever side of the threshold carries the smaller
    probability mass (the side away from the mean) and complements for
    the other, so tiny tails keep full relative accuracy instead of
    cancelling against 1. Coefficients go through log space for n > 500.
    """
    if t < 0:
        return 1.0
    if t >= n:
        return 0.0
    if t + 1 > n * psi:
        # upper tail is the small-mass side
        return math.fsum(_binomial_pmf(n, k, psi) for k in range(t + 1, n + 1))
    return 1.0 - math.fsum(_binomial_pmf(n, k, psi) for k in range(0, t + 1))


def threshold_for_tpr(
    m: BernoulliComponentModel,
    lam: float,
    convention: ThresholdConvention = "min_tail_le",
) -> int:
    """Integer decision threshold for the ID tail.

    Default convention: the minimal t >= 0 with P(S > t | psi_in) <= lam,
    which caps the TPR at lam. The conventional alternative
    ``max_tail_ge`` (largest t, from -1 up, with P(S > t | psi_in) >= lam,
    guaranteeing TPR >= lam) is available behind the flag; neither is
    silently substituted for the other.
    """
    if not 0.0 < lam <= 1.0:
        raise ConfigError(f"lambda must lie in (0, 1], got {lam}")
    n = m.n_components
    # P(S > t) is non-increasing in t; bisect for the first t with tail <= lam.
    lo, hi = 0, n  # tail(n) = 0 <= lam always
    while lo < hi:
        mid = (lo + hi) // 2
        if binomial_tail(n, mid, m.psi_in) <= lam:
            hi = mid
        else:
            lo = mid + 1
    if convention == "min_tail_le":
        return lo
    if convention == "max_tail_ge":
        # tail(lo - 1) > lam >= ... except when tail(lo - 1) == lam exactly.
        t = lo
        while t >= 0 and binomial_tail(n, t, m.psi_in) < lam:
            t -= 1
        return t
    raise ConfigError(f"unknown threshold convention {convention!r}")


def fpr_exact(
    m: BernoulliComponentModel,
    lam: float,
    convention: ThresholdConvention = "min_tail_le",
) -> float:
    """Exact OOD tail at the integer threshold: P(S > T | psi_out)."""
    t = threshold_for_tpr(m, lam, convention)
    return binomial_tail(m.n_components, t, m.psi_out)


class DeltaComponents(NamedTuple):
    """Change in exact FPR when one component is added.

    ``delta`` is the directly computed difference FPR(n+1) - FPR(n);
    ``closed_form`` is the per-case closed form (sign-exact: >= 0 when the
    threshold stays, <= 0 when it moves); the two are asserted to agree
    to 1e-12.
    """

    delta: float
    threshold_moved: bool
    closed_form: float


def delta_fpr_add_component(m: BernoulliComponentModel, lam: float) -> DeltaComponents:
    """FPR change from n to n+1 components at fixed lambda.

    Cross-checks the direct difference against the closed form derived
    from the binomial recursion
    P(S_{n+1} > T) = (1-psi) P(S_n > T) + psi P(S_n > T-1):

        threshold fixed:  delta = psi_out * pmf(n, T_{n+1})          >= 0
        threshold moved:  delta = (psi_out - 1) * pmf(n, T_{n+1})
                                  - sum_{p=T_n+1}^{T_{n+1}-1} pmf(n, p) <= 0
    """
    n = m.n_components
    psi_out = m.psi_out
    t_n = threshold_for_tpr(m, lam)
    m_next = BernoulliComponentModel(n + 1, m.psi_in, m.psi_out)
    t_n1 = threshold_for_tpr(m_next, lam)
    direct = binomial_tail(n + 1, t_n1, psi_out) - binomial_tail(n, t_n, psi_out)
    if t_n1 == t_n:
        closed = psi_out * _binomial_pmf(n, t_n1, psi_out)
    else:
        closed = (psi_out - 1.0) * _binomial_pmf(n, t_n1, psi_out) - math.fsum(
            _binomial_pmf(n, p, psi_out) for p in range(t_n + 1, t_n1)
        )
    if abs(direct - closed) > 1e-12:
        raise InternalInconsistency(
            f"closed-form delta {closed!r} != direct {direct!r} for "
            f"n={n} psi_in={m.psi_in} psi_out={psi_out} lambda={lam}"
        )
    return DeltaComponents(delta=direct, threshold_moved=t_n1 != t_n, closed_form=closed)


def monte_carlo_fpr(
    m: BernoulliComponentModel,
    lam: float,
    trials: int,
    seed: int,
    batch_size: int = 1_000_000,
) -> tuple[float, float]:
    """Simulated FPR at the exact integer threshold, with its binomial
    standard error. Trials are drawn in fixed-size batches whose RNG
    streams are keyed by (seed, batch index), so the estimate is
    bit-identical for a given seed regardless of how batches are
    dispatched."""
    if trials < 1000:
        raise ConfigError(f"trials must be >= 1000, got {trials}")
    t = threshold_for_tpr(m, lam)
    hits = 0
    done = 0
    batch_index = 0
    while done < trials:
        count = min(batch_size, trials - done)
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(batch_index,)))
        sums = rng.binomial(m.n_components, m.psi_out, size=count)
        hits += int(np.count_nonzero(sums > t))
        done += count
        batch_index += 1
    estimate = hits / trials
    std_error = math.sqrt(estimate * (1.0 - estimate) / trials)
    return estimate, std_error
