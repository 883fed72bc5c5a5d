"""Observation model: infection-to-death delay, expected deaths, count likelihood.

Expected daily deaths arise by convolving the daily infection increments with
a discretized Gamma delay distribution and scaling by the age-specific
infection fatality rate. Observed counts follow a negative binomial whose
variance is ``d * (1 + phi)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import gammaln

from .structures import AgeStructure
from .validation import (
    StructureError,
    ValidationError,
    as_float_array,
    check_nonnegative,
    check_positive,
    frozen_array,
)


def discretize_delay(shape: float, rate: float, truncation: int) -> np.ndarray:
    """Daily probability mass of a Gamma(shape, rate) delay.

    Day 1 absorbs all mass up to 1.5 days; day s >= 2 takes the mass on
    (s - 0.5, s + 0.5]. The result is not renormalized, so its sum is the
    CDF at truncation + 0.5.
    """
    if shape <= 0 or rate <= 0:
        raise ValidationError("Gamma shape and rate must be positive")
    if truncation < 1:
        raise ValidationError("truncation must be at least one day")
    dist = stats.gamma(a=shape, scale=1.0 / rate)
    edges = np.concatenate([[0.0], np.arange(1, truncation + 1) + 0.5])
    pmf = np.diff(dist.cdf(edges))
    return pmf


@dataclass(frozen=True)
class DelayDistribution:
    """Discretized infection-to-death delay."""

    shape: float
    rate: float
    pmf: np.ndarray

    def __init__(self, shape: float, rate: float, truncation: int = 60):
        pmf = discretize_delay(shape, rate, truncation)
        object.__setattr__(self, "shape", float(shape))
        object.__setattr__(self, "rate", float(rate))
        object.__setattr__(self, "pmf", frozen_array(pmf, "pmf", ndim=1))

    @property
    def truncation(self) -> int:
        return self.pmf.size

    @property
    def mean_days(self) -> float:
        """Mean of the discretized, truncation-renormalized distribution."""
        days = np.arange(1, self.truncation + 1)
        return float(days @ self.pmf / self.pmf.sum())

    def convolution_matrix(self, horizon_days: int) -> np.ndarray:
        """Lower-triangular (T, T) operator mapping daily infections to the
        delayed-death intensity: row t sums ``pmf[t-s]`` over past days s."""
        if horizon_days < 1:
            raise ValidationError("horizon_days must be >= 1")
        t_idx = np.arange(horizon_days)
        lag = t_idx[:, None] - t_idx[None, :]  # days between infection and death
        # zero weight for lag <= 0 and for lag beyond the truncation
        padded = np.concatenate([[0.0, 0.0], self.pmf, [0.0]])
        return padded[np.clip(lag + 1, 0, self.pmf.size + 2)]


def expected_deaths(
    new_infections, ages: AgeStructure, ifr, delay: DelayDistribution
) -> np.ndarray:
    """Expected daily death counts per age group.

    ``d[t, a] = ifr[a] * sum_{s < t} pmf[t - s] * new_infections[s, a] * N``
    with infections given as proportions of the total population.
    """
    delta = as_float_array(new_infections, "new_infections", ndim=2)
    check_nonnegative(delta, "new_infections")
    ifr = as_float_array(ifr, "ifr", ndim=1)
    if delta.shape[1] != ages.n_groups or ifr.size != ages.n_groups:
        raise StructureError("new_infections and ifr must match the age structure")
    if np.any(ifr <= 0) or np.any(ifr >= 1):
        raise ValidationError("ifr entries must lie in (0, 1)")
    weights = delay.convolution_matrix(delta.shape[0])
    return ifr[None, :] * (weights @ delta) * ages.total_population


def negbin_logpmf(y, d, phi: float):
    """Log pmf of the negative binomial with mean ``d`` and size ``d / phi``.

    Success probability is ``1 / (1 + phi)``, so the variance is
    ``d * (1 + phi)``. Cells with ``d == 0`` return 0 when ``y == 0`` and
    ``-inf`` otherwise (a point mass at zero).
    """
    y = np.asarray(y, dtype=float)
    d = np.asarray(d, dtype=float)
    if phi <= 0:
        raise ValidationError(f"overdispersion must be positive, got {phi}")
    if np.any(y < 0) or np.any(y != np.floor(y)):
        raise ValidationError("counts must be non-negative integers")
    if np.any(d < 0):
        raise ValidationError("means must be non-negative")
    r = np.where(d > 0, d, 1.0) / phi
    logp = (
        gammaln(y + r)
        - gammaln(r)
        - gammaln(y + 1.0)
        - r * np.log1p(phi)
        + y * (np.log(phi) - np.log1p(phi))
    )
    degenerate = np.where(y > 0, -np.inf, 0.0)
    out = np.where(d > 0, logp, degenerate)
    return out if out.ndim else float(out)


def deaths_loglik(y, d, phi: float) -> float:
    """Sum of negative-binomial log pmfs over all observed (day, group) cells.

    ``y`` may contain NaN for missing observations; those cells are skipped.
    """
    y = np.asarray(y, dtype=float)
    d = as_float_array(d, "expected deaths")
    if y.shape != d.shape:
        raise StructureError(f"observed {y.shape} and expected {d.shape} shapes differ")
    observed = np.isfinite(y)
    if np.any(y[observed] < 0):
        raise ValidationError("observed death counts must be non-negative")
    if not np.any(observed):
        return 0.0
    return float(np.sum(negbin_logpmf(y[observed], d[observed], phi)))


def sample_negbin(rng: np.random.Generator, d, phi: float) -> np.ndarray:
    """Draw counts with mean ``d`` and variance ``d * (1 + phi)``; zero where d is 0."""
    d = np.asarray(d, dtype=float)
    check_nonnegative(d, "d")
    if phi <= 0:
        raise ValidationError("overdispersion must be positive")
    out = np.zeros(d.shape, dtype=np.int64)
    positive = d > 0
    if np.any(positive):
        out[positive] = rng.negative_binomial(d[positive] / phi, 1.0 / (1.0 + phi))
    return out


@dataclass(frozen=True)
class ObservationModel:
    """Bundle of the observation-side quantities for a fitted or simulated epidemic."""

    ifr: np.ndarray
    delay: DelayDistribution
    overdispersion: float
    expected: np.ndarray  # (T, A) expected death counts

    def __init__(self, ifr, delay: DelayDistribution, overdispersion: float, expected):
        ifr = frozen_array(ifr, "ifr", ndim=1)
        if np.any(ifr <= 0) or np.any(ifr >= 1):
            raise ValidationError("ifr entries must lie in (0, 1)")
        check_positive(np.asarray([overdispersion]), "overdispersion")
        expected = frozen_array(expected, "expected", ndim=2)
        check_nonnegative(expected, "expected")
        object.__setattr__(self, "ifr", ifr)
        object.__setattr__(self, "delay", delay)
        object.__setattr__(self, "overdispersion", float(overdispersion))
        object.__setattr__(self, "expected", expected)

    @property
    def dispersion_param(self) -> np.ndarray:
        """Per-cell negative-binomial size parameter ``d / phi``."""
        return self.expected / self.overdispersion

    def count_variance(self) -> np.ndarray:
        return self.expected * (1.0 + self.overdispersion)
