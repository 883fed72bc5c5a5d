"""Weekly log-transmissibility random walks in non-centered form.

Transmissibility is piecewise constant over calendar weeks. Its log follows a
Gaussian random walk whose weekly increments are stored as standard-normal
innovations scaled by a per-path volatility, so the sampler sees decoupled
path and scale coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import StructureError, ValidationError, frozen_array

DAYS_PER_WEEK = 7


def build_path(x0: float, z, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Reconstruct one log-transmissibility path from its innovations.

    Parameters
    ----------
    x0 : float
        Log-transmissibility at week 0.
    z : (K,) array
        Standard-normal innovations, one per week.
    sigma : float
        Random-walk volatility, >= 0.

    Returns
    -------
    (log_path, beta_path) : ((K+1,), (K+1,)) arrays
        ``log_path[k] = x0 + sigma * sum(z[:k])`` and its elementwise exp.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or z.size < 1:
        raise StructureError("innovations must be a non-empty 1-d array")
    if sigma < 0:
        raise ValidationError(f"volatility must be non-negative, got {sigma}")
    log_path = np.concatenate([[x0], x0 + sigma * np.cumsum(z)])
    return log_path, np.exp(log_path)


def week_index(t: int, weeks: int) -> int:
    """Week that day ``t`` falls into (1-based; days 1..7 are week 1)."""
    if not 1 <= t <= DAYS_PER_WEEK * weeks:
        raise IndexError(f"day {t} outside the study horizon of {weeks} weeks")
    return -(-t // DAYS_PER_WEEK)


def week_of_day_map(weeks: int) -> np.ndarray:
    """Week index of every day 1..7K, as an int array of length 7K."""
    if weeks < 1:
        raise ValidationError("at least one week is required")
    return np.repeat(np.arange(1, weeks + 1), DAYS_PER_WEEK)


@dataclass(frozen=True)
class LatentPath:
    """One or more weekly log-transmissibility random walks.

    Attributes
    ----------
    x0 : (P,) array
        Initial log-transmissibility per path.
    innovations : (P, K) array
        Standard-normal weekly increments (non-centered coordinates).
    volatilities : (P,) array
        Random-walk scale per path, >= 0.
    """

    x0: np.ndarray
    innovations: np.ndarray
    volatilities: np.ndarray

    def __init__(self, x0, innovations, volatilities):
        x0 = frozen_array(np.atleast_1d(x0), "x0", ndim=1)
        innovations = frozen_array(np.atleast_2d(innovations), "innovations", ndim=2)
        volatilities = frozen_array(np.atleast_1d(volatilities), "volatilities", ndim=1)
        if not (x0.size == innovations.shape[0] == volatilities.size):
            raise StructureError(
                f"path counts disagree: x0 has {x0.size}, innovations {innovations.shape[0]}, "
                f"volatilities {volatilities.size}"
            )
        if innovations.shape[1] < 1:
            raise ValidationError("at least one week of innovations is required")
        if np.any(volatilities < 0):
            raise ValidationError("volatilities must be non-negative")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "innovations", innovations)
        object.__setattr__(self, "volatilities", volatilities)

    @property
    def n_paths(self) -> int:
        return self.x0.size

    @property
    def weeks(self) -> int:
        return self.innovations.shape[1]

    @property
    def log_path(self) -> np.ndarray:
        """(P, K+1) reconstructed log-transmissibility."""
        steps = self.volatilities[:, None] * self.innovations
        return np.concatenate([self.x0[:, None], self.x0[:, None] + np.cumsum(steps, axis=1)], axis=1)

    @property
    def beta(self) -> np.ndarray:
        """(P, K+1) transmissibility; strictly positive by construction."""
        return np.exp(self.log_path)

    @property
    def week_of_day(self) -> np.ndarray:
        return week_of_day_map(self.weeks)

    def beta_by_day(self) -> np.ndarray:
        """(P, 7K) transmissibility on each day of the study period."""
        return self.beta[:, 1:][:, self.week_of_day - 1]
