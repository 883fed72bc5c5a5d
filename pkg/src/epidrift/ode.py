"""Deterministic forward solution of the two-stage SEEIIR system.

Compartments are proportions of the total population. Each day is advanced
with the explicit trapezoidal (Heun predictor-corrector) scheme, holding
transmissibility constant within each calendar week. Daily new-infection
increments are the trapezoidal quadrature of the flow out of the second
exposed stage.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial

import numpy as np

from ._jax import jax, jnp
from .diffusion import LatentPath
from .structures import AgeStructure, ContactMatrix, ModelKind, RateParams
from .validation import (
    NumericalInstabilityError,
    StructureError,
    ValidationError,
    as_float_array,
    frozen_array,
)

NEGATIVITY_TOL = 1e-10
MASS_TOL = 1e-8

# compartment order along the last axis
S, E1, E2, I1, I2, R = range(6)


@dataclass(frozen=True)
class CompartmentState:
    """Proportions of the total population in each compartment, per age group.

    ``proportions`` has shape (A, 6) with columns S, E1, E2, I1, I2, R.
    """

    proportions: np.ndarray

    def __init__(self, proportions):
        arr = frozen_array(proportions, "proportions", ndim=2)
        if arr.shape[1] != 6:
            raise StructureError(f"expected 6 compartments, got shape {arr.shape}")
        if np.min(arr) < -NEGATIVITY_TOL:
            raise ValidationError(f"negative compartment proportion (min {np.min(arr):g})")
        total = float(arr.sum())
        if abs(total - 1.0) > MASS_TOL:
            raise ValidationError(f"compartments sum to {total!r}, expected 1")
        object.__setattr__(self, "proportions", arr)

    @classmethod
    def from_seed(cls, ages: AgeStructure, seed_proportions) -> "CompartmentState":
        """Initial state with per-group seed mass split equally over E1, E2, I1, I2.

        ``seed_proportions`` are proportions of the *total* population initially
        infected in each group; susceptibles start at the group fraction minus
        the seed, removed at zero.
        """
        rho = as_float_array(seed_proportions, "seed_proportions", ndim=1)
        f = ages.group_fractions
        if rho.size != ages.n_groups:
            raise StructureError("seed_proportions length must match the number of age groups")
        if np.any(rho < 0) or np.any(rho > f):
            raise ValidationError("seeds must lie in [0, group fraction] for every group")
        quarter = rho / 4.0
        cols = [f - rho, quarter, quarter, quarter, quarter, np.zeros_like(rho)]
        return cls(np.stack(cols, axis=1))

    @property
    def n_groups(self) -> int:
        return self.proportions.shape[0]

    @property
    def infectious(self) -> np.ndarray:
        """I1 + I2 per group."""
        return self.proportions[:, I1] + self.proportions[:, I2]


@dataclass(frozen=True)
class EpidemicTrajectory:
    """Daily compartment states and new-infection increments.

    Attributes
    ----------
    states : (T+1, A, 6) array
        Compartment proportions at days 0..T.
    new_infections : (T, A) array
        Infections accrued during each day, as proportions of the population.
    """

    states: np.ndarray
    new_infections: np.ndarray

    def __init__(self, states, new_infections):
        states = frozen_array(states, "states")
        new_infections = frozen_array(new_infections, "new_infections", ndim=2)
        if states.ndim != 3 or states.shape[2] != 6:
            raise StructureError(f"states must be (T+1, A, 6), got {states.shape}")
        if new_infections.shape != (states.shape[0] - 1, states.shape[1]):
            raise StructureError("new_infections shape must be (T, A)")
        if np.min(new_infections) < -NEGATIVITY_TOL:
            raise ValidationError("new_infections must be non-negative")
        # infections cannot exceed the initially at-risk mass in any group
        available = states[0, :, S] + states[0, :, [E1, E2, I1, I2]].sum(axis=0)
        overrun = new_infections.sum(axis=0) - available
        if np.any(overrun > MASS_TOL):
            raise ValidationError("cumulative infections exceed the initially at-risk mass")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "new_infections", new_infections)

    @property
    def horizon_days(self) -> int:
        return self.states.shape[0] - 1

    @property
    def n_groups(self) -> int:
        return self.states.shape[1]

    def susceptible(self) -> np.ndarray:
        """(T+1, A) susceptible proportions."""
        return self.states[:, :, S]


def force_of_infection(rate_matrix, state: CompartmentState, ages: AgeStructure) -> np.ndarray:
    """Per-susceptible daily infection rate for each age group.

    ``lambda_a = sum_b rate_matrix[a, b] * (I1_b + I2_b) / f_b`` where ``f_b``
    is the population fraction of group b (compartments are proportions of the
    total population, so dividing by the fraction recovers within-group
    prevalence).
    """
    rate_matrix = as_float_array(rate_matrix, "rate_matrix", ndim=2)
    if rate_matrix.shape != (ages.n_groups, ages.n_groups):
        raise StructureError("rate_matrix does not match the age structure")
    if state.n_groups != ages.n_groups:
        raise StructureError("state does not match the age structure")
    return rate_matrix @ (state.infectious / ages.group_fractions)


def seeiir_rhs(state: CompartmentState, lam, rates: RateParams) -> np.ndarray:
    """Time derivative of the compartment proportions, shape (A, 6)."""
    lam = as_float_array(lam, "lam", ndim=1)
    if lam.size != state.n_groups:
        raise StructureError("force-of-infection vector does not match the state")
    if np.any(lam < 0):
        raise ValidationError("force of infection must be non-negative")
    return np.asarray(_rhs(jnp.asarray(state.proportions), jnp.asarray(lam), rates.tau, rates.gamma))


def _rhs(state, lam, tau, gamma):
    """SEEIIR right-hand side; state (A, 6), lam (A,).

    Each inter-compartment flux is computed once so the columns telescope and
    total mass is conserved to roundoff.
    """
    infection = lam * state[:, S]
    e1_out = tau * state[:, E1]
    e2_out = tau * state[:, E2]
    i1_out = gamma * state[:, I1]
    i2_out = gamma * state[:, I2]
    return jnp.stack(
        [
            -infection,
            infection - e1_out,
            e1_out - e2_out,
            e2_out - i1_out,
            i1_out - i2_out,
            i2_out,
        ],
        axis=1,
    )


def _rhs_from_beta(state, beta_vec, contact, fractions, tau, gamma):
    m = beta_vec[:, None] * contact
    lam = m @ ((state[:, I1] + state[:, I2]) / fractions)
    return _rhs(state, lam, tau, gamma)


@partial(jax.jit, static_argnames="steps_per_day")
def heun_states(state0, beta_day, contact, fractions, tau, gamma, steps_per_day=1):
    """Advance the system one day at a time with Heun's method.

    Parameters are JAX-traceable; ``beta_day`` has shape (T, A) giving the
    transmissibility vector in force on each day (constant within the day).

    Returns
    -------
    states : (T+1, A, 6) array
    day_min : (T,) array of the minimum compartment value reached each day
    """
    h = 1.0 / steps_per_day

    def one_day(state, beta_vec):
        def substep(st, _):
            f1 = _rhs_from_beta(st, beta_vec, contact, fractions, tau, gamma)
            predictor = st + h * f1
            f2 = _rhs_from_beta(predictor, beta_vec, contact, fractions, tau, gamma)
            new = st + 0.5 * h * (f1 + f2)
            return new, None

        state, _ = jax.lax.scan(substep, state, None, length=steps_per_day)
        return state, (state, jnp.min(state))

    _, (states, day_min) = jax.lax.scan(one_day, state0, beta_day)
    return jnp.concatenate([state0[None], states], axis=0), day_min


def daily_new_infections(e2_series, tau: float) -> np.ndarray:
    """Trapezoidal quadrature of the E2 -> I1 flow on the daily grid.

    ``e2_series`` holds E2 proportions at days 0..T, shape (T+1, A) (or
    (T+1,) for one group); the result has one row per day.
    """
    e2 = as_float_array(e2_series, "e2_series")
    if e2.ndim == 1:
        e2 = e2[:, None]
    if e2.shape[0] < 2:
        raise StructureError("need at least two grid points")
    return tau * 0.5 * (e2[:-1] + e2[1:])


def integrate(
    initial: CompartmentState,
    rates: RateParams,
    beta_path: LatentPath,
    contact: ContactMatrix,
    kind: ModelKind,
    ages: AgeStructure,
    horizon_days: int,
    steps_per_day: int = 1,
) -> EpidemicTrajectory:
    """Solve the SEEIIR system over ``horizon_days`` days.

    Transmissibility is held constant within each week; day t uses the path
    value of week ceil(t/7). Raises :class:`NumericalInstabilityError` if any
    compartment drops below ``-1e-10`` during integration.
    """
    if horizon_days < 1:
        raise ValidationError("horizon_days must be >= 1")
    a = ages.n_groups
    if initial.n_groups != a or contact.n_groups != a:
        raise StructureError("initial state, contact matrix and age structure disagree")
    if beta_path.n_paths != kind.n_paths(a):
        raise StructureError(
            f"{kind.value} requires {kind.n_paths(a)} diffusion paths, got {beta_path.n_paths}"
        )
    if beta_path.weeks * 7 < horizon_days:
        raise StructureError(
            f"latent path covers {beta_path.weeks * 7} days but horizon is {horizon_days}"
        )
    if steps_per_day < 1:
        raise ValidationError("steps_per_day must be >= 1")

    per_day = beta_path.beta_by_day()[:, :horizon_days]  # (P, T)
    beta_day = np.broadcast_to(per_day.T, (horizon_days, a)) if beta_path.n_paths == 1 else per_day.T

    states, day_min = heun_states(
        jnp.asarray(initial.proportions),
        jnp.asarray(beta_day),
        jnp.asarray(contact.entries),
        jnp.asarray(ages.group_fractions),
        rates.tau,
        rates.gamma,
        steps_per_day=steps_per_day,
    )
    day_min = np.asarray(day_min)
    bad = ~(day_min >= -NEGATIVITY_TOL)  # catches NaN overflow as well
    if np.any(bad):
        step = int(np.argmax(bad)) + 1
        raise NumericalInstabilityError(
            f"compartment went negative or non-finite (day minimum {day_min[bad][0]:.3e}) "
            f"at day {step}; the proposed parameters make the daily scheme unstable"
        )
    states = np.asarray(states)
    return EpidemicTrajectory(states, daily_new_infections(states[:, :, E2], rates.tau))
