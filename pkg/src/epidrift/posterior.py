"""Joint log-posterior over unconstrained coordinates, with exact gradients.

The sampler works on an unconstrained vector holding (optionally) the log
progression rates, the initial log-transmissibility and weekly innovations of
each diffusion path, log volatilities, the log overdispersion, logit-scaled
initial seeds and the log upper-triangular contact elements. Evaluation runs
constrain -> path reconstruction -> daily SEEIIR integration -> delay
convolution -> negative-binomial likelihood, and the gradient is the exact
reverse-mode derivative of that composed map (the discretized model is what
gets differentiated, so density and gradient always agree).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._jax import jax, jnp
from .diffusion import LatentPath, week_of_day_map
from .observation import DelayDistribution
from .ode import E2 as _E2_COL
from .ode import NEGATIVITY_TOL, heun_states
from .structures import AgeStructure, ContactMatrix, ModelKind, RateParams
from .validation import StructureError, ValidationError, as_float_array

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of the (fixed-family) prior blocks.

    Families: normal for the initial log-transmissibility, half-normal for
    volatilities, exponential for the overdispersion, beta for the seed
    fraction of each group (relative to the group's population share),
    lognormal around the survey matrix for contact elements, and lognormal
    around the configured defaults for the progression rates when freed.
    """

    x0_loc: float = 0.0
    x0_scale: float = 1.0
    sigma_x_scale: float = 0.5
    phi_rate: float = 1.0
    seed_a: float = 1.0
    seed_b: float = 999.0
    contact_log_scale: float = 0.05
    tau_log_scale: float = 0.1
    gamma_log_scale: float = 0.1

    _FAMILIES = {
        "x0": ("normal", ("loc", "scale")),
        "sigma_x": ("half_normal", ("scale",)),
        "phi": ("exponential", ("rate",)),
        "seed": ("beta", ("a", "b")),
        "contacts": ("lognormal", ("scale",)),
        "tau": ("lognormal", ("scale",)),
        "gamma": ("lognormal", ("scale",)),
    }

    def __post_init__(self):
        for name in ("x0_scale", "sigma_x_scale", "phi_rate", "seed_a", "seed_b",
                     "contact_log_scale", "tau_log_scale", "gamma_log_scale"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"prior hyperparameter {name} must be positive")

    @classmethod
    def from_dict(cls, block: dict | None) -> "PriorConfig":
        """Parse the ``priors`` block of a run config; unknown names or
        families are rejected rather than silently ignored."""
        if not block:
            return cls()
        values: dict[str, float] = {}
        for name, spec in block.items():
            if name not in cls._FAMILIES:
                raise ValidationError(f"unknown prior block {name!r}")
            family, hypers = cls._FAMILIES[name]
            spec = dict(spec)
            dist = spec.pop("dist", family)
            if dist != family:
                raise ValidationError(
                    f"prior for {name!r} must use family {family!r}, got {dist!r}"
                )
            for key, val in spec.items():
                if key not in hypers:
                    raise ValidationError(f"prior {name!r} does not take hyperparameter {key!r}")
                field = f"{name}_{key}" if name != "contacts" else "contact_log_scale"
                if name in ("tau", "gamma"):
                    field = f"{name}_log_scale"
                values[field] = float(val)
        return cls(**values)

    def to_dict(self) -> dict:
        """Echo of the prior configuration, suitable for a results manifest."""
        return {
            "x0": {"dist": "normal", "loc": self.x0_loc, "scale": self.x0_scale},
            "sigma_x": {"dist": "half_normal", "scale": self.sigma_x_scale},
            "phi": {"dist": "exponential", "rate": self.phi_rate},
            "seed": {"dist": "beta", "a": self.seed_a, "b": self.seed_b},
            "contacts": {"dist": "lognormal", "scale": self.contact_log_scale},
            "tau": {"dist": "lognormal", "scale": self.tau_log_scale},
            "gamma": {"dist": "lognormal", "scale": self.gamma_log_scale},
        }


@dataclass(frozen=True)
class ConstrainedParams:
    """Structured model parameters produced by ``ParameterSpace.constrain``."""

    rates: RateParams
    path: LatentPath
    phi: float
    seeds: np.ndarray
    contact: ContactMatrix


class ParameterSpace:
    """Layout and transforms of the unconstrained parameter vector."""

    def __init__(
        self,
        kind: ModelKind,
        ages: AgeStructure,
        weeks: int,
        contact_center: ContactMatrix,
        priors: PriorConfig | None = None,
        rates: RateParams | None = None,
        free_rates: bool = False,
    ):
        if weeks < 1:
            raise ValidationError("weeks must be >= 1")
        if contact_center.n_groups != ages.n_groups:
            raise StructureError("contact matrix and age structure disagree")
        self.kind = ModelKind.parse(kind)
        self.ages = ages
        self.weeks = int(weeks)
        self.contact_center = contact_center
        self.priors = priors or PriorConfig()
        self.rates = rates or RateParams.from_periods(3.0, 4.0)
        self.free_rates = bool(free_rates)

        a = ages.n_groups
        self.n_paths = self.kind.n_paths(a)
        self._upper = np.triu_indices(a)
        self.contact_log_center = np.log(contact_center.entries[self._upper])

        names: list[str] = []
        if self.free_rates:
            names += ["log_tau", "log_gamma"]
        path_labels = ages.group_labels if self.n_paths > 1 else ("",)
        suffix = [f"[{lbl}]" if lbl else "" for lbl in path_labels]
        names += [f"x0{s}" for s in suffix]
        for s in suffix:
            names += [f"z{s[:-1]},{k}]" if s else f"z[{k}]" for k in range(1, weeks + 1)]
        names += [f"log_sigma_x{s}" for s in suffix]
        names += ["log_phi"]
        names += [f"rho_logit[{lbl}]" for lbl in ages.group_labels]
        names += [
            f"log_C[{ages.group_labels[i]}|{ages.group_labels[j]}]"
            for i, j in zip(*self._upper)
        ]
        self.names = names
        self.size = len(names)

        i = 2 if self.free_rates else 0
        p, k = self.n_paths, self.weeks
        self._s_rates = slice(0, i)
        self._s_x0 = slice(i, i + p)
        self._s_z = slice(i + p, i + p + p * k)
        self._s_sigma = slice(i + p + p * k, i + p + p * k + p)
        i = i + p + p * k + p
        self._s_phi = slice(i, i + 1)
        self._s_rho = slice(i + 1, i + 1 + a)
        self._s_contact = slice(i + 1 + a, i + 1 + a + a * (a + 1) // 2)
        assert self._s_contact.stop == self.size

    # -- transforms ---------------------------------------------------------

    def constrain(self, theta) -> tuple[ConstrainedParams, float]:
        """Map an unconstrained vector to structured parameters.

        Returns the parameters together with the log absolute Jacobian
        determinant of the transform.
        """
        theta = as_float_array(theta, "theta", ndim=1)
        if theta.size != self.size:
            raise StructureError(f"expected {self.size} coordinates, got {theta.size}")
        if not np.all(np.isfinite(theta)):
            raise ValidationError("unconstrained coordinates must be finite")

        log_jac = 0.0
        if self.free_rates:
            log_tau, log_gamma = theta[self._s_rates]
            rates = RateParams(tau=math.exp(log_tau), gamma=math.exp(log_gamma))
            log_jac += log_tau + log_gamma
        else:
            rates = self.rates

        p, k = self.n_paths, self.weeks
        x0 = theta[self._s_x0]
        z = theta[self._s_z].reshape(p, k)
        log_sigma = theta[self._s_sigma]
        path = LatentPath(x0, z, np.exp(log_sigma))
        log_jac += float(np.sum(log_sigma))

        log_phi = theta[self._s_phi][0]
        phi = math.exp(log_phi)
        log_jac += log_phi

        u_rho = theta[self._s_rho]
        q = _expit(u_rho)
        seeds = self.ages.group_fractions * q
        log_jac += float(np.sum(np.log(self.ages.group_fractions) + _log_expit(u_rho) + _log_expit(-u_rho)))

        u_c = theta[self._s_contact]
        contact = ContactMatrix(self._complete_contact(np.exp(u_c)), self.ages)
        log_jac += float(np.sum(u_c))

        return ConstrainedParams(rates, path, phi, seeds, contact), log_jac

    def unconstrain(self, params: ConstrainedParams) -> np.ndarray:
        theta = np.empty(self.size)
        if self.free_rates:
            theta[self._s_rates] = [math.log(params.rates.tau), math.log(params.rates.gamma)]
        theta[self._s_x0] = params.path.x0
        theta[self._s_z] = params.path.innovations.ravel()
        theta[self._s_sigma] = np.log(params.path.volatilities)
        theta[self._s_phi] = math.log(params.phi)
        q = params.seeds / self.ages.group_fractions
        theta[self._s_rho] = np.log(q) - np.log1p(-q)
        theta[self._s_contact] = np.log(params.contact.entries[self._upper])
        return theta

    def _complete_contact(self, upper_vals: np.ndarray) -> np.ndarray:
        """Fill a full matrix from upper-triangle values, lower triangle by
        reciprocity ``C[j,i] = C[i,j] * N_i / N_j``."""
        a = self.ages.n_groups
        pops = self.ages.group_populations
        c = np.zeros((a, a))
        c[self._upper] = upper_vals
        lower = (c * pops[:, None] / pops[None, :]).T
        return np.where(np.arange(a)[:, None] <= np.arange(a)[None, :], c, lower)

    def reference_init(self) -> np.ndarray:
        """A model-aware starting point: tiny seeds, unit reproduction number,
        calm diffusion, contact matrix at its survey center."""
        theta = np.zeros(self.size)
        f = self.ages.group_fractions
        m0 = self.rates.mean_infectious_period * self.contact_center.entries * (f[:, None] / f[None, :])
        spectral = float(np.max(np.abs(np.linalg.eigvals(m0))))
        theta[self._s_x0] = -math.log(max(spectral, 1e-12))
        theta[self._s_sigma] = math.log(0.1)
        theta[self._s_rho] = math.log(1e-5 / (1 - 1e-5))
        theta[self._s_contact] = self.contact_log_center
        return theta


def _expit(x):
    return 1.0 / (1.0 + np.exp(-x))


def _log_expit(x):
    return -np.logaddexp(0.0, -x)


# -- prior log densities (JAX) ----------------------------------------------

def _normal_lp(x, loc, scale):
    return -0.5 * ((x - loc) / scale) ** 2 - jnp.log(scale) - LOG_SQRT_2PI


def _half_normal_lp(x, scale):
    return math.log(2.0) - 0.5 * (x / scale) ** 2 - jnp.log(scale) - LOG_SQRT_2PI


def _exponential_lp(x, rate):
    return jnp.log(rate) - rate * x


def _beta_lp(q, a, b):
    log_b = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
    return (a - 1.0) * jnp.log(q) + (b - 1.0) * jnp.log1p(-q) - log_b


@dataclass(frozen=True)
class PosteriorParts:
    """Additive decomposition of one log-posterior evaluation."""

    value: float
    loglik: float
    log_prior: float
    innovation_logdensity: float
    log_jacobian: float
    unstable: bool


class LogPosterior:
    """Evaluate the joint log-posterior and its gradient for fixed data.

    Instances close over the observed deaths, age structure, infection
    fatality rates and delay distribution; they are pure and reentrant, so one
    instance can serve several chains concurrently.
    """

    def __init__(
        self,
        space: ParameterSpace,
        deaths,
        ifr,
        delay: DelayDistribution,
    ):
        self.space = space
        ages = space.ages
        a = ages.n_groups
        deaths = np.asarray(deaths, dtype=float)
        horizon = 7 * space.weeks
        if deaths.shape != (horizon, a):
            raise StructureError(
                f"deaths must be ({horizon}, {a}) for a {space.weeks}-week study, got {deaths.shape}"
            )
        observed = np.isfinite(deaths)
        if np.any(deaths[observed] < 0):
            raise ValidationError("death counts must be non-negative")
        ifr = as_float_array(ifr, "ifr", ndim=1)
        if ifr.size != a:
            raise StructureError("ifr must have one entry per age group")
        if np.any(ifr <= 0) or np.any(ifr >= 1):
            raise ValidationError("ifr entries must lie in (0, 1)")
        self.delay = delay
        self.horizon_days = horizon

        # static data baked into the compiled functions
        self._y = jnp.asarray(np.where(observed, deaths, 0.0))
        self._mask = jnp.asarray(observed)
        self._ifr = jnp.asarray(ifr)
        self._conv = jnp.asarray(delay.convolution_matrix(horizon))
        self._f = jnp.asarray(ages.group_fractions)
        self._pops = jnp.asarray(ages.group_populations)
        self._total = ages.total_population
        self._week_of_day0 = jnp.asarray(week_of_day_map(space.weeks) - 1)
        self._upper = space._upper
        self._log_center = jnp.asarray(space.contact_log_center)

        self._value_jit = jax.jit(lambda th: self._compose(th)[0])
        self._value_and_grad_jit = jax.jit(jax.value_and_grad(lambda th: self._compose(th)[0]))
        self._parts_jit = jax.jit(lambda th: self._compose(th)[1])
        self._forward_jit = jax.jit(jax.vmap(self._forward_one))

    # -- public API ---------------------------------------------------------

    def __call__(self, theta) -> float:
        return self.log_posterior(theta)

    def log_posterior(self, theta) -> float:
        theta = self._check_theta(theta)
        return float(self._value_jit(theta))

    def value_and_grad(self, theta) -> tuple[float, np.ndarray]:
        theta = self._check_theta(theta)
        value, grad = self._value_and_grad_jit(theta)
        return float(value), np.asarray(grad)

    def grad_log_posterior(self, theta) -> np.ndarray:
        return self.value_and_grad(theta)[1]

    def parts(self, theta) -> PosteriorParts:
        theta = self._check_theta(theta)
        loglik, prior, innov, jac, unstable = (np.asarray(v) for v in self._parts_jit(theta))
        unstable = bool(unstable)
        value = -np.inf if unstable else float(loglik + prior + innov + jac)
        return PosteriorParts(
            value=value,
            loglik=float(loglik),
            log_prior=float(prior),
            innovation_logdensity=float(innov),
            log_jacobian=float(jac),
            unstable=unstable,
        )

    def forward(self, thetas, batch_size: int = 256) -> dict[str, np.ndarray]:
        """Forward model quantities for a stack of parameter vectors.

        Returns arrays keyed by name, each with the draw index leading:
        ``beta`` (n, P, K+1), ``new_infections`` and ``expected_deaths``
        (n, T, A) with infections as proportions, ``susceptible`` (n, T+1, A),
        ``contact`` (n, A, A), ``sigma_x`` (n, P), ``seeds`` (n, A) and
        ``phi`` (n,).
        """
        thetas = np.atleast_2d(as_float_array(thetas, "thetas"))
        if thetas.shape[1] != self.space.size:
            raise StructureError(f"expected {self.space.size} coordinates per draw")
        chunks = []
        for start in range(0, thetas.shape[0], batch_size):
            out = self._forward_jit(jnp.asarray(thetas[start : start + batch_size]))
            chunks.append({k: np.asarray(v) for k, v in out.items()})
        return {k: np.concatenate([c[k] for c in chunks], axis=0) for k in chunks[0]}

    # -- internals (JAX-traced) ---------------------------------------------

    def _check_theta(self, theta) -> jnp.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.space.size,):
            raise StructureError(f"expected {self.space.size} coordinates, got shape {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ValidationError("unconstrained coordinates must be finite")
        return jnp.asarray(theta)

    def _unpack(self, theta):
        sp = self.space
        if sp.free_rates:
            log_tau, log_gamma = theta[sp._s_rates]
        else:
            log_tau = jnp.asarray(math.log(sp.rates.tau))
            log_gamma = jnp.asarray(math.log(sp.rates.gamma))
        x0 = theta[sp._s_x0]
        z = theta[sp._s_z].reshape(sp.n_paths, sp.weeks)
        log_sigma = theta[sp._s_sigma]
        log_phi = theta[sp._s_phi][0]
        u_rho = theta[sp._s_rho]
        u_c = theta[sp._s_contact]
        return log_tau, log_gamma, x0, z, log_sigma, log_phi, u_rho, u_c

    def _contact_full(self, u_c):
        a = self.space.ages.n_groups
        c = jnp.zeros((a, a)).at[self._upper].set(jnp.exp(u_c))
        lower = (c * self._pops[:, None] / self._pops[None, :]).T
        return jnp.where(jnp.arange(a)[:, None] <= jnp.arange(a)[None, :], c, lower)

    def _trajectory(self, theta):
        """Shared forward pass: returns everything downstream terms need."""
        sp = self.space
        log_tau, log_gamma, x0, z, log_sigma, log_phi, u_rho, u_c = self._unpack(theta)
        tau, gamma = jnp.exp(log_tau), jnp.exp(log_gamma)
        sigma = jnp.exp(log_sigma)
        phi = jnp.exp(log_phi)
        q = jax.nn.sigmoid(u_rho)
        seeds = self._f * q
        contact = self._contact_full(u_c)

        log_path = x0[:, None] + jnp.concatenate(
            [jnp.zeros((sp.n_paths, 1)), jnp.cumsum(sigma[:, None] * z, axis=1)], axis=1
        )
        beta = jnp.exp(log_path)  # (P, K+1)
        by_day = beta[:, 1:][:, self._week_of_day0]  # (P, T)
        a = sp.ages.n_groups
        beta_day = jnp.broadcast_to(by_day.T, (self.horizon_days, a))

        quarter = seeds / 4.0
        state0 = jnp.stack(
            [self._f - seeds, quarter, quarter, quarter, quarter, jnp.zeros(a)], axis=1
        )
        states, day_min = heun_states(state0, beta_day, contact, self._f, tau, gamma)
        unstable = ~jnp.all(day_min >= -NEGATIVITY_TOL)  # NaN overflow counts too

        e2 = states[:, :, _E2_COL]
        delta = jnp.maximum(tau * 0.5 * (e2[:-1] + e2[1:]), 0.0)
        d = self._ifr[None, :] * (self._conv @ delta) * self._total
        return {
            "tau": tau, "gamma": gamma, "log_tau": log_tau, "log_gamma": log_gamma,
            "x0": x0, "z": z, "sigma": sigma, "log_sigma": log_sigma,
            "phi": phi, "log_phi": log_phi, "q": q, "u_rho": u_rho, "seeds": seeds,
            "u_c": u_c, "contact": contact, "beta": beta, "states": states,
            "delta": delta, "expected": d, "unstable": unstable,
        }

    def _loglik(self, d, phi):
        r = jnp.where(d > 0, d, 1.0) / phi
        lp = (
            jax.scipy.special.gammaln(self._y + r)
            - jax.scipy.special.gammaln(r)
            - jax.scipy.special.gammaln(self._y + 1.0)
            - r * jnp.log1p(phi)
            + self._y * (jnp.log(phi) - jnp.log1p(phi))
        )
        lp = jnp.where(d > 0, lp, jnp.where(self._y > 0, -jnp.inf, 0.0))
        return jnp.sum(jnp.where(self._mask, lp, 0.0))

    def _log_prior_and_jac(self, t):
        pr = self.space.priors
        prior = jnp.sum(_normal_lp(t["x0"], pr.x0_loc, pr.x0_scale))
        prior += jnp.sum(_half_normal_lp(t["sigma"], pr.sigma_x_scale))
        prior += _exponential_lp(t["phi"], pr.phi_rate)
        # seed prior is a beta on the within-group seeded fraction; the 1/f
        # factor from rescaling is part of the density, not the Jacobian
        prior += jnp.sum(_beta_lp(t["q"], pr.seed_a, pr.seed_b) - jnp.log(self._f))
        prior += jnp.sum(_normal_lp(t["u_c"], self._log_center, pr.contact_log_scale) - t["u_c"])
        jac = jnp.sum(t["log_sigma"]) + t["log_phi"] + jnp.sum(t["u_c"])
        jac += jnp.sum(jnp.log(self._f) + jax.nn.log_sigmoid(t["u_rho"]) + jax.nn.log_sigmoid(-t["u_rho"]))
        if self.space.free_rates:
            rates = self.space.rates
            prior += _normal_lp(t["log_tau"], math.log(rates.tau), pr.tau_log_scale) - t["log_tau"]
            prior += _normal_lp(t["log_gamma"], math.log(rates.gamma), pr.gamma_log_scale) - t["log_gamma"]
            jac += t["log_tau"] + t["log_gamma"]
        return prior, jac

    def _compose(self, theta):
        t = self._trajectory(theta)
        loglik = self._loglik(t["expected"], t["phi"])
        prior, jac = self._log_prior_and_jac(t)
        innov = jnp.sum(-0.5 * t["z"] ** 2 - LOG_SQRT_2PI)
        total = loglik + prior + innov + jac
        # the sampler contract is "finite or -inf": fold NaN into -inf
        value = jnp.where(t["unstable"] | jnp.isnan(total), -jnp.inf, total)
        return value, (loglik, prior, innov, jac, t["unstable"])

    def _forward_one(self, theta):
        t = self._trajectory(theta)
        return {
            "beta": t["beta"],
            "new_infections": t["delta"],
            "expected_deaths": t["expected"],
            "susceptible": t["states"][:, :, 0],
            "contact": t["contact"],
            "sigma_x": t["sigma"],
            "seeds": t["seeds"],
            "phi": t["phi"],
        }


def make_logp_fn(posterior: LogPosterior) -> Callable[[np.ndarray], tuple[float, np.ndarray]]:
    """Adapter returning the (value, gradient) callable the sampler consumes."""
    return posterior.value_and_grad
