"""Dynamic Hamiltonian Monte Carlo (multinomial no-U-turn sampler).

Trajectories grow by doubling until the generalized U-turn criterion fires,
with multinomial sampling of the proposal along the trajectory. Warm-up
interleaves dual-averaging step-size adaptation with diagonal mass-matrix
estimation over expanding memory windows. Each chain owns an independent
random stream derived from (seed, chain index), so results are reproducible
regardless of how chains are scheduled.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
import pandas as pd

from .diagnostics import diagnostics_table
from .validation import SamplerFailure, ValidationError

LogpGradFn = Callable[[np.ndarray], tuple[float, np.ndarray]]

DIVERGENCE_THRESHOLD = 1000.0  # energy error that flags a divergent leapfrog
HARD_FAILURE_DIVERGENCE_RATE = 0.5


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup_iterations: int = 1000
    sampling_iterations: int = 1000
    target_acceptance: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    initial_jitter: float = 1.0

    def __post_init__(self):
        if min(self.chains, self.warmup_iterations, self.sampling_iterations) < 1:
            raise ValidationError("chains, warmup and sampling iteration counts must be >= 1")
        if not (0.0 < self.target_acceptance < 1.0):
            raise ValidationError("target_acceptance must lie in (0, 1)")
        if self.max_tree_depth < 1:
            raise ValidationError("max_tree_depth must be >= 1")


@dataclass
class ChainOutput:
    """Post-warmup record of a single chain."""

    draws: np.ndarray  # (sampling_iterations, dim)
    logp: np.ndarray  # (sampling_iterations,)
    divergent: np.ndarray  # (sampling_iterations,) bool
    accept_stat: np.ndarray  # (sampling_iterations,)
    step_size: float
    mass_diagonal: np.ndarray  # estimated posterior variances (inverse metric)
    warmup_divergences: int

    @property
    def divergence_rate(self) -> float:
        return float(np.mean(self.divergent))


@dataclass
class SampleResult:
    """All chains plus cross-chain convergence diagnostics."""

    chains: list[ChainOutput]
    diagnostics: pd.DataFrame  # per coordinate: rhat, ess_bulk, ess_tail
    config: SamplerConfig

    @property
    def draws(self) -> np.ndarray:
        """(chains, sampling_iterations, dim) stacked post-warmup draws."""
        return np.stack([c.draws for c in self.chains])

    @property
    def divergence_rate(self) -> float:
        return float(np.mean([c.divergence_rate for c in self.chains]))

    def flat_draws(self) -> np.ndarray:
        """(chains * iterations, dim) pooled draws."""
        return self.draws.reshape(-1, self.draws.shape[-1])


# -- Hamiltonian pieces -------------------------------------------------------


@dataclass
class _Leaf:
    theta: np.ndarray
    r: np.ndarray
    logp: float
    grad: np.ndarray


@dataclass
class _Tree:
    """A balanced subtree of the trajectory; carries both endpoints,
    the multinomial proposal, and the statistics the U-turn test needs."""

    minus: _Leaf
    plus: _Leaf
    proposal: _Leaf
    log_weight: float
    r_sum: np.ndarray
    accept_sum: float
    n_leaves: int
    divergent: bool
    turning: bool


def _kinetic(r: np.ndarray, inv_mass: np.ndarray) -> float:
    return 0.5 * float(r @ (inv_mass * r))


def _is_turning(r_sum: np.ndarray, r_minus: np.ndarray, r_plus: np.ndarray,
                inv_mass: np.ndarray) -> bool:
    return (r_sum @ (inv_mass * r_minus) <= 0) or (r_sum @ (inv_mass * r_plus) <= 0)


class _NutsChain:
    def __init__(self, fn: LogpGradFn, dim: int, config: SamplerConfig,
                 chain_index: int, init_center: np.ndarray):
        self.fn = fn
        self.dim = dim
        self.config = config
        self.rng = np.random.default_rng([config.seed, chain_index])
        self.inv_mass = np.ones(dim)
        self.theta, self.logp, self.grad = self._initialize(init_center)
        self.step_size = self._reasonable_step_size()
        self._da_reset()

    # -- setup ---------------------------------------------------------------

    def _initialize(self, center: np.ndarray):
        for _ in range(100):
            theta = center + self.config.initial_jitter * self.rng.standard_normal(self.dim)
            logp, grad = self.fn(theta)
            if math.isfinite(logp) and np.all(np.isfinite(grad)):
                return theta, logp, grad
        raise SamplerFailure(
            "no finite starting point found in 100 attempts; "
            "check the initial_jitter scale and the model's stable region"
        )

    def _reasonable_step_size(self) -> float:
        """Double/halve until the one-step acceptance crosses 1/2."""
        eps = 1.0
        r = self.rng.standard_normal(self.dim) / np.sqrt(self.inv_mass)
        h0 = self.logp - _kinetic(r, self.inv_mass)

        def energy_error(eps: float) -> float:
            leaf, ok = self._leapfrog(_Leaf(self.theta, r, self.logp, self.grad), eps)
            if not ok:
                return -np.inf
            return leaf.logp - _kinetic(leaf.r, self.inv_mass) - h0

        direction = 1 if energy_error(eps) > math.log(0.5) else -1
        for _ in range(100):
            eps_next = eps * 2.0**direction
            if not (1e-10 < eps_next < 1e7):
                break
            if direction * energy_error(eps_next) <= direction * math.log(0.5):
                break
            eps = eps_next
        return eps

    def _da_reset(self):
        self._da_mu = math.log(10.0 * self.step_size)
        self._da_log_eps_bar = 0.0
        self._da_h_bar = 0.0
        self._da_count = 0

    def _da_update(self, accept_stat: float):
        # dual averaging toward the target acceptance (gamma=0.05, t0=10, kappa=0.75)
        self._da_count += 1
        m = self._da_count
        eta = 1.0 / (m + 10.0)
        self._da_h_bar = (1 - eta) * self._da_h_bar + eta * (
            self.config.target_acceptance - accept_stat
        )
        log_eps = self._da_mu - math.sqrt(m) / 0.05 * self._da_h_bar
        w = m**-0.75
        self._da_log_eps_bar = (1 - w) * self._da_log_eps_bar + w * log_eps
        self.step_size = math.exp(log_eps)

    # -- trajectory construction ----------------------------------------------

    def _leapfrog(self, leaf: _Leaf, eps: float) -> tuple[_Leaf, bool]:
        r_half = leaf.r + 0.5 * eps * leaf.grad
        theta = leaf.theta + eps * self.inv_mass * r_half
        logp, grad = self.fn(theta)
        if not (math.isfinite(logp) and np.all(np.isfinite(grad))):
            return _Leaf(theta, r_half, -np.inf, np.zeros(self.dim)), False
        r_new = r_half + 0.5 * eps * grad
        return _Leaf(theta, r_new, logp, grad), True

    def _base_leaf(self, leaf: _Leaf, direction: int, h0: float) -> _Tree:
        new, ok = self._leapfrog(leaf, direction * self.step_size)
        delta = -np.inf
        if ok:
            h = new.logp - _kinetic(new.r, self.inv_mass)
            delta = h - h0 if math.isfinite(h) else -np.inf
        divergent = delta < -DIVERGENCE_THRESHOLD
        accept = min(1.0, math.exp(min(delta, 0.0)))
        return _Tree(
            minus=new, plus=new, proposal=new, log_weight=delta,
            r_sum=new.r.copy(), accept_sum=accept, n_leaves=1,
            divergent=divergent, turning=False,
        )

    def _build_tree(self, leaf: _Leaf, depth: int, direction: int, h0: float) -> _Tree:
        if depth == 0:
            return self._base_leaf(leaf, direction, h0)
        first = self._build_tree(leaf, depth - 1, direction, h0)
        if first.divergent or first.turning:
            return first
        outer = first.plus if direction == 1 else first.minus
        second = self._build_tree(outer, depth - 1, direction, h0)
        return self._merge(first, second, direction, root=False)

    def _merge(self, tree: _Tree, fresh: _Tree, direction: int, root: bool) -> _Tree:
        tree.accept_sum += fresh.accept_sum
        tree.n_leaves += fresh.n_leaves
        tree.divergent = tree.divergent or fresh.divergent
        if tree.divergent or fresh.turning:
            tree.turning = tree.turning or fresh.turning
            return tree

        if root:
            # biased progressive sampling favouring the fresh subtree
            accept_prob = math.exp(min(0.0, fresh.log_weight - tree.log_weight))
        else:
            total = np.logaddexp(tree.log_weight, fresh.log_weight)
            accept_prob = math.exp(fresh.log_weight - total) if total > -np.inf else 0.0
        if self.rng.uniform() < accept_prob:
            tree.proposal = fresh.proposal
        tree.log_weight = np.logaddexp(tree.log_weight, fresh.log_weight)

        # orient the two subtrees along integration time before testing
        if direction == 1:
            left, right = tree, fresh
        else:
            left, right = fresh, tree
        l_minus, l_plus, l_sum = left.minus, left.plus, left.r_sum
        r_minus, r_plus, r_sum = right.minus, right.plus, right.r_sum
        turning = _is_turning(l_sum + r_sum, l_minus.r, r_plus.r, self.inv_mass)
        # also test the two sub-trajectories spanning the join, as Stan does
        turning = turning or _is_turning(
            l_sum + r_minus.r, l_minus.r, r_minus.r, self.inv_mass
        )
        turning = turning or _is_turning(
            r_sum + l_plus.r, l_plus.r, r_plus.r, self.inv_mass
        )
        tree.minus, tree.plus = l_minus, r_plus
        tree.r_sum = l_sum + r_sum
        tree.turning = turning
        return tree

    def step(self) -> tuple[bool, float]:
        """One NUTS transition; returns (divergent, mean acceptance statistic)."""
        r0 = self.rng.standard_normal(self.dim) / np.sqrt(self.inv_mass)
        h0 = self.logp - _kinetic(r0, self.inv_mass)
        start = _Leaf(self.theta, r0, self.logp, self.grad)
        tree = _Tree(
            minus=start, plus=start, proposal=start, log_weight=0.0,
            r_sum=r0.copy(), accept_sum=0.0, n_leaves=0, divergent=False, turning=False,
        )
        for depth in range(self.config.max_tree_depth):
            direction = 1 if self.rng.uniform() < 0.5 else -1
            outer = tree.plus if direction == 1 else tree.minus
            fresh = self._build_tree(outer, depth, direction, h0)
            tree = self._merge(tree, fresh, direction, root=True)
            if tree.divergent or tree.turning:
                break
        self.theta = tree.proposal.theta
        self.logp = tree.proposal.logp
        self.grad = tree.proposal.grad
        accept_stat = tree.accept_sum / max(tree.n_leaves, 1)
        return tree.divergent, accept_stat


def _adaptation_windows(warmup: int) -> tuple[int, int, list[int]]:
    """Stan-style schedule: fast start, expanding covariance windows, fast end.

    Returns (init_buffer, term_buffer, window boundaries) where boundaries are
    the iteration indices at which the mass matrix is re-estimated.
    """
    init_buffer, term_buffer, base = 75, 50, 25
    if warmup < init_buffer + term_buffer + base:
        init_buffer = max(1, int(0.15 * warmup))
        term_buffer = max(1, int(0.10 * warmup))
        base = max(1, warmup - init_buffer - term_buffer)
    boundaries = []
    start, size = init_buffer, base
    while start + size < warmup - term_buffer:
        boundaries.append(start + size)
        start += size
        size *= 2
    boundaries.append(warmup - term_buffer)
    return init_buffer, term_buffer, boundaries


def _run_chain(fn: LogpGradFn, dim: int, config: SamplerConfig, chain_index: int,
               init_center: np.ndarray) -> ChainOutput:
    chain = _NutsChain(fn, dim, config, chain_index, init_center)
    warmup = config.warmup_iterations
    init_buffer, _term, boundaries = _adaptation_windows(warmup)

    welford_n = 0
    welford_mean = np.zeros(dim)
    welford_m2 = np.zeros(dim)
    warmup_divergences = 0
    next_boundary = 0

    for it in range(warmup):
        divergent, accept = chain.step()
        warmup_divergences += divergent
        chain._da_update(accept)
        in_window = init_buffer <= it < boundaries[-1]
        if in_window:
            welford_n += 1
            delta = chain.theta - welford_mean
            welford_mean += delta / welford_n
            welford_m2 += delta * (chain.theta - welford_mean)
        if next_boundary < len(boundaries) and it + 1 == boundaries[next_boundary]:
            if welford_n >= 2:
                var = welford_m2 / (welford_n - 1)
                # shrink toward a small diagonal, as Stan regularizes
                chain.inv_mass = (welford_n / (welford_n + 5.0)) * var + (
                    5.0 / (welford_n + 5.0)
                ) * 1e-3
                chain.inv_mass = np.maximum(chain.inv_mass, 1e-12)
            welford_n = 0
            welford_mean[:] = 0.0
            welford_m2[:] = 0.0
            chain.step_size = chain._reasonable_step_size()
            chain._da_reset()
            next_boundary += 1
    chain.step_size = math.exp(chain._da_log_eps_bar)

    n = config.sampling_iterations
    draws = np.empty((n, dim))
    logps = np.empty(n)
    divergences = np.zeros(n, dtype=bool)
    accepts = np.empty(n)
    for it in range(n):
        divergences[it], accepts[it] = chain.step()
        draws[it] = chain.theta
        logps[it] = chain.logp
    return ChainOutput(
        draws=draws, logp=logps, divergent=divergences, accept_stat=accepts,
        step_size=chain.step_size, mass_diagonal=chain.inv_mass.copy(),
        warmup_divergences=warmup_divergences,
    )


def sample(
    fn: LogpGradFn,
    dim: int,
    config: SamplerConfig,
    init_center: np.ndarray | None = None,
    coordinate_names: list[str] | None = None,
    threads: int = 1,
) -> SampleResult:
    """Run NUTS chains against a log-density-and-gradient callable.

    Parameters
    ----------
    fn : callable
        Maps a coordinate vector to ``(log density, gradient)``. May return
        ``-inf`` (with arbitrary gradient) for untenable points.
    dim : int
        Number of coordinates.
    config : SamplerConfig
    init_center : array, optional
        Chains start at this point plus ``initial_jitter``-scaled noise;
        defaults to the origin.
    coordinate_names : list of str, optional
        Labels for the diagnostics table.
    threads : int
        Chains run in a thread pool of this size; results are identical for
        any thread count because each chain owns its random stream.

    Raises
    ------
    SamplerFailure
        If no chain can find a finite starting point, or more than half of
        all post-warmup iterations diverged.
    """
    if init_center is None:
        init_center = np.zeros(dim)
    init_center = np.asarray(init_center, dtype=float)
    if init_center.shape != (dim,):
        raise ValidationError(f"init_center must have shape ({dim},)")

    def run(idx: int) -> ChainOutput:
        return _run_chain(fn, dim, config, idx, init_center)

    if threads > 1 and config.chains > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chains = list(pool.map(run, range(config.chains)))
    else:
        chains = [run(i) for i in range(config.chains)]

    rate = float(np.mean([c.divergence_rate for c in chains]))
    if rate > HARD_FAILURE_DIVERGENCE_RATE:
        detail = ", ".join(
            f"chain {i}: {c.divergence_rate:.0%} divergent, step size {c.step_size:.2e}"
            for i, c in enumerate(chains)
        )
        raise SamplerFailure(
            f"{rate:.0%} of post-warmup iterations diverged ({detail}); "
            "the posterior geometry defeats the integrator at this step size"
        )

    stacked = np.stack([c.draws for c in chains])
    table = diagnostics_table(stacked, names=coordinate_names)
    return SampleResult(chains=chains, diagnostics=table, config=config)
