"""Scikit-learn style estimator wrapping the full inference engine."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .observation import DelayDistribution
from .posterior import LogPosterior, ParameterSpace, PriorConfig
from .sampler import SamplerConfig, sample
from .structures import ModelKind, RateParams
from .validation import ValidationError


class DiffusionTransmissionModel(BaseEstimator):
    """Age-stratified transmission model with diffusion-driven transmissibility.

    ``fit`` consumes a :class:`~epidrift.data.DataBundle` and samples the
    joint posterior over progression rates (optionally), weekly
    log-transmissibility paths, their volatilities, the death-count
    overdispersion, initial seeds and the contact matrix. Constructor
    arguments follow scikit-learn conventions (stored as-is, validated at fit
    time), so the estimator supports ``get_params`` / ``set_params`` /
    ``clone``.

    Parameters
    ----------
    kind : {'mbm', 'sbm'}
        One diffusion path per age group, or a single shared path.
    chains, warmup_iterations, sampling_iterations, target_acceptance,
    max_tree_depth, seed, initial_jitter :
        Sampler settings; see :class:`~epidrift.sampler.SamplerConfig`.
    mean_latent_period, mean_infectious_period : float
        Stage-duration means in days (two stages each); fixed unless
        ``free_rates`` is set, in which case they center lognormal priors.
    priors : PriorConfig or dict, optional
        Prior hyperparameters; a dict uses the run-config schema.
    threads : int
        Thread pool size for chains; does not affect results.

    Attributes
    ----------
    space_ : ParameterSpace
    posterior_ : LogPosterior
    result_ : SampleResult
    draws_ : ndarray of shape (chains * sampling_iterations, n_coordinates)
    diagnostics_ : DataFrame with per-coordinate rhat / ess_bulk / ess_tail
    """

    def __init__(
        self,
        kind="mbm",
        chains=4,
        warmup_iterations=1000,
        sampling_iterations=1000,
        target_acceptance=0.8,
        max_tree_depth=10,
        seed=0,
        initial_jitter=0.5,
        mean_latent_period=3.0,
        mean_infectious_period=4.0,
        free_rates=False,
        delay_shape=6.29,
        delay_rate=0.26,
        delay_truncation=60,
        priors=None,
        threads=1,
    ):
        self.kind = kind
        self.chains = chains
        self.warmup_iterations = warmup_iterations
        self.sampling_iterations = sampling_iterations
        self.target_acceptance = target_acceptance
        self.max_tree_depth = max_tree_depth
        self.seed = seed
        self.initial_jitter = initial_jitter
        self.mean_latent_period = mean_latent_period
        self.mean_infectious_period = mean_infectious_period
        self.free_rates = free_rates
        self.delay_shape = delay_shape
        self.delay_rate = delay_rate
        self.delay_truncation = delay_truncation
        self.priors = priors
        self.threads = threads

    # -- estimator API --------------------------------------------------------

    def fit(self, bundle, y=None):
        """Sample the posterior for one data bundle; returns ``self``."""
        if np.any(np.nan_to_num(bundle.deaths[0]) > 0):
            raise ValidationError(
                "deaths on the first study day cannot be generated by the model "
                "(expected deaths are identically zero on day one); blank those "
                "cells or start the study earlier"
            )
        priors = self.priors
        if isinstance(priors, dict):
            priors = PriorConfig.from_dict(priors)
        elif priors is None:
            priors = PriorConfig()

        self.space_ = ParameterSpace(
            kind=ModelKind.parse(self.kind),
            ages=bundle.ages,
            weeks=bundle.weeks,
            contact_center=bundle.contact,
            priors=priors,
            rates=RateParams.from_periods(self.mean_latent_period, self.mean_infectious_period),
            free_rates=self.free_rates,
        )
        delay = DelayDistribution(self.delay_shape, self.delay_rate, self.delay_truncation)
        self.posterior_ = LogPosterior(self.space_, bundle.deaths, bundle.ifr, delay)

        config = SamplerConfig(
            chains=self.chains,
            warmup_iterations=self.warmup_iterations,
            sampling_iterations=self.sampling_iterations,
            target_acceptance=self.target_acceptance,
            max_tree_depth=self.max_tree_depth,
            seed=self.seed,
            initial_jitter=self.initial_jitter,
        )
        self.result_ = sample(
            self.posterior_.value_and_grad,
            dim=self.space_.size,
            config=config,
            init_center=self.space_.reference_init(),
            coordinate_names=self.space_.names,
            threads=self.threads,
        )
        self.draws_ = self.result_.flat_draws()
        self.diagnostics_ = self.result_.diagnostics
        return self

    def predict(self, quantile: float = 0.5) -> np.ndarray:
        """Posterior quantile of expected daily deaths, shape (days, groups)."""
        self._check_fitted()
        forward = self.posterior_.forward(self.draws_)
        return np.quantile(forward["expected_deaths"], quantile, axis=0)

    def forward_draws(self) -> dict[str, np.ndarray]:
        """Per-draw forward quantities (see ``LogPosterior.forward``)."""
        self._check_fitted()
        return self.posterior_.forward(self.draws_)

    def _check_fitted(self):
        if not hasattr(self, "result_"):
            raise ValidationError("estimator is not fitted; call fit(bundle) first")
