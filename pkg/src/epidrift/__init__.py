"""Bayesian inference for age-stratified epidemic transmission driven by latent diffusions."""

__version__ = "0.1.0"

from .data import DataBundle, export_bundle, ingest
from .diffusion import LatentPath, build_path, week_index
from .estimator import DiffusionTransmissionModel
from .observation import (
    DelayDistribution,
    ObservationModel,
    deaths_loglik,
    discretize_delay,
    expected_deaths,
    negbin_logpmf,
)
from .ode import CompartmentState, EpidemicTrajectory, force_of_infection, integrate, seeiir_rhs
from .outputs import (
    PosteriorSummary,
    cumulative_infections,
    effective_reproduction_number,
    reporting_ratio,
    summarize,
)
from .posterior import LogPosterior, ParameterSpace, PriorConfig
from .sampler import ChainOutput, SampleResult, SamplerConfig, sample
from .simulate import run_simulate
from .structures import (
    AgeStructure,
    ContactMatrix,
    ModelKind,
    RateParams,
    TransmissionSnapshot,
    aggregate_contact_matrix,
    transmission_rate_matrix,
)
from .validation import (
    NumericalInstabilityError,
    SamplerFailure,
    StructureError,
    ValidationError,
)

__all__ = [
    "AgeStructure",
    "ChainOutput",
    "CompartmentState",
    "ContactMatrix",
    "DataBundle",
    "DelayDistribution",
    "DiffusionTransmissionModel",
    "EpidemicTrajectory",
    "LatentPath",
    "LogPosterior",
    "ModelKind",
    "NumericalInstabilityError",
    "ObservationModel",
    "ParameterSpace",
    "PosteriorSummary",
    "PriorConfig",
    "RateParams",
    "SampleResult",
    "SamplerConfig",
    "SamplerFailure",
    "StructureError",
    "TransmissionSnapshot",
    "ValidationError",
    "aggregate_contact_matrix",
    "build_path",
    "cumulative_infections",
    "deaths_loglik",
    "discretize_delay",
    "effective_reproduction_number",
    "expected_deaths",
    "export_bundle",
    "force_of_infection",
    "ingest",
    "integrate",
    "negbin_logpmf",
    "reporting_ratio",
    "run_simulate",
    "sample",
    "seeiir_rhs",
    "summarize",
    "transmission_rate_matrix",
    "week_index",
]
