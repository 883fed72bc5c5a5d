"""Run configuration: one YAML file describing data, model, priors and sampler."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .posterior import PriorConfig
from .sampler import SamplerConfig
from .structures import ModelKind, RateParams
from .validation import ValidationError


@dataclass(frozen=True)
class ModelSettings:
    kind: ModelKind = ModelKind.MBM
    mean_latent_period: float = 3.0
    mean_infectious_period: float = 4.0
    free_rates: bool = False
    delay_shape: float = 6.29
    delay_rate: float = 0.26
    delay_truncation: int = 60

    def rates(self) -> RateParams:
        return RateParams.from_periods(self.mean_latent_period, self.mean_infectious_period)


@dataclass(frozen=True)
class DataSettings:
    deaths: Path
    cases: Path
    population: Path
    contacts: Path
    ifr: Path
    start_date: str
    weeks: int
    zero_fill_gaps: bool = False


@dataclass(frozen=True)
class RunConfig:
    """Parsed run configuration plus the raw mapping for manifest echoing."""

    data: DataSettings | None
    age_groups: dict[str, list[str]] | None
    model: ModelSettings
    priors: PriorConfig
    sampler: SamplerConfig
    simulate: dict | None
    raw: dict = field(repr=False, default_factory=dict)


def _require(block: dict, key: str, context: str):
    if key not in block:
        raise ValidationError(f"config {context} block is missing {key!r}")
    return block[key]


def parse_config(raw: dict, base_dir: Path | str = ".") -> RunConfig:
    base = Path(base_dir)
    if not isinstance(raw, dict):
        raise ValidationError("run config must be a mapping")

    data = None
    if "data" in raw:
        block = raw["data"]
        data = DataSettings(
            deaths=base / _require(block, "deaths", "data"),
            cases=base / _require(block, "cases", "data"),
            population=base / _require(block, "population", "data"),
            contacts=base / _require(block, "contacts", "data"),
            ifr=base / _require(block, "ifr", "data"),
            start_date=str(_require(block, "start_date", "data")),
            weeks=int(_require(block, "weeks", "data")),
            zero_fill_gaps=bool(block.get("zero_fill_gaps", False)),
        )
        if data.weeks < 1:
            raise ValidationError("data.weeks must be >= 1")

    age_groups = None
    if "age_groups" in raw:
        age_groups = {
            str(group): [str(b) for b in bands] for group, bands in raw["age_groups"].items()
        }

    model_block = raw.get("model", {})
    known = {"kind", "mean_latent_period", "mean_infectious_period", "free_rates", "delay"}
    unknown = set(model_block) - known
    if unknown:
        raise ValidationError(f"unknown model settings: {sorted(unknown)}")
    delay = model_block.get("delay", {})
    model = ModelSettings(
        kind=ModelKind.parse(model_block.get("kind", "mbm")),
        mean_latent_period=float(model_block.get("mean_latent_period", 3.0)),
        mean_infectious_period=float(model_block.get("mean_infectious_period", 4.0)),
        free_rates=bool(model_block.get("free_rates", False)),
        delay_shape=float(delay.get("shape", 6.29)),
        delay_rate=float(delay.get("rate", 0.26)),
        delay_truncation=int(delay.get("truncation", 60)),
    )

    priors = PriorConfig.from_dict(raw.get("priors"))

    sampler_block = dict(raw.get("sampler", {}))
    rename = {"warmup": "warmup_iterations", "draws": "sampling_iterations",
              "target_accept": "target_acceptance"}
    for short, full in rename.items():
        if short in sampler_block:
            sampler_block[full] = sampler_block.pop(short)
    try:
        sampler = SamplerConfig(**sampler_block)
    except TypeError as exc:
        raise ValidationError(f"bad sampler settings: {exc}") from None

    return RunConfig(
        data=data,
        age_groups=age_groups,
        model=model,
        priors=priors,
        sampler=sampler,
        simulate=raw.get("simulate"),
        raw=raw,
    )


def load_config(path: Path | str) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ValidationError(f"config file {path} is not valid YAML: {exc}") from None
    return parse_config(raw or {}, base_dir=path.parent)
