"""Command-line workflow: simulate, fit, summarize, validate.

Exit codes: 0 on success, 2 on input validation failure, 3 on sampler
failure. The ``EPIDRIFT_THREADS`` environment variable sets the chain thread
pool size (default 1; never affects results).
"""

from __future__ import annotations

import functools
import json
import os
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import click
import numpy as np
import pandas as pd

from . import __version__
from .config import RunConfig, load_config
from .data import DataBundle, ingest
from .estimator import DiffusionTransmissionModel
from .observation import DelayDistribution
from .posterior import LogPosterior, ParameterSpace
from .outputs import (
    cumulative_infections,
    effective_reproduction_number,
    reporting_ratio,
    seroprevalence_comparison,
    summarize as summarize_draws,
    tidy_summary,
)
from .simulate import simulate_to_directory
from .structures import ModelKind
from .validation import SamplerFailure, ValidationError

EXIT_VALIDATION = 2
EXIT_SAMPLER = 3


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("EPIDRIFT_THREADS", "1")))
    except ValueError:
        return 1


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValidationError as exc:
            click.echo(f"validation error: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)
        except SamplerFailure as exc:
            click.echo(f"sampler failure: {exc}", err=True)
            sys.exit(EXIT_SAMPLER)

    return wrapper


@click.group()
@click.version_option(__version__)
def main():
    """Bayesian inference for age-stratified epidemics driven by latent diffusions."""


# -- shared pieces ------------------------------------------------------------


def _load_bundle(config: RunConfig) -> DataBundle:
    if config.data is None:
        raise ValidationError("config has no 'data' block")
    return ingest(config.data, config.age_groups)


def _estimator_from_config(config: RunConfig, kind: ModelKind, threads: int) -> DiffusionTransmissionModel:
    model = config.model
    sampler = config.sampler
    return DiffusionTransmissionModel(
        kind=kind.value,
        chains=sampler.chains,
        warmup_iterations=sampler.warmup_iterations,
        sampling_iterations=sampler.sampling_iterations,
        target_acceptance=sampler.target_acceptance,
        max_tree_depth=sampler.max_tree_depth,
        seed=sampler.seed,
        initial_jitter=sampler.initial_jitter,
        mean_latent_period=model.mean_latent_period,
        mean_infectious_period=model.mean_infectious_period,
        free_rates=model.free_rates,
        delay_shape=model.delay_shape,
        delay_rate=model.delay_rate,
        delay_truncation=model.delay_truncation,
        priors=config.priors,
        threads=threads,
    )


def _write_draws(result, names: list[str], path: Path) -> None:
    frames = []
    for idx, chain in enumerate(result.chains):
        frame = pd.DataFrame(chain.draws, columns=names)
        frame.insert(0, "divergent", chain.divergent.astype(int))
        frame.insert(0, "draw", np.arange(len(frame)))
        frame.insert(0, "chain", idx)
        frames.append(frame)
    pd.concat(frames, ignore_index=True).to_csv(path, index=False)


def _read_draws(path: Path, names: list[str]) -> np.ndarray:
    frame = pd.read_csv(path)
    missing = [n for n in names if n not in frame.columns]
    if missing:
        raise ValidationError(
            f"draws file {path} lacks coordinates {missing[:3]}{'...' if len(missing) > 3 else ''}; "
            "was it produced with a different model configuration?"
        )
    return frame[names].to_numpy(dtype=float)


def _write_summaries(outdir: Path, bundle: DataBundle, estimator: DiffusionTransmissionModel,
                     draws: np.ndarray) -> None:
    """Materialize the tidy posterior-summary tables for all output quantities."""
    space = estimator.space_
    posterior = estimator.posterior_
    forward = posterior.forward(draws)
    ages = bundle.ages
    labels = list(ages.group_labels)
    dates = bundle.dates.strftime("%Y-%m-%d")
    weeks_index = np.arange(bundle.weeks + 1)
    path_labels = labels if space.n_paths > 1 else ["shared"]
    summaries = outdir / "summaries"
    summaries.mkdir(parents=True, exist_ok=True)

    beta = forward["beta"]  # (n, P, K+1)
    tidy_summary(
        "transmissibility", summarize_draws(np.swapaxes(beta, 1, 2)), path_labels,
        weeks_index, index_name="week",
    ).to_csv(summaries / "transmissibility.csv", index=False)

    # per-group transmission rate: contacts scaled by that group's beta, summed
    # over contacted groups, on the weekly grid
    contact = forward["contact"]  # (n, A, A)
    beta_groups = beta if space.n_paths > 1 else np.repeat(beta, ages.n_groups, axis=1)
    rate = beta_groups[:, :, :, None] * contact[:, :, None, :]  # (n, A, K+1, A')
    tidy_summary(
        "transmission_rate", summarize_draws(np.swapaxes(rate.sum(axis=3), 1, 2)), labels,
        weeks_index, index_name="week",
    ).to_csv(summaries / "transmission_rate.csv", index=False)

    infections = forward["new_infections"] * ages.total_population
    tidy_summary(
        "daily_infections", summarize_draws(infections), labels, dates
    ).to_csv(summaries / "daily_infections.csv", index=False)

    cumulative = cumulative_infections(forward["new_infections"], ages)
    tidy_summary(
        "cumulative_infections", summarize_draws(cumulative), labels, dates
    ).to_csv(summaries / "cumulative_infections.csv", index=False)

    tidy_summary(
        "expected_deaths", summarize_draws(forward["expected_deaths"]), labels, dates
    ).to_csv(summaries / "expected_deaths.csv", index=False)

    by_day = np.repeat(
        beta_groups[:, :, 1:], 7, axis=2
    )  # (n, A, T) weekly beta expanded to days
    rate_matrices = by_day[:, :, :, None].transpose(0, 2, 1, 3) * contact[:, None, :, :]
    r_eff = effective_reproduction_number(
        forward["susceptible"][:, :-1, :], rate_matrices, space.rates, ages
    )
    tidy_summary("r_eff", summarize_draws(r_eff), None, dates).to_csv(
        summaries / "r_eff.csv", index=False
    )

    ratio = reporting_ratio(bundle.weekly_cases(), forward["new_infections"], ages)
    ratio_summary = summarize_draws(ratio)
    tidy_summary(
        "reporting_ratio", ratio_summary, labels, np.arange(1, bundle.weeks + 1),
        index_name="week",
    ).to_csv(summaries / "reporting_ratio.csv", index=False)
    flags = pd.DataFrame(
        [
            {"week": w + 1, "group": labels[g], "median_ratio": float(ratio_summary.median[w, g])}
            for w, g in zip(*np.nonzero(ratio_summary.median > 1.0))
        ]
    )
    flags.to_csv(summaries / "reporting_ratio_clipped.csv", index=False)

    scalar_rows = []
    scalar_names = (
        ["phi"]
        + [f"sigma_x[{p}]" for p in path_labels]
        + [f"seed[{g}]" for g in labels]
    )
    stack = np.concatenate(
        [forward["phi"][:, None], forward["sigma_x"], forward["seeds"]], axis=1
    )
    summary = summarize_draws(stack)
    for name, column in zip(scalar_names, range(stack.shape[1])):
        for qname, values in summary.as_dict().items():
            scalar_rows.append(
                {"parameter": name, "quantile": qname, "value": float(values[column])}
            )
    pd.DataFrame(scalar_rows).to_csv(summaries / "parameters.csv", index=False)


def _write_manifest(outdir: Path, config: RunConfig, kind: ModelKind, command: str,
                    wall_time: float, extra: dict) -> None:
    manifest = {
        "package": {"name": "epidrift", "version": __version__},
        "command": command,
        "model_kind": kind.value,
        "seed": config.sampler.seed,
        "config": config.raw,
        "priors": config.priors.to_dict(),
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "pandas": pd.__version__,
        },
        "wall_time_seconds": round(wall_time, 3),
    }
    try:
        import jax

        manifest["versions"]["jax"] = jax.__version__
    except ImportError:  # pragma: no cover
        pass
    manifest.update(extra)
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def run_fit(config: RunConfig, kind: ModelKind, output_dir: Path) -> Path:
    """Fit the model per config and write draws, diagnostics, summaries, manifest."""
    started = time.time()
    bundle = _load_bundle(config)
    estimator = _estimator_from_config(config, kind, threads=_threads())
    estimator.fit(bundle)

    output_dir.mkdir(parents=True, exist_ok=True)
    _write_draws(estimator.result_, estimator.space_.names, output_dir / "draws.csv")
    diagnostics = estimator.diagnostics_.rename_axis("coordinate").reset_index()
    diagnostics.to_csv(output_dir / "diagnostics.csv", index=False)
    _write_summaries(output_dir, bundle, estimator, estimator.draws_)
    _write_manifest(
        output_dir, config, kind, "fit", time.time() - started,
        extra={
            "divergence_rate": estimator.result_.divergence_rate,
            "step_sizes": [c.step_size for c in estimator.result_.chains],
            "coordinates": estimator.space_.names,
        },
    )
    return output_dir


def _rebuild_estimator(config: RunConfig, kind: ModelKind, bundle: DataBundle):
    """Space and posterior for an existing fit, without sampling."""
    estimator = _estimator_from_config(config, kind, threads=1)
    estimator.space_ = ParameterSpace(
        kind=kind,
        ages=bundle.ages,
        weeks=bundle.weeks,
        contact_center=bundle.contact,
        priors=config.priors,
        rates=config.model.rates(),
        free_rates=config.model.free_rates,
    )
    estimator.posterior_ = LogPosterior(
        estimator.space_, bundle.deaths, bundle.ifr,
        DelayDistribution(config.model.delay_shape, config.model.delay_rate,
                          config.model.delay_truncation),
    )
    return estimator


# -- verbs ---------------------------------------------------------------------


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=False))
@click.option("--output-dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="Override the simulation seed.")
@_handle_errors
def simulate(config_path, output_dir, seed):
    """Draw a synthetic dataset (with ground truth) from the generative model."""
    config = load_config(config_path)
    if config.simulate is None:
        raise ValidationError("config has no 'simulate' block")
    sim_seed = seed if seed is not None else int(config.simulate.get("seed", config.sampler.seed))
    bundle = simulate_to_directory(config.simulate, sim_seed, Path(output_dir))
    click.echo(
        f"simulated {bundle.weeks} weeks x {bundle.n_groups} groups "
        f"({int(np.nansum(bundle.deaths))} deaths) -> {output_dir}"
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=False))
@click.option("--model", type=click.Choice(["sbm", "mbm"]), default=None,
              help="Override the configured model kind.")
@click.option("--chains", type=int, default=None, help="Override the chain count.")
@click.option("--seed", type=int, default=None, help="Override the sampling seed.")
@click.option("--output-dir", required=True, type=click.Path())
@_handle_errors
def fit(config_path, model, chains, seed, output_dir):
    """Fit the model to the configured data and write a results directory."""
    config = load_config(config_path)
    sampler = config.sampler
    if chains is not None:
        sampler = replace(sampler, chains=chains)
    if seed is not None:
        sampler = replace(sampler, seed=seed)
    config = replace(config, sampler=sampler)
    kind = ModelKind.parse(model) if model else config.model.kind
    run_fit(config, kind, Path(output_dir))
    click.echo(f"fit complete -> {output_dir}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=False))
@click.option("--results-dir", required=True, type=click.Path())
@click.option("--model", type=click.Choice(["sbm", "mbm"]), default=None)
@_handle_errors
def summarize(config_path, results_dir, model):
    """Recompute posterior summary tables from a stored draws file."""
    config = load_config(config_path)
    kind = ModelKind.parse(model) if model else config.model.kind
    results = Path(results_dir)
    bundle = _load_bundle(config)
    estimator = _rebuild_estimator(config, kind, bundle)
    draws = _read_draws(results / "draws.csv", estimator.space_.names)
    _write_summaries(results, bundle, estimator, draws)
    click.echo(f"summaries written -> {results / 'summaries'}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=False))
@click.option("--results-dir", required=True, type=click.Path())
@click.option("--survey", required=True, type=click.Path(),
              help="CSV with columns group,date,estimate,lower95,upper95.")
@click.option("--model", type=click.Choice(["sbm", "mbm"]), default=None)
@_handle_errors
def validate(config_path, results_dir, survey, model):
    """Compare posterior cumulative infections against external survey estimates."""
    config = load_config(config_path)
    kind = ModelKind.parse(model) if model else config.model.kind
    results = Path(results_dir)
    bundle = _load_bundle(config)
    estimator = _rebuild_estimator(config, kind, bundle)
    draws = _read_draws(results / "draws.csv", estimator.space_.names)
    forward = estimator.posterior_.forward(draws)
    cumulative = cumulative_infections(forward["new_infections"], bundle.ages)
    try:
        survey_frame = pd.read_csv(survey)
    except FileNotFoundError:
        raise ValidationError(f"survey file not found: {survey}") from None
    table = seroprevalence_comparison(cumulative, bundle.dates, survey_frame, bundle.ages)
    out = results / "validation.csv"
    table.to_csv(out, index=False)
    agree = int(table["intervals_overlap"].sum())
    click.echo(f"{agree}/{len(table)} survey estimates overlap the model interval -> {out}")


if __name__ == "__main__":
    main()
