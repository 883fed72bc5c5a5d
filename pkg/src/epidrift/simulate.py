"""Forward simulation of synthetic surveillance data with known ground truth."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .data import DataBundle, export_bundle
from .diffusion import LatentPath
from .observation import DelayDistribution, expected_deaths, sample_negbin
from .ode import CompartmentState, integrate
from .structures import AgeStructure, ModelKind, RateParams, symmetrize_reciprocity
from .validation import ValidationError, check_probability


@dataclass(frozen=True)
class SimulationTruth:
    """Latent quantities behind one simulated dataset."""

    path: LatentPath
    new_infections: np.ndarray  # (T, A) proportions of the total population
    expected_deaths: np.ndarray  # (T, A) counts
    params: dict


def _require(block: dict, key: str):
    if key not in block:
        raise ValidationError(f"simulate config is missing {key!r}")
    return block[key]


def run_simulate(sim: dict, seed: int) -> tuple[DataBundle, SimulationTruth]:
    """Draw one synthetic dataset from the generative model.

    The ``sim`` mapping mirrors the ``simulate`` block of a run config:
    group labels and populations, a survey contact matrix (symmetrized on
    the way in), per-group infection fatality rates, diffusion start points
    ``x0`` and volatilities ``sigma_x`` (one per path), overdispersion
    ``phi``, per-group initial seed proportions, and a case
    ``detection_rate``.
    """
    rng = np.random.default_rng(seed)
    kind = ModelKind.parse(sim.get("kind", "mbm"))
    weeks = int(_require(sim, "weeks"))
    start_date = str(_require(sim, "start_date"))
    groups = _require(sim, "groups")
    ages = AgeStructure(_require(groups, "labels"), _require(groups, "populations"))
    contact = symmetrize_reciprocity(
        np.asarray(_require(sim, "contacts"), dtype=float), ages
    )
    ifr = np.asarray(_require(sim, "ifr"), dtype=float)
    rates = RateParams.from_periods(
        float(sim.get("mean_latent_period", 3.0)), float(sim.get("mean_infectious_period", 4.0))
    )
    delay = DelayDistribution(
        float(sim.get("delay_shape", 6.29)),
        float(sim.get("delay_rate", 0.26)),
        int(sim.get("delay_truncation", 60)),
    )
    phi = float(_require(sim, "phi"))
    if phi <= 0:
        raise ValidationError("phi must be positive")
    detection = float(sim.get("detection_rate", 1.0))
    check_probability(detection, "detection_rate", open_interval=False)

    n_paths = kind.n_paths(ages.n_groups)
    x0 = np.broadcast_to(np.asarray(_require(sim, "x0"), dtype=float), (n_paths,))
    sigma = np.broadcast_to(np.asarray(_require(sim, "sigma_x"), dtype=float), (n_paths,))
    seeds = np.asarray(_require(sim, "seeds"), dtype=float)

    innovations = rng.standard_normal((n_paths, weeks))
    path = LatentPath(x0, innovations, sigma)

    horizon = 7 * weeks
    initial = CompartmentState.from_seed(ages, seeds)
    trajectory = integrate(initial, rates, path, contact, kind, ages, horizon)
    d = expected_deaths(trajectory.new_infections, ages, ifr, delay)
    deaths = sample_negbin(rng, d, phi)

    infection_counts = np.rint(trajectory.new_infections * ages.total_population).astype(np.int64)
    cases = rng.binomial(infection_counts, detection)

    bundle = DataBundle(
        deaths=deaths,
        cases=cases,
        dates=pd.date_range(start_date, periods=horizon, freq="D"),
        ages=ages,
        contact=contact,
        ifr=ifr,
        weeks=weeks,
    )
    truth = SimulationTruth(
        path=path,
        new_infections=trajectory.new_infections,
        expected_deaths=d,
        params={
            "kind": kind.value,
            "seed": int(seed),
            "weeks": weeks,
            "start_date": start_date,
            "x0": x0.tolist(),
            "sigma_x": sigma.tolist(),
            "phi": phi,
            "seeds": seeds.tolist(),
            "detection_rate": detection,
            "ifr": ifr.tolist(),
            "mean_latent_period": rates.mean_latent_period,
            "mean_infectious_period": rates.mean_infectious_period,
        },
    )
    return bundle, truth


def write_truth(truth: SimulationTruth, bundle: DataBundle, directory: Path | str) -> None:
    """Write the ground-truth files next to the simulated dataset."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    beta = truth.path.beta  # (P, K+1)
    labels = (
        list(bundle.ages.group_labels) if beta.shape[0] > 1 else ["shared"]
    )
    beta_frame = pd.DataFrame(beta.T, columns=labels)
    beta_frame.insert(0, "week", np.arange(beta.shape[1]))
    beta_frame.to_csv(directory / "truth_beta.csv", index=False)

    counts = truth.new_infections * bundle.ages.total_population
    infections = pd.DataFrame(counts, columns=list(bundle.ages.group_labels))
    infections.insert(0, "date", bundle.dates.strftime("%Y-%m-%d"))
    infections.to_csv(directory / "truth_infections.csv", index=False)

    (directory / "truth_params.json").write_text(json.dumps(truth.params, indent=2))


def simulate_to_directory(sim: dict, seed: int, directory: Path | str) -> DataBundle:
    """Simulate, then persist the dataset and its truth files."""
    bundle, truth = run_simulate(sim, seed)
    export_bundle(bundle, directory)
    write_truth(truth, bundle, directory)
    return bundle
