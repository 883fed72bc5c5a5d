"""Posterior summaries of epidemiological quantities.

Per-draw forward quantities (transmissibility paths, infections, expected
deaths, susceptibles) are reduced to median and central credible intervals,
and turned into derived outputs: effective reproduction numbers from the
next-generation matrix, weekly reporting ratios against confirmed cases, and
cumulative-infection comparisons against external seroprevalence estimates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .structures import AgeStructure, RateParams
from .validation import StructureError, ValidationError, as_float_array

QUANTILES = (0.025, 0.25, 0.5, 0.75, 0.975)
MIN_DRAWS = 100


@dataclass(frozen=True)
class PosteriorSummary:
    """Empirical quantiles of a per-draw quantity (draw axis reduced away)."""

    q2_5: np.ndarray
    q25: np.ndarray
    median: np.ndarray
    q75: np.ndarray
    q97_5: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {
            "q2.5": self.q2_5,
            "q25": self.q25,
            "q50": self.median,
            "q75": self.q75,
            "q97.5": self.q97_5,
        }


def summarize(draws) -> PosteriorSummary:
    """Median plus 50% and 95% central credible intervals of posterior draws.

    ``draws`` has the draw index leading; quantiles are linearly interpolated
    and computed cellwise over the remaining axes.
    """
    draws = as_float_array(draws, "draws")
    if draws.ndim < 1 or draws.shape[0] < MIN_DRAWS:
        raise ValidationError(
            f"need at least {MIN_DRAWS} draws to summarize, got {draws.shape[0] if draws.ndim else 0}"
        )
    q = np.quantile(draws, QUANTILES, axis=0)
    return PosteriorSummary(q2_5=q[0], q25=q[1], median=q[2], q75=q[3], q97_5=q[4])


def effective_reproduction_number(
    susceptible, rate_matrices, rates: RateParams, ages: AgeStructure
) -> np.ndarray:
    """Spectral radius of the next-generation matrix at each time point.

    ``K[a, b] = d_I * m[a, b] * S_a / f_b`` linearizes the infection dynamics
    around the current susceptible proportions ``S`` (of the total
    population); its spectral radius is the expected number of secondary
    infections per current case.

    Parameters
    ----------
    susceptible : (..., A) array
        Susceptible proportions; leading axes (draws, time) are preserved.
    rate_matrices : (..., A, A) array
        Transmission rates, broadcastable against ``susceptible``.
    """
    s = as_float_array(susceptible, "susceptible")
    m = as_float_array(rate_matrices, "rate_matrices")
    a = ages.n_groups
    if s.shape[-1] != a or m.shape[-2:] != (a, a):
        raise StructureError("susceptible or rate matrices do not match the age structure")
    f = ages.group_fractions
    ngm = rates.mean_infectious_period * m * s[..., :, None] / f[..., None, :]
    eigenvalues = np.linalg.eigvals(ngm)
    return np.max(np.abs(eigenvalues), axis=-1)


def reporting_ratio(cases_weekly, new_infections, ages: AgeStructure) -> np.ndarray:
    """Confirmed cases divided by model infections, per week and group.

    Parameters
    ----------
    cases_weekly : (W, A) array
        Reported case counts aggregated to the weekly grid.
    new_infections : (n_draws, T, A) array
        Daily infections as proportions of the population, T = 7W.

    Returns
    -------
    (n_draws, W, A) array
        Ratios; NaN where a draw has no infections in a window (the
        undefined-flagged case). Values above 1 indicate over-complete
        reporting relative to the inferred infections.
    """
    cases = as_float_array(cases_weekly, "cases_weekly", ndim=2)
    delta = as_float_array(new_infections, "new_infections")
    if delta.ndim == 2:
        delta = delta[None]
    weeks, a = cases.shape
    if a != ages.n_groups:
        raise StructureError("cases do not match the age structure")
    if delta.shape[1] != 7 * weeks or delta.shape[2] != a:
        raise StructureError(
            f"infections must cover {7 * weeks} days x {a} groups, got {delta.shape[1:]}"
        )
    weekly = delta.reshape(delta.shape[0], weeks, 7, a).sum(axis=2) * ages.total_population
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(weekly > 0, cases[None] / np.where(weekly > 0, weekly, 1.0), np.nan)
    return ratio


def cumulative_infections(new_infections, ages: AgeStructure) -> np.ndarray:
    """Running infection counts per draw and group, shape (n_draws, T, A)."""
    delta = as_float_array(new_infections, "new_infections")
    if delta.ndim == 2:
        delta = delta[None]
    if delta.shape[-1] != ages.n_groups:
        raise StructureError("infections do not match the age structure")
    return np.cumsum(delta, axis=1) * ages.total_population


def seroprevalence_comparison(
    cumulative, dates, survey: pd.DataFrame, ages: AgeStructure
) -> pd.DataFrame:
    """Compare model cumulative infections with external survey estimates.

    ``survey`` must carry columns (group, date, estimate, lower95, upper95)
    holding cumulative-infection counts with their confidence band. For each
    survey row the model's 95% credible interval at the latest study date not
    after the survey date is reported, together with an overlap flag.
    """
    required = {"group", "date", "estimate", "lower95", "upper95"}
    missing = required - set(survey.columns)
    if missing:
        raise ValidationError(f"survey table lacks columns: {sorted(missing)}")
    cumulative = as_float_array(cumulative, "cumulative")
    if cumulative.ndim != 3:
        raise StructureError("cumulative must be (draws, days, groups)")
    labels = list(ages.group_labels)
    dates = pd.DatetimeIndex(dates)
    if len(dates) != cumulative.shape[1]:
        raise StructureError("dates do not match the cumulative-infection horizon")
    summary = summarize(cumulative)

    rows = []
    for rec in survey.itertuples(index=False):
        group = str(rec.group)
        if group not in labels:
            raise ValidationError(f"survey group {group!r} not among model groups {labels}")
        g = labels.index(group)
        when = pd.Timestamp(rec.date)
        usable = dates <= when
        if not usable.any():
            raise ValidationError(f"survey date {when.date()} precedes the study period")
        t = int(np.nonzero(usable)[0][-1])
        lo, hi = summary.q2_5[t, g], summary.q97_5[t, g]
        overlap = (lo <= rec.upper95) and (hi >= rec.lower95)
        rows.append(
            {
                "group": group,
                "survey_date": when.date().isoformat(),
                "model_date": dates[t].date().isoformat(),
                "survey_estimate": float(rec.estimate),
                "survey_lower95": float(rec.lower95),
                "survey_upper95": float(rec.upper95),
                "model_median": float(summary.median[t, g]),
                "model_lower95": float(lo),
                "model_upper95": float(hi),
                "intervals_overlap": bool(overlap),
            }
        )
    return pd.DataFrame(rows)


def tidy_summary(
    quantity: str,
    summary: PosteriorSummary,
    groups: list[str] | None,
    index,
    index_name: str = "date",
) -> pd.DataFrame:
    """Long-format (quantity, group, date, quantile, value) table.

    ``summary`` cells are (time,) or (time, groups); pass ``groups=None`` for
    ungrouped series (group column reads 'all').
    """
    rows = []
    labels = ["all"] if groups is None else list(groups)
    for qname, values in summary.as_dict().items():
        cells = np.atleast_2d(values.T).T  # (time, groups)
        if cells.shape != (len(index), len(labels)):
            raise StructureError(
                f"summary cells {values.shape} do not match index {len(index)} x groups {len(labels)}"
            )
        for gi, label in enumerate(labels):
            for ti, key in enumerate(index):
                rows.append(
                    {
                        "quantity": quantity,
                        "group": label,
                        index_name: key,
                        "quantile": qname,
                        "value": float(cells[ti, gi]),
                    }
                )
    return pd.DataFrame(rows)
