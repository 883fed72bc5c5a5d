"""Surveillance-data ingestion: delimited files in, validated bundle out.

File schemas (all comma-separated with a header row):

* deaths/cases: ``date`` column (ISO dates) plus one count column per age band
* population: ``group,population``
* contacts: ``band`` label column plus one column per band (dense matrix)
* ifr: ``group,ifr`` at the target-group level

Fine age bands shared by the count, population and contact files are
aggregated onto the configured target groups during ingestion.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .config import DataSettings
from .structures import AgeStructure, ContactMatrix, aggregate_contact_matrix
from .validation import StructureError, ValidationError, frozen_array


@dataclass(frozen=True)
class DataBundle:
    """Validated inputs for one study: counts, population, contacts, severity.

    Deaths drive the likelihood; confirmed cases are carried only for the
    reporting-ratio output. All count arrays are (days, groups) aligned to
    ``dates``, which spans exactly ``7 * weeks`` consecutive days.
    """

    deaths: np.ndarray
    cases: np.ndarray
    dates: pd.DatetimeIndex
    ages: AgeStructure
    contact: ContactMatrix
    ifr: np.ndarray
    weeks: int

    def __post_init__(self):
        a = self.ages.n_groups
        t = 7 * self.weeks
        object.__setattr__(self, "deaths", frozen_array(self.deaths, "deaths", ndim=2))
        object.__setattr__(self, "cases", frozen_array(self.cases, "cases", ndim=2))
        object.__setattr__(self, "ifr", frozen_array(self.ifr, "ifr", ndim=1))
        if self.deaths.shape != (t, a) or self.cases.shape != (t, a):
            raise StructureError(
                f"deaths/cases must be ({t}, {a}) for {self.weeks} weeks, "
                f"got {self.deaths.shape} and {self.cases.shape}"
            )
        if len(self.dates) != t:
            raise StructureError(f"expected {t} dates, got {len(self.dates)}")
        if not (self.dates.to_series().diff().dropna() == pd.Timedelta(days=1)).all():
            raise ValidationError("dates must be consecutive days")
        if self.ifr.size != a:
            raise StructureError("ifr must have one entry per age group")
        if self.contact.n_groups != a:
            raise StructureError("contact matrix does not match the age structure")
        for name, arr in (("deaths", self.deaths), ("cases", self.cases)):
            finite = arr[np.isfinite(arr)]
            if np.any(finite < 0) or np.any(finite != np.floor(finite)):
                raise ValidationError(f"{name} must contain non-negative integer counts")

    @property
    def start_date(self) -> pd.Timestamp:
        return self.dates[0]

    @property
    def n_groups(self) -> int:
        return self.ages.n_groups

    @property
    def horizon_days(self) -> int:
        return 7 * self.weeks

    def weekly_cases(self) -> np.ndarray:
        """(weeks, groups) confirmed-case totals; NaN-safe sum within weeks."""
        shaped = self.cases.reshape(self.weeks, 7, self.n_groups)
        return np.nansum(shaped, axis=1)


def _read_csv(path: Path, errors: list[str]) -> pd.DataFrame | None:
    try:
        return pd.read_csv(path)
    except FileNotFoundError:
        errors.append(f"{path}: file not found")
    except Exception as exc:  # malformed delimiter/quoting problems land here
        errors.append(f"{path}: cannot parse ({exc})")
    return None


def _read_counts(
    path: Path, start: pd.Timestamp, horizon: int, zero_fill: bool, errors: list[str]
) -> tuple[pd.DataFrame | None, list[str]]:
    frame = _read_csv(path, errors)
    if frame is None:
        return None, []
    if "date" not in frame.columns:
        errors.append(f"{path}: missing 'date' column")
        return None, []
    bands = [c for c in frame.columns if c != "date"]
    if not bands:
        errors.append(f"{path}: no age-band count columns")
        return None, []
    try:
        stamps = pd.to_datetime(frame["date"])
    except (ValueError, TypeError) as exc:
        errors.append(f"{path}: unparseable dates ({exc})")
        return None, bands
    dupes = stamps[stamps.duplicated()]
    if len(dupes):
        errors.append(f"{path}: duplicate date row {dupes.iloc[0].date()}")
        return None, bands
    frame = frame.assign(date=stamps).set_index("date").sort_index()

    expected = pd.date_range(start, periods=horizon, freq="D")
    missing = expected.difference(frame.index)
    if len(missing):
        if zero_fill:
            frame = frame.reindex(expected, fill_value=0)
        else:
            errors.append(
                f"{path}: date gaps within the study period (first missing "
                f"{missing[0].date()}, {len(missing)} total); "
                "set data.zero_fill_gaps to fill them with zeros"
            )
            return None, bands
    outside = frame.index.difference(expected)
    if len(outside):
        errors.append(
            f"{path}: {len(outside)} rows outside the study period "
            f"(e.g. {outside[0].date()}); expected exactly {expected[0].date()}"
            f"..{expected[-1].date()}"
        )
        return None, bands
    frame = frame.loc[expected]

    values = frame[bands]
    numeric = values.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna() & values.notna()
    if bad.any().any():
        col = bad.any()[bad.any()].index[0]
        errors.append(f"{path}: non-numeric count in column {col!r}")
        return None, bands
    arr = numeric.to_numpy(dtype=float)
    finite = arr[np.isfinite(arr)]
    if np.any(finite < 0) or np.any(finite != np.floor(finite)):
        errors.append(f"{path}: counts must be non-negative integers")
        return None, bands
    return numeric, bands


def _aggregate_counts(frame: pd.DataFrame, groups: dict[str, list[str]]) -> np.ndarray:
    return np.stack(
        [frame[bands].to_numpy(dtype=float).sum(axis=1) for bands in groups.values()], axis=1
    )


def ingest(data: DataSettings, age_groups: dict[str, list[str]] | None = None) -> DataBundle:
    """Read, validate and aggregate the input files into a bundle.

    Every detected problem is reported at once in the raised
    :class:`ValidationError`, one line per issue.
    """
    errors: list[str] = []
    start = pd.Timestamp(data.start_date)
    horizon = 7 * data.weeks

    deaths_frame, death_bands = _read_counts(
        Path(data.deaths), start, horizon, data.zero_fill_gaps, errors
    )
    cases_frame, case_bands = _read_counts(
        Path(data.cases), start, horizon, data.zero_fill_gaps, errors
    )

    pop_frame = _read_csv(Path(data.population), errors)
    pop = None
    if pop_frame is not None:
        if not {"group", "population"} <= set(pop_frame.columns):
            errors.append(f"{data.population}: needs columns group,population")
        else:
            pop = pop_frame.assign(group=pop_frame["group"].astype(str)).set_index("group")[
                "population"
            ]
            if pop.index.duplicated().any():
                errors.append(f"{data.population}: duplicate group rows")
                pop = None
            elif (pd.to_numeric(pop, errors="coerce") <= 0).any():
                errors.append(f"{data.population}: populations must be positive numbers")
                pop = None

    contact_frame = _read_csv(Path(data.contacts), errors)
    contacts = None
    if contact_frame is not None:
        if "band" not in contact_frame.columns:
            errors.append(f"{data.contacts}: needs a 'band' label column")
        else:
            contacts = contact_frame.assign(band=contact_frame["band"].astype(str)).set_index(
                "band"
            )
            if list(contacts.index) != list(contacts.columns):
                errors.append(f"{data.contacts}: row and column band labels differ")
                contacts = None

    ifr_frame = _read_csv(Path(data.ifr), errors)
    ifr = None
    if ifr_frame is not None:
        if not {"group", "ifr"} <= set(ifr_frame.columns):
            errors.append(f"{data.ifr}: needs columns group,ifr")
        else:
            ifr = ifr_frame.assign(group=ifr_frame["group"].astype(str)).set_index("group")["ifr"]

    if errors:
        raise ValidationError("input validation failed:\n" + "\n".join(f"- {e}" for e in errors))
    assert deaths_frame is not None and cases_frame is not None
    assert pop is not None and contacts is not None and ifr is not None

    bands = list(pop.index)
    for name, got in (
        ("deaths", death_bands),
        ("cases", case_bands),
        ("contacts", list(contacts.index)),
    ):
        if sorted(got) != sorted(bands):
            errors.append(
                f"age bands in {name} ({sorted(got)}) do not match the population table ({sorted(bands)})"
            )
    if errors:
        raise ValidationError("input validation failed:\n" + "\n".join(f"- {e}" for e in errors))

    groups = age_groups or {band: [band] for band in bands}
    ifr_labels = list(ifr.index)
    if sorted(ifr_labels) != sorted(groups):
        raise ValidationError(
            "input validation failed:\n- ifr groups "
            f"({sorted(ifr_labels)}) must match the target age groups ({sorted(groups)})"
        )

    fine_pops = pop.to_numpy(dtype=float)
    contact = aggregate_contact_matrix(
        contacts[bands].loc[bands].to_numpy(dtype=float), fine_pops, bands, groups
    )
    ages = contact.ages

    deaths = _aggregate_counts(deaths_frame, groups)
    cases = _aggregate_counts(cases_frame, groups)
    ifr_vec = np.array([float(ifr[g]) for g in groups])

    return DataBundle(
        deaths=deaths,
        cases=cases,
        dates=pd.date_range(start, periods=horizon, freq="D"),
        ages=ages,
        contact=contact,
        ifr=ifr_vec,
        weeks=data.weeks,
    )


def export_bundle(bundle: DataBundle, directory: Path | str) -> dict[str, Path]:
    """Write a bundle back to canonical CSV files (at the group level).

    Re-ingesting the written files with an identity group mapping reproduces
    the bundle, which is how simulated datasets are materialized.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    labels = list(bundle.ages.group_labels)
    paths = {}

    for name, arr in (("deaths", bundle.deaths), ("cases", bundle.cases)):
        frame = pd.DataFrame(arr.astype(int), columns=labels)
        frame.insert(0, "date", bundle.dates.strftime("%Y-%m-%d"))
        paths[name] = directory / f"{name}.csv"
        frame.to_csv(paths[name], index=False)

    pop = pd.DataFrame(
        {"group": labels, "population": bundle.ages.group_populations.astype(int)}
    )
    paths["population"] = directory / "population.csv"
    pop.to_csv(paths["population"], index=False)

    contacts = pd.DataFrame(bundle.contact.entries, columns=labels)
    contacts.insert(0, "band", labels)
    paths["contacts"] = directory / "contacts.csv"
    contacts.to_csv(paths["contacts"], index=False)

    ifr = pd.DataFrame({"group": labels, "ifr": bundle.ifr})
    paths["ifr"] = directory / "ifr.csv"
    ifr.to_csv(paths["ifr"], index=False)
    return paths


def bundle_data_settings(directory: Path | str, start_date: str, weeks: int) -> DataSettings:
    """DataSettings pointing at the canonical files under ``directory``."""
    directory = Path(directory)
    return DataSettings(
        deaths=directory / "deaths.csv",
        cases=directory / "cases.csv",
        population=directory / "population.csv",
        contacts=directory / "contacts.csv",
        ifr=directory / "ifr.csv",
        start_date=start_date,
        weeks=weeks,
    )
