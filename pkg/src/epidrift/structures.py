"""Age structure, contact matrices and transmission-rate construction.

The population is partitioned into age groups. Contacts between groups enter
the model through a daily-contact matrix whose entries are per-capita counts;
transmissibility scales those contacts into transmission rates, either with a
single shared factor or one factor per age group.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .validation import (
    StructureError,
    ValidationError,
    as_float_array,
    check_nonnegative,
    check_positive,
    check_square,
    frozen_array,
)

RECIPROCITY_RTOL = 1e-9


@dataclass(frozen=True)
class AgeStructure:
    """Partition of a population into age groups.

    Parameters
    ----------
    group_labels : sequence of str
        One label per age group.
    group_populations : array-like
        Number of persons in each group; strictly positive.
    """

    group_labels: tuple[str, ...]
    group_populations: np.ndarray

    def __init__(self, group_labels, group_populations):
        object.__setattr__(self, "group_labels", tuple(str(g) for g in group_labels))
        object.__setattr__(
            self, "group_populations", frozen_array(group_populations, "group_populations", ndim=1)
        )
        if len(self.group_labels) != self.group_populations.size:
            raise StructureError(
                f"{len(self.group_labels)} labels but {self.group_populations.size} population counts"
            )
        if self.group_populations.size < 1:
            raise ValidationError("at least one age group is required")
        check_positive(self.group_populations, "group_populations")

    @property
    def n_groups(self) -> int:
        return self.group_populations.size

    @property
    def total_population(self) -> float:
        return float(self.group_populations.sum())

    @property
    def group_fractions(self) -> np.ndarray:
        return self.group_populations / self.total_population


class ModelKind(enum.Enum):
    """Transmissibility structure: one diffusion path in total, or one per group."""

    SBM = "sbm"
    MBM = "mbm"

    def n_paths(self, n_groups: int) -> int:
        return 1 if self is ModelKind.SBM else n_groups

    @classmethod
    def parse(cls, value) -> "ModelKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValidationError(f"unknown model kind {value!r}; expected 'sbm' or 'mbm'") from None


@dataclass(frozen=True)
class RateParams:
    """Progression rates of the two-stage latent and infectious periods."""

    tau: float
    gamma: float

    def __post_init__(self):
        if not (self.tau > 0 and self.gamma > 0):
            raise ValidationError(f"tau and gamma must be positive, got {self.tau}, {self.gamma}")

    @classmethod
    def from_periods(cls, mean_latent_period: float, mean_infectious_period: float) -> "RateParams":
        if not (mean_latent_period > 0 and mean_infectious_period > 0):
            raise ValidationError("stage-period means must be positive")
        return cls(tau=2.0 / mean_latent_period, gamma=2.0 / mean_infectious_period)

    @property
    def mean_latent_period(self) -> float:
        return 2.0 / self.tau

    @property
    def mean_infectious_period(self) -> float:
        return 2.0 / self.gamma


@dataclass(frozen=True)
class ContactMatrix:
    """Average daily contacts between age groups, reciprocal w.r.t. population.

    Reciprocity means the total number of contacts reported from group a to
    group b matches the total reported from b to a:
    ``entries[a, b] * N_a == entries[b, a] * N_b``.
    """

    entries: np.ndarray
    ages: AgeStructure

    def __init__(self, entries, ages: AgeStructure):
        entries = frozen_array(entries, "entries", ndim=2)
        check_square(entries, "contact matrix")
        if entries.shape[0] != ages.n_groups:
            raise StructureError(
                f"contact matrix is {entries.shape[0]}x{entries.shape[0]} "
                f"but age structure has {ages.n_groups} groups"
            )
        check_nonnegative(entries, "contact matrix")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "ages", ages)
        pops = ages.group_populations
        lhs = entries * pops[:, None]
        asym = np.abs(lhs - lhs.T)
        scale = np.maximum(np.abs(lhs), np.abs(lhs.T))
        if np.any(asym > RECIPROCITY_RTOL * np.maximum(scale, 1e-300) + 1e-300):
            worst = float(np.max(asym / np.maximum(scale, 1e-300)))
            raise ValidationError(
                f"contact matrix violates reciprocity (worst relative asymmetry {worst:.3e}); "
                "use symmetrize_reciprocity or aggregate_contact_matrix to construct one"
            )

    @property
    def n_groups(self) -> int:
        return self.entries.shape[0]


def symmetrize_reciprocity(raw: np.ndarray, ages: AgeStructure) -> ContactMatrix:
    """Enforce reciprocity on a raw per-capita contact matrix.

    Each pair of entries is replaced by the population-weighted average
    ``(C[a,b]*N_a + C[b,a]*N_b) / (2*N_a)``, which makes total contacts
    between any two groups agree in both directions.
    """
    raw = as_float_array(raw, "raw contact matrix", ndim=2)
    check_square(raw, "raw contact matrix")
    if raw.shape[0] != ages.n_groups:
        raise StructureError("raw contact matrix does not match the age structure")
    check_nonnegative(raw, "raw contact matrix")
    pops = ages.group_populations
    total = raw * pops[:, None]
    sym = 0.5 * (total + total.T) / pops[:, None]
    return ContactMatrix(sym, ages)


def aggregate_contact_matrix(
    raw: np.ndarray,
    fine_populations,
    fine_labels,
    target_groups: dict[str, list[str]],
) -> ContactMatrix:
    """Collapse a fine-band contact matrix onto coarser age groups.

    Row aggregation weights each contributing band by its population share
    within the target group (rows are "contactors": entries are per-capita
    contact counts); columns are summed. Reciprocity is enforced afterwards.

    Parameters
    ----------
    raw : (B, B) array
        Contacts per person per day between fine age bands.
    fine_populations : (B,) array
        Persons per fine band.
    fine_labels : sequence of str
        Band labels, matching the rows/columns of ``raw``.
    target_groups : dict
        Maps each target group label to the list of band labels it absorbs.
        The bands must partition ``fine_labels`` exactly.

    Returns
    -------
    ContactMatrix
        Aggregated, reciprocity-symmetrized matrix over the target groups.
    """
    raw = as_float_array(raw, "raw contact matrix", ndim=2)
    check_square(raw, "raw contact matrix")
    check_nonnegative(raw, "raw contact matrix")
    fine_populations = as_float_array(fine_populations, "fine_populations", ndim=1)
    check_positive(fine_populations, "fine_populations")
    fine_labels = [str(b) for b in fine_labels]
    if raw.shape[0] != len(fine_labels) or fine_populations.size != len(fine_labels):
        raise StructureError(
            f"raw matrix ({raw.shape[0]} bands), populations ({fine_populations.size}) "
            f"and labels ({len(fine_labels)}) disagree"
        )

    index = {label: i for i, label in enumerate(fine_labels)}
    if len(index) != len(fine_labels):
        raise StructureError("fine band labels are not unique")
    seen: set[str] = set()
    for group, bands in target_groups.items():
        for band in bands:
            if band not in index:
                raise StructureError(f"group {group!r} references unknown band {band!r}")
            if band in seen:
                raise StructureError(f"band {band!r} assigned to more than one group")
            seen.add(band)
    missing = set(fine_labels) - seen
    if missing:
        raise StructureError(f"bands not assigned to any group: {sorted(missing)}")

    labels = list(target_groups)
    group_pops = np.array(
        [fine_populations[[index[b] for b in target_groups[g]]].sum() for g in labels]
    )
    ages = AgeStructure(labels, group_pops)

    a = len(labels)
    agg = np.zeros((a, a))
    for gi, g in enumerate(labels):
        rows = [index[b] for b in target_groups[g]]
        weights = fine_populations[rows] / fine_populations[rows].sum()
        for gj, g2 in enumerate(labels):
            cols = [index[b] for b in target_groups[g2]]
            agg[gi, gj] = weights @ raw[np.ix_(rows, cols)].sum(axis=1)
    return symmetrize_reciprocity(agg, ages)


def transmission_rate_matrix(betas, contact: ContactMatrix, kind: ModelKind) -> np.ndarray:
    """Scale the contact matrix by transmissibility into per-day transmission rates.

    Under the shared-path model a single beta multiplies every entry; under
    the per-group model each row is scaled by the beta of the group whose
    force of infection that row feeds.
    """
    betas = as_float_array(betas, "betas", ndim=1)
    check_positive(betas, "betas")
    a = contact.n_groups
    expected = kind.n_paths(a)
    if betas.size != expected:
        raise StructureError(
            f"{kind.value} expects {expected} transmissibilities for {a} groups, got {betas.size}"
        )
    if kind is ModelKind.SBM:
        return betas[0] * contact.entries
    return betas[:, None] * contact.entries


@dataclass(frozen=True)
class TransmissionSnapshot:
    """Transmission state at one time point: rate matrix, betas and forces."""

    rate_matrix: np.ndarray
    betas: np.ndarray
    force_of_infection: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rate_matrix", frozen_array(self.rate_matrix, "rate_matrix", ndim=2))
        object.__setattr__(self, "betas", frozen_array(self.betas, "betas", ndim=1))
        object.__setattr__(
            self, "force_of_infection", frozen_array(self.force_of_infection, "force_of_infection", ndim=1)
        )
        check_nonnegative(self.rate_matrix, "rate_matrix")
        check_positive(self.betas, "betas")
        check_nonnegative(self.force_of_infection, "force_of_infection")
