"""Input validation helpers and the package error hierarchy."""

from __future__ import annotations

import numpy as np


class ValidationError(ValueError):
    """Raised when input data violate a documented contract."""


class StructureError(ValidationError):
    """Raised on dimension or label mismatches between inputs."""


class NumericalInstabilityError(RuntimeError):
    """Raised when the ODE integrator produces a meaningfully negative state."""


class SamplerFailure(RuntimeError):
    """Raised when sampling cannot produce a usable posterior sample."""


def as_float_array(x, name: str, ndim: int | None = None) -> np.ndarray:
    """Coerce to a float64 ndarray, optionally enforcing dimensionality."""
    arr = np.asarray(x, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise StructureError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    return arr


def check_finite(arr: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")


def check_nonnegative(arr: np.ndarray, name: str, tol: float = 0.0) -> None:
    low = np.min(arr) if arr.size else 0.0
    if low < -tol:
        raise ValidationError(f"{name} has negative entries (min {low:g})")


def check_positive(arr: np.ndarray, name: str) -> None:
    low = np.min(arr) if arr.size else 1.0
    if low <= 0:
        raise ValidationError(f"{name} must be strictly positive (min {low:g})")


def check_square(arr: np.ndarray, name: str) -> None:
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise StructureError(f"{name} must be a square matrix, got shape {arr.shape}")


def check_shape(arr: np.ndarray, shape: tuple[int, ...], name: str) -> None:
    if arr.shape != shape:
        raise StructureError(f"{name} must have shape {shape}, got {arr.shape}")


def check_probability(value: float, name: str, open_interval: bool = True) -> None:
    if open_interval:
        if not (0.0 < value < 1.0):
            raise ValidationError(f"{name} must lie in (0, 1), got {value!r}")
    elif not (0.0 <= value <= 1.0):
        raise ValidationError(f"{name} must lie in [0, 1], got {value!r}")


def frozen_array(x, name: str, ndim: int | None = None) -> np.ndarray:
    """Float array marked read-only, for immutable value objects."""
    arr = np.array(x, dtype=float)  # always copy so callers cannot mutate later
    if ndim is not None and arr.ndim != ndim:
        raise StructureError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr
