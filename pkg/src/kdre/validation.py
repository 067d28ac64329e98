"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


class InvalidInputError(ValueError):
    """Raised when an argument violates an operation's preconditions."""


def as_points(x, name: str = "points") -> np.ndarray:
    """Coerce to a finite 2-D float array of shape (n, d).

    1-D input is treated as n points in R^1.
    """
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be 1-D or 2-D, got ndim={arr.ndim}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite coordinates")
    return arr


def as_point(x, name: str = "point") -> np.ndarray:
    """Coerce a single point to a finite 1-D float array."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise InvalidInputError(f"{name} must be a single point, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite coordinates")
    return arr


def check_same_dim(a: np.ndarray, b: np.ndarray, what: str = "points") -> None:
    if a.shape[-1] != b.shape[-1]:
        raise InvalidInputError(
            f"dimension mismatch for {what}: {a.shape[-1]} vs {b.shape[-1]}"
        )


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise InvalidInputError(f"{name} must be a positive finite real, got {value}")
    return value
