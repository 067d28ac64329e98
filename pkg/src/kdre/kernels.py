"""Kernel evaluations, Gram matrices, and bandwidth selection.

Two kernel families are provided: the Gaussian kernel
``exp(-||x - y||^2 / (2 b^2))`` on R^d, and the periodic Sobolev kernel

    h_a(x, y) = 1 + sum_{l != 0} exp(2*pi*i*l*(x - y)) / |l|^a

on [0, 1], which for even order a has the closed form

    h_a(x, y) = 1 + (-1)^(a/2 + 1) * (2*pi)^a / a! * B_a({x - y})

with B_a the Bernoulli polynomial of degree a evaluated on the
fractional part of x - y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist
from scipy.special import bernoulli as bernoulli_numbers
from scipy.special import comb

from .validation import InvalidInputError, as_points, check_positive, check_same_dim


class DegenerateBandwidthError(ValueError):
    """All pairwise distances are zero; the median bandwidth would be 0."""


class UnsupportedOrderError(ValueError):
    """Periodic Sobolev kernel order must be an even integer >= 2."""


# Bernoulli polynomial coefficients, highest degree first (numpy.polyval
# order), for the even orders used by the benchmarks.  Cross-checked in the
# test suite against a truncated Fourier-series oracle.
_BERNOULLI_COEFFS = {
    2: [1.0, -1.0, 1.0 / 6.0],
    4: [1.0, -2.0, 1.0, 0.0, -1.0 / 30.0],
    6: [1.0, -3.0, 5.0 / 2.0, 0.0, -1.0 / 2.0, 0.0, 1.0 / 42.0],
    8: [1.0, -4.0, 14.0 / 3.0, 0.0, -7.0 / 3.0, 0.0, 2.0 / 3.0, 0.0, -1.0 / 30.0],
    10: [
        1.0,
        -5.0,
        15.0 / 2.0,
        0.0,
        -7.0,
        0.0,
        5.0,
        0.0,
        -3.0 / 2.0,
        0.0,
        5.0 / 66.0,
    ],
}


def _bernoulli_poly_coeffs(order: int) -> np.ndarray:
    """Coefficients of B_order, highest degree first.

    Orders up to 10 come from the hard-coded table; higher even orders are
    built from Bernoulli numbers via B_n(x) = sum_k C(n,k) B_{n-k} x^k.
    """
    if order in _BERNOULLI_COEFFS:
        return np.asarray(_BERNOULLI_COEFFS[order], dtype=float)
    numbers = bernoulli_numbers(order)
    coeffs = [comb(order, k, exact=True) * numbers[order - k] for k in range(order, -1, -1)]
    return np.asarray(coeffs, dtype=float)


def _check_order(order) -> int:
    if order != int(order):
        raise UnsupportedOrderError(f"order must be an integer, got {order}")
    order = int(order)
    if order < 2 or order % 2 != 0:
        raise UnsupportedOrderError(f"order must be even and >= 2, got {order}")
    return order


@dataclass(frozen=True)
class GaussianKernel:
    """Gaussian kernel with a fixed bandwidth (length scale)."""

    bandwidth: float

    def __post_init__(self):
        check_positive(self.bandwidth, "bandwidth")

    def __call__(self, x, y) -> float:
        return gaussian_eval(x, y, self.bandwidth)

    def pairwise(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        sq = cdist(rows, cols, metric="sqeuclidean")
        return np.exp(-sq / (2.0 * self.bandwidth**2))

    def to_dict(self) -> dict:
        return {"variant": "gaussian", "bandwidth": float(self.bandwidth)}


@dataclass(frozen=True)
class PeriodicSobolevKernel:
    """Periodic Sobolev kernel of even order on [0, 1]."""

    order: int

    def __post_init__(self):
        object.__setattr__(self, "order", _check_order(self.order))

    def __call__(self, x, y) -> float:
        return sobolev_eval(x, y, self.order)

    def pairwise(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        if rows.shape[1] != 1:
            raise InvalidInputError("periodic Sobolev kernel is defined on 1-D points")
        diff = rows - cols.T
        return _sobolev_from_diff(diff, self.order)

    def to_dict(self) -> dict:
        return {"variant": "periodic_sobolev", "order": int(self.order)}


def kernel_from_dict(d: dict):
    variant = d.get("variant")
    if variant == "gaussian":
        return GaussianKernel(bandwidth=float(d["bandwidth"]))
    if variant == "periodic_sobolev":
        return PeriodicSobolevKernel(order=int(d["order"]))
    raise InvalidInputError(f"unknown kernel variant: {variant!r}")


def gaussian_eval(x, y, bandwidth: float) -> float:
    """Evaluate exp(-||x - y||^2 / (2 * bandwidth^2)) at a single pair."""
    check_positive(bandwidth, "bandwidth")
    xv = np.atleast_1d(np.asarray(x, dtype=float))
    yv = np.atleast_1d(np.asarray(y, dtype=float))
    if not (np.all(np.isfinite(xv)) and np.all(np.isfinite(yv))):
        raise InvalidInputError("non-finite input coordinates")
    check_same_dim(xv, yv)
    sq = float(np.sum((xv - yv) ** 2))
    return math.exp(-sq / (2.0 * bandwidth**2))


def _sobolev_from_diff(diff: np.ndarray, order: int) -> np.ndarray:
    frac = np.mod(diff, 1.0)
    coeffs = _bernoulli_poly_coeffs(order)
    poly = np.polyval(coeffs, frac)
    scale = (-1.0) ** (order // 2 + 1) * (2.0 * math.pi) ** order / math.factorial(order)
    return 1.0 + scale * poly


def sobolev_eval(x: float, y: float, order: int) -> float:
    """Evaluate the periodic Sobolev kernel h_order(x, y), period 1 in x - y."""
    order = _check_order(order)
    xv = np.asarray(x, dtype=float).reshape(-1)
    yv = np.asarray(y, dtype=float).reshape(-1)
    if xv.size != 1 or yv.size != 1:
        raise InvalidInputError("the periodic kernel is defined for scalar inputs")
    if not (math.isfinite(xv[0]) and math.isfinite(yv[0])):
        raise InvalidInputError("non-finite input coordinates")
    return float(_sobolev_from_diff(np.asarray(xv[0] - yv[0]), order))


def median_bandwidth(points) -> float:
    """Median of all pairwise Euclidean distances over unordered pairs.

    Duplicate points are allowed and their zero distances enter the
    median; only a zero median itself is an error.
    """
    pts = as_points(points)
    if len(pts) < 2:
        raise InvalidInputError("median_bandwidth needs at least 2 points")
    distances = pdist(pts)
    med = float(np.median(distances))
    if med <= 0.0:
        raise DegenerateBandwidthError("median pairwise distance is 0")
    return med


def gram(kernel, rows, cols) -> np.ndarray:
    """Dense matrix of kernel values, entry (i, j) = k(rows[i], cols[j])."""
    r = as_points(rows, "rows")
    c = as_points(cols, "cols")
    check_same_dim(r, c)
    return kernel.pairwise(r, c)
