"""Hyperparameter selection over (lambda, iteration count) grids.

Both knobs are scored on a held-out split by the plain pooled empirical
risk of the family being fitted.  The iteration count comes nearly for
free: one fit at the largest t on the grid yields the coefficient path
for every smaller t, so the sweep costs one solve per lambda.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import GaussianKernel, median_bandwidth
from .losses import empirical_risk, get_family
from .solver import RatioModel, cg_coefficient_path, kulsif_coefficient_path
from .validation import InvalidInputError, as_points

DEFAULT_LAMBDA_GRID = tuple(float(10.0**e) for e in range(-6, 5))
DEFAULT_T_GRID = tuple(range(1, 11))


def split_points(x, fractions, seed):
    """Shuffle rows with the seeded generator, then cut contiguously.

    Returns one array per fraction; fractions must be positive and sum
    to 1.  Boundary indices are round(cumulative fraction * n).
    """
    pts = as_points(x, "x")
    frac = np.asarray(fractions, dtype=float)
    if np.any(frac <= 0) or abs(frac.sum() - 1.0) > 1e-9:
        raise InvalidInputError("fractions must be positive and sum to 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pts))
    bounds = np.round(np.cumsum(frac) * len(pts)).astype(int)
    bounds[-1] = len(pts)
    pieces = []
    start = 0
    for b in bounds:
        pieces.append(pts[order[start:b]])
        start = b
    return pieces


@dataclass(frozen=True)
class SelectionConfig:
    family: str
    kernel: object = None  # None -> Gaussian with the median bandwidth of the train pool
    lam_grid: tuple = DEFAULT_LAMBDA_GRID
    t_grid: tuple = DEFAULT_T_GRID
    train_fraction: float = 0.8
    target_eps: float = 1e-6

    def __post_init__(self):
        if not self.lam_grid or not self.t_grid:
            raise InvalidInputError("lam_grid and t_grid must be non-empty")
        if any(l <= 0 for l in self.lam_grid):
            raise InvalidInputError("lambda grid values must be positive")
        if any(t < 1 or t != int(t) for t in self.t_grid):
            raise InvalidInputError("t grid values must be positive integers")
        if not 0.0 < self.train_fraction < 1.0:
            raise InvalidInputError("train_fraction must lie strictly in (0, 1)")


@dataclass
class SelectionResult:
    family: str
    kernel: object
    lam: float
    t: int
    val_risk: float
    model: RatioModel
    table: list = field(default_factory=list)
    n_train: tuple = (0, 0)
    n_val: tuple = (0, 0)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "kernel": self.kernel.to_dict(),
            "lambda": float(self.lam),
            "t": int(self.t),
            "val_risk": float(self.val_risk),
            "n_train": [int(v) for v in self.n_train],
            "n_val": [int(v) for v in self.n_val],
            "table": [
                {"lambda": float(l), "t": int(t), "val_risk": float(r)}
                for l, t, r in self.table
            ],
        }


def _coefficient_paths(x_p, x_q, family, kernel, lam, t_max, target_eps):
    if get_family(family).name == "kulsif":
        anchors, m, n, path = kulsif_coefficient_path(x_p, x_q, kernel, lam, t_max)
    else:
        anchors, m, n, path, _ = cg_coefficient_path(
            x_p, x_q, family, kernel, lam, t_max, target_eps
        )
    return anchors, m, n, path


def select(x_p, x_q, config: SelectionConfig, seed) -> SelectionResult:
    """Grid search with deterministic tie-breaking.

    Ties in validation risk go to the smaller t, then the smaller
    lambda.  The returned model is the one fitted on the train split
    at the winning pair; the validation rows are not folded back in.
    """
    fam = get_family(config.family)
    seeds = np.random.SeedSequence(seed).spawn(2)
    train_p, val_p = split_points(x_p, (config.train_fraction, 1 - config.train_fraction), seeds[0])
    train_q, val_q = split_points(x_q, (config.train_fraction, 1 - config.train_fraction), seeds[1])
    if min(len(train_p), len(train_q), len(val_p), len(val_q)) < 1:
        raise InvalidInputError("split left an empty train or validation part")

    kernel = config.kernel
    if kernel is None:
        kernel = GaussianKernel(median_bandwidth(np.vstack([train_p, train_q])))

    t_max = int(max(config.t_grid))
    t_grid = sorted(int(t) for t in config.t_grid)
    lam_grid = sorted(float(l) for l in config.lam_grid)

    from .kernels import gram  # local import to keep module top lean

    best = None  # (risk, t, lam, coeffs)
    table = []
    g_val_p = g_val_q = None
    anchors = None
    for lam in lam_grid:
        anchors, m, n, path = _coefficient_paths(
            train_p, train_q, fam, kernel, lam, t_max, config.target_eps
        )
        if g_val_p is None:
            g_val_p = gram(kernel, val_p, anchors)
            g_val_q = gram(kernel, val_q, anchors)
        for t in t_grid:
            coeffs = path[t - 1]
            risk = empirical_risk(fam, g_val_p @ coeffs, g_val_q @ coeffs)
            table.append((lam, t, risk))
            tol = 1e-12 * max(1.0, abs(risk))
            if (
                best is None
                or risk < best[0] - tol
                or (abs(risk - best[0]) <= tol and (t, lam) < (best[1], best[2]))
            ):
                best = (risk, t, lam, coeffs.copy())

    risk, t, lam, coeffs = best
    model = RatioModel(
        kernel=kernel,
        family=fam,
        anchors=anchors,
        coeffs=coeffs,
        lam=lam,
        t=t,
        n_p=len(train_p),
        n_q=len(train_q),
    )
    return SelectionResult(
        family=fam.name,
        kernel=kernel,
        lam=lam,
        t=t,
        val_risk=risk,
        model=model,
        table=table,
        n_train=(len(train_p), len(train_q)),
        n_val=(len(val_p), len(val_q)),
    )
