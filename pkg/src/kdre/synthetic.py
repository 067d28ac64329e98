"""Benchmark problems with analytically known density ratios.

Two constructions: pairs of random Gaussian mixtures whose exact ratio
is the quotient of the two densities, and a 1-D periodic construction
on [0, 1] where the Bayes score f_H is a periodic Sobolev kernel section
of prescribed smoothness, so the regularity of the target is known by
design.  In the latter, x is uniform on [0, 1], the conditional is
logistic, eta(x) = 1 / (1 + exp(-f_H(x))), and

    pi = integral of eta,   p = eta / pi,   q = (1 - eta) / (1 - pi),
    beta(x) = p(x) / q(x) = ((1 - pi) / pi) * eta(x) / (1 - eta(x)).

Because the class marginal pi is not 1/2, scores fitted on samples drawn
with base rate pi map to ratios through a pi-adjusted inverse link
rather than the plain one.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.special import expit, logsumexp

from .kernels import sobolev_eval
from .losses import get_family
from .validation import InvalidInputError, as_points, check_positive


class ConstructionError(ValueError):
    """A synthetic problem cannot be built from the given parameters."""


# --------------------------------------------------------------------------
# Gaussian mixtures
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    _chols: np.ndarray = field(init=False, repr=False)
    _log_norms: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=float)
        cov = np.asarray(self.covariances, dtype=float)
        if w.ndim != 1 or mu.ndim != 2 or cov.ndim != 3:
            raise InvalidInputError("weights (k,), means (k,d), covariances (k,d,d)")
        k, d = mu.shape
        if w.shape != (k,) or cov.shape != (k, d, d):
            raise InvalidInputError("mixture component shapes are inconsistent")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidInputError("weights must be nonnegative and sum to 1")
        chols = np.empty_like(cov)
        log_norms = np.empty(k)
        for j in range(k):
            if not np.allclose(cov[j], cov[j].T, atol=1e-12):
                raise InvalidInputError(f"covariance {j} is not symmetric")
            try:
                chols[j] = np.linalg.cholesky(cov[j])
            except np.linalg.LinAlgError:
                raise InvalidInputError(f"covariance {j} is not positive definite")
            log_norms[j] = -0.5 * d * math.log(2.0 * math.pi) - np.sum(
                np.log(np.diag(chols[j]))
            )
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", cov)
        object.__setattr__(self, "_chols", chols)
        object.__setattr__(self, "_log_norms", log_norms)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def log_density(self, x) -> np.ndarray:
        pts = as_points(x, "x")
        if pts.shape[1] != self.dim:
            raise InvalidInputError(
                f"dimension mismatch: points are {pts.shape[1]}-D, mixture is {self.dim}-D"
            )
        k = len(self.weights)
        comp_logs = np.empty((len(pts), k))
        for j in range(k):
            centered = pts - self.means[j]
            # solve L z = (x - mu) per row; quadratic form is ||z||^2
            z = np.linalg.solve(self._chols[j], centered.T).T
            comp_logs[:, j] = self._log_norms[j] - 0.5 * np.sum(z * z, axis=1)
        return logsumexp(comp_logs, axis=1, b=self.weights[None, :])

    def density(self, x) -> np.ndarray:
        return np.exp(self.log_density(x))

    def sample(self, count: int, seed) -> np.ndarray:
        if count < 0:
            raise InvalidInputError("count must be nonnegative")
        rng = np.random.default_rng(seed)
        comps = rng.choice(len(self.weights), size=count, p=self.weights)
        z = rng.standard_normal((count, self.dim))
        out = self.means[comps] + np.einsum("nij,nj->ni", self._chols[comps], z)
        return out


def mixture_density(gm: GaussianMixture, x):
    """Mixture pdf at x, evaluated in log space with log-sum-exp."""
    vals = gm.density(np.atleast_2d(np.asarray(x, dtype=float)))
    return float(vals[0]) if np.asarray(x).ndim <= 1 else vals


def sample_mixture(gm: GaussianMixture, count: int, seed) -> np.ndarray:
    """i.i.d. draws: categorical component choice then Gaussian draw."""
    return gm.sample(count, seed)


@dataclass(frozen=True)
class MixturePairProblem:
    p: GaussianMixture
    q: GaussianMixture
    seed: object  # int or tuple of ints, kept as provenance
    dim: int

    def exact_ratio(self, x) -> np.ndarray:
        pts = as_points(x, "x")
        return np.exp(self.p.log_density(pts) - self.q.log_density(pts))


def _random_mixture(rng: np.random.Generator, components: int, dim: int) -> GaussianMixture:
    weights = rng.uniform(0.0, 1.0, components)
    weights = weights / weights.sum()
    means = rng.uniform(0.0, 0.5, (components, dim))
    covs = np.empty((components, dim, dim))
    for j in range(components):
        a = rng.standard_normal((dim, dim))
        # unit isotropic base plus a mild random anisotropy: keeps every
        # covariance SPD while bounding the tails of p/q, so the ratio's
        # dynamic range stays measurable at benchmark sample sizes
        covs[j] = np.eye(dim) + 0.2 * (a @ a.T / dim)
    return GaussianMixture(weights, means, covs)


def make_geometric_problem(seed, dim: int = 50) -> MixturePairProblem:
    """Random mixture pair: component counts n and 4-n with n uniform on {1,2,3}.

    Means are uniform in [0, 0.5]^dim; weights uniform then normalized;
    each covariance is I + 0.2 A A^T / dim with A standard normal.
    """
    rng = np.random.default_rng(seed)
    n_p = int(rng.integers(1, 4))
    n_q = 4 - n_p
    p = _random_mixture(rng, n_p, dim)
    q = _random_mixture(rng, n_q, dim)
    return MixturePairProblem(p=p, q=q, seed=seed, dim=dim)


# --------------------------------------------------------------------------
# Known-regularity construction on [0, 1]
# --------------------------------------------------------------------------


def _round_even_order(alpha: int, r: float) -> int:
    raw = (r + 0.5) * alpha + 0.5
    order = 2 * int(round(raw / 2.0))
    if order < 2:
        raise ConstructionError(
            f"(alpha={alpha}, r={r}) gives kernel order {raw:.3f}, below the "
            "smallest supported even order 2"
        )
    return order


@dataclass(frozen=True)
class RegularityProblem:
    alpha: int
    r: float
    order: int
    grid: np.ndarray
    f_h: np.ndarray
    eta: np.ndarray
    pi: float
    p: np.ndarray
    q: np.ndarray
    beta: np.ndarray

    def beta_at(self, x) -> np.ndarray:
        return np.interp(np.asarray(x, dtype=float), self.grid, self.beta)


def make_regularity_problem(
    alpha: int, r: float, grid_size: int = 4096, eta_override=None
) -> RegularityProblem:
    """Build the periodic benchmark with known regularity index r.

    ``eta_override`` is a test hook replacing the logistic conditional
    with a fixed function of x (e.g. a constant 1/2).
    """
    if grid_size < 512:
        raise InvalidInputError("grid_size must be at least 512")
    check_positive(r, "r")
    order = _round_even_order(alpha, r)
    grid = np.linspace(0.0, 1.0, int(grid_size))
    f_h = np.array([sobolev_eval(0.0, x, order) for x in grid])
    if eta_override is None:
        eta = expit(f_h)
    else:
        eta = np.asarray(
            eta_override(grid) if callable(eta_override) else eta_override, dtype=float
        )
        if eta.shape != grid.shape:
            raise InvalidInputError("eta_override must match the grid shape")
    if np.any(eta <= 0.0) or np.any(eta >= 1.0):
        raise ConstructionError("conditional eta leaves (0, 1) on the grid")
    pi = float(trapezoid(eta, grid))
    p = eta / pi
    q = (1.0 - eta) / (1.0 - pi)
    beta = p / q
    return RegularityProblem(
        alpha=int(alpha),
        r=float(r),
        order=order,
        grid=grid,
        f_h=f_h,
        eta=eta,
        pi=pi,
        p=p,
        q=q,
        beta=beta,
    )


def _inverse_cdf_sample(grid, density, count, rng) -> np.ndarray:
    cdf = cumulative_trapezoid(density, grid, initial=0.0)
    cdf = cdf / cdf[-1]
    return np.interp(rng.random(count), cdf, grid)


def sample_regularity(problem: RegularityProblem, count_p: int, count_q: int, seed):
    """Inverse-CDF draws from p and q on the dense grid; deterministic per seed."""
    if count_p < 0 or count_q < 0:
        raise InvalidInputError("counts must be nonnegative")
    rng = np.random.default_rng(seed)
    x_p = _inverse_cdf_sample(problem.grid, problem.p, count_p, rng)
    x_q = _inverse_cdf_sample(problem.grid, problem.q, count_q, rng)
    return x_p.reshape(-1, 1), x_q.reshape(-1, 1)


def adjusted_inv_link(problem: RegularityProblem, family, v):
    """Base-rate-adjusted inverse link.

    With u = inv_link(v) the estimate of the class posterior at base rate
    pi, the adjusted probability is the balanced-class posterior

        u~ = u * (1 - pi) / (pi + u * (1 - 2 * pi)),

    chosen so that u~/(1-u~) = ((1-pi)/pi) * u/(1-u), the ratio identity
    of the construction.  At pi = 1/2 it reduces to inv_link itself.
    """
    fam = get_family(family)
    pi = problem.pi
    u = np.asarray(fam.inv_link(np.asarray(v, dtype=float)), dtype=float)
    out = u * (1.0 - pi) / (pi + u * (1.0 - 2.0 * pi))
    return float(out) if np.ndim(out) == 0 else out


def ratio_from_adjusted_score(problem: RegularityProblem, family, v):
    """Score -> ratio through the adjusted link: u~/(1 - u~)."""
    u_adj = adjusted_inv_link(problem, family, v)
    u_adj = np.asarray(u_adj, dtype=float)
    out = u_adj / (1.0 - u_adj)
    return float(out) if np.ndim(out) == 0 else out


def l1_ratio_error(problem: RegularityProblem, model) -> float:
    """Trapezoid quadrature of |beta - estimated ratio| over the grid.

    ``model`` is either a fitted RatioModel (scores are mapped through
    the adjusted link) or a callable returning ratio values on the grid.
    """
    grid_pts = problem.grid.reshape(-1, 1)
    if callable(model):
        est = np.asarray(model(problem.grid), dtype=float)
    else:
        scores = model.scores(grid_pts)
        est = ratio_from_adjusted_score(problem, model.family, scores)
    return float(trapezoid(np.abs(problem.beta - est), problem.grid))


# --------------------------------------------------------------------------
# Dataset export
# --------------------------------------------------------------------------


def export_dataset(csv_path, x_p, x_q, manifest: dict) -> None:
    """Write `label,x1,...,xd` rows (+1 block then -1 block) plus a sidecar
    JSON manifest at <csv_path>.manifest.json."""
    xp = as_points(x_p, "x_p")
    xq = as_points(x_q, "x_q")
    d = xp.shape[1] if len(xp) else xq.shape[1]
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"x{i + 1}" for i in range(d)])
        for row in xp:
            writer.writerow(["1"] + [repr(float(v)) for v in row])
        for row in xq:
            writer.writerow(["-1"] + [repr(float(v)) for v in row])
    with open(f"{csv_path}.manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_dataset(csv_path):
    """Read a dataset CSV back into (x_p, x_q) arrays."""
    xp_rows, xq_rows = [], []
    with open(csv_path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "label":
            raise InvalidInputError(f"{csv_path}: expected a `label,x1,...` header")
        for i, row in enumerate(reader, start=2):
            try:
                label = int(row[0])
                values = [float(v) for v in row[1:]]
            except (ValueError, IndexError):
                raise InvalidInputError(f"{csv_path}: unparsable row {i}")
            if label == 1:
                xp_rows.append(values)
            elif label == -1:
                xq_rows.append(values)
            else:
                raise InvalidInputError(f"{csv_path}: row {i} has label {label}")
    return np.asarray(xp_rows, dtype=float), np.asarray(xq_rows, dtype=float)
