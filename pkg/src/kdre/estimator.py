"""Estimator-style front end over the fitting routines.

DensityRatioEstimator follows the fit/predict conventions of
scikit-learn: X stacks draws from both distributions and y labels each
row +1 (numerator) or -1 (denominator).  predict returns density-ratio
estimates, score_samples the raw scores f(x).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .kernels import GaussianKernel, median_bandwidth
from .losses import empirical_risk, get_family
from .solver import FitReport, fit_cg, fit_kulsif
from .validation import InvalidInputError


class DensityRatioEstimator(BaseEstimator):
    """Iterated regularized density-ratio fit behind a sklearn interface.

    Parameters
    ----------
    family : one of "kulsif", "lr", "exp", "sq".
    lam : Tikhonov weight of each sub-problem, > 0.
    t : number of iterated sub-problems, >= 1.
    kernel : kernel object; None selects a Gaussian kernel with the
        median-distance bandwidth of the pooled training rows.
    target_eps : gradient tolerance for the CG families.
    """

    def __init__(self, family="kulsif", lam=1.0, t=1, kernel=None, target_eps=1e-6):
        self.family = family
        self.lam = lam
        self.t = t
        self.kernel = kernel
        self.target_eps = target_eps

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        y = np.asarray(y)
        labels = set(np.unique(y))
        if not labels <= {-1, 1}:
            raise InvalidInputError(f"labels must be -1/+1, got {sorted(labels)}")
        x_p, x_q = X[y == 1], X[y == -1]
        if len(x_p) < 1 or len(x_q) < 1:
            raise InvalidInputError("need at least one row of each label")
        kernel = self.kernel
        if kernel is None:
            kernel = GaussianKernel(median_bandwidth(X))
        fam = get_family(self.family)
        if fam.name == "kulsif":
            self.model_ = fit_kulsif(x_p, x_q, kernel, self.lam, self.t)
            self.report_ = FitReport()
        else:
            self.model_, self.report_ = fit_cg(
                x_p, x_q, fam, kernel, self.lam, self.t, self.target_eps
            )
        self.kernel_ = kernel
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        """Density-ratio estimates g(f(x)) for each row of X."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=float)
        return self.model_.ratios(X)

    def score_samples(self, X):
        """Raw scores f(x) before the ratio map."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=float)
        return self.model_.scores(X)

    def score(self, X, y):
        """Negative pooled empirical risk (higher is better)."""
        check_is_fitted(self, "model_")
        X, y = check_X_y(X, y, dtype=float)
        s = self.model_.scores(X)
        return -empirical_risk(self.model_.family, s[y == 1], s[y == -1])
