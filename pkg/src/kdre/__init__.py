"""Kernel density-ratio estimation with iterated Tikhonov regularization.

Estimates the density ratio beta = dP/dQ from two samples (numerator
draws labeled +1, denominator draws labeled -1) by minimizing a
regularized empirical risk over an RKHS, re-centering the penalty at the
previous solution for t iterations.  Four strictly proper composite loss
families are supported (KuLSIF, LR, Exp, SQ), each paired with a link
function and a ratio map that turns fitted scores into ratio estimates.
"""

from .kernels import GaussianKernel, PeriodicSobolevKernel, gram, median_bandwidth
from .losses import (
    EXP,
    KULSIF,
    LR,
    SQ,
    FAMILIES,
    bregman_error,
    bregman_error_samples,
    empirical_risk,
    get_family,
    loss_eval,
    ratio_from_score,
    sq_clamp_count,
)
from .solver import (
    FitReport,
    RatioModel,
    fit_cg,
    fit_kulsif,
    load_model,
    predict_ratio,
    predict_score,
    save_model,
)
from .estimator import DensityRatioEstimator
from .synthetic import (
    GaussianMixture,
    MixturePairProblem,
    RegularityProblem,
    make_geometric_problem,
    make_regularity_problem,
    mixture_density,
    sample_mixture,
    sample_regularity,
)
from .synthetic import adjusted_inv_link, l1_ratio_error
from .selection import SelectionConfig, SelectionResult, select, split_points
from .ensemble import (
    EnsembleProblem,
    accuracy_over_rconds,
    evaluate_ensemble,
    ingest_candidates,
    model_weights,
    solve_ensemble,
)
from .experiments import (
    lambda_schedule,
    run_geometric_benchmark,
    run_mixture_saturation_study,
    run_rate_study,
)

__version__ = "0.1.0"

__all__ = [
    "GaussianKernel",
    "PeriodicSobolevKernel",
    "gram",
    "median_bandwidth",
    "KULSIF",
    "LR",
    "EXP",
    "SQ",
    "FAMILIES",
    "get_family",
    "loss_eval",
    "ratio_from_score",
    "bregman_error",
    "bregman_error_samples",
    "empirical_risk",
    "sq_clamp_count",
    "RatioModel",
    "FitReport",
    "fit_kulsif",
    "fit_cg",
    "predict_score",
    "predict_ratio",
    "save_model",
    "load_model",
    "DensityRatioEstimator",
    "GaussianMixture",
    "MixturePairProblem",
    "RegularityProblem",
    "mixture_density",
    "sample_mixture",
    "make_geometric_problem",
    "make_regularity_problem",
    "sample_regularity",
    "adjusted_inv_link",
    "l1_ratio_error",
    "SelectionConfig",
    "SelectionResult",
    "split_points",
    "select",
    "EnsembleProblem",
    "solve_ensemble",
    "evaluate_ensemble",
    "accuracy_over_rconds",
    "model_weights",
    "ingest_candidates",
    "lambda_schedule",
    "run_rate_study",
    "run_geometric_benchmark",
    "run_mixture_saturation_study",
    "__version__",
]
