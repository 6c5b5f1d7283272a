"""Doubly penalized least squares for high-dimensional partial linear models.

    y = X beta + g(z) + e,   beta sparse, g smooth

``dp_fit`` minimizes ||y - X beta - g(z)||_n^2 + lam ||beta||_1 + mu^2 J^2(g)
with J^2(g) = int g''^2 + c int g^2 over natural cubic splines.
"""
from .core import (DesignData, DomainError, NumericalError, PartialLinearFit, PenaltyConfig,
                   dp_objective, empirical_norm, empirical_norm_sq)
from .lasso import LassoFit, kkt_residual, lasso_fit, lasso_objective, soft_threshold
from .sim import (DesignSpec, Estimator, FitSettings, GFunction, ReplicateResult, gen_design,
                  gen_nuisance, metrics, min_eigen_diagnostic, run_replicate, tsnr)
from .solver import dp_fit, fit_lk, fit_ln, kkt_residuals
from .spline import (SmootherSystem, SplineModel, build_spline_basis, j_squared, spline_eval,
                     spline_fit)
from .tuning import lambda_default, mu_default, oracle_bound, sigma_estimate

__version__ = "0.1.0"

__all__ = [
    "DesignData", "DomainError", "NumericalError", "PartialLinearFit", "PenaltyConfig",
    "dp_objective", "empirical_norm", "empirical_norm_sq",
    "LassoFit", "kkt_residual", "lasso_fit", "lasso_objective", "soft_threshold",
    "DesignSpec", "Estimator", "FitSettings", "GFunction", "ReplicateResult", "gen_design",
    "gen_nuisance", "metrics", "min_eigen_diagnostic", "run_replicate", "tsnr",
    "dp_fit", "fit_lk", "fit_ln", "kkt_residuals",
    "SmootherSystem", "SplineModel", "build_spline_basis", "j_squared", "spline_eval", "spline_fit",
    "lambda_default", "mu_default", "oracle_bound", "sigma_estimate",
]
