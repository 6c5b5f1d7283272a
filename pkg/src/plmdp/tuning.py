"""Default tuning parameters and the oracle-inequality diagnostic."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .core import DesignData, DomainError, PenaltyConfig, empirical_norm

SIGMA_FLOOR = 1e-6


def lambda_default(n: int, p: int, sigma_hat: float = 1.0, scale: float = 2.0) -> float:
    """scale * sigma_hat * sqrt(2 log(2p) / n).

    With the ||.||_n^2 loss, scale=2 puts lam at the usual bound on
    max_j |2 X_j^T e / n| for Gaussian noise.
    """
    if n < 1 or p < 1:
        raise DomainError(f"need n >= 1 and p >= 1, got n={n}, p={p}")
    return float(scale * sigma_hat * np.sqrt(2.0 * np.log(2.0 * p) / n))


def mu_default(n: int) -> float:
    """Smoothness weight mu (not mu^2): n^(-2/5) / 100."""
    if n < 1:
        raise DomainError(f"need n >= 1, got {n}")
    return float(n ** -0.4 / 100.0)


def oracle_bound(s0: int, lam: float, lambda_min_sq: float) -> float:
    """Ceiling s0 lam^2 / Lambda_min^2 on ||X~(b - b0)||_n^2 + lam ||b - b0||_1 / 4."""
    if not lambda_min_sq > 0:
        raise DomainError("lambda_min_sq must be > 0")
    return float(s0 * lam**2 / lambda_min_sq)


def sigma_estimate(data: DesignData, cfg: PenaltyConfig, scale: float = 4.0,
                   max_iter: int = 20, rtol: float = 1e-3) -> float:
    """Residual scale of a conservatively tuned DP fit.

    lam depends on sigma, so the two are iterated to a fixed point starting
    from the spread of y. Degrees of freedom are the lasso support size plus
    the trace of the spline smoother.
    """
    from .solver import dp_fit
    from .spline import SmootherSystem, build_spline_basis

    n, p = data.n, data.p
    if n <= 10:
        raise DomainError("sigma_estimate needs n > 10")
    basis = build_spline_basis(data.z)
    smoother_df = SmootherSystem(basis, data.z, cfg.mu_sq, cfg.c).hat_trace()
    sigma = max(empirical_norm(data.y - data.y.mean()), SIGMA_FLOOR)
    for _ in range(max_iter):
        lam = lambda_default(n, p, sigma, scale)
        fit = dp_fit(data, replace(cfg, lam=lam), basis=basis)
        resid = data.y - fit.predict(data.X, data.z)
        df = np.count_nonzero(fit.beta) + smoother_df
        new = np.sqrt(float(resid @ resid) / max(n - df, 1.0))
        new = max(new, SIGMA_FLOOR)
        done = abs(new - sigma) <= rtol * sigma
        sigma = new
        if done or sigma <= SIGMA_FLOOR:
            break
    return float(sigma)
