"""Cyclic coordinate descent for the lasso.

Objective convention (note: NOT the 1/(2n) scaling used by glmnet/sklearn)::

    ||r - X beta||_n^2 + lam * ||beta||_1,    ||v||_n^2 = sum(v**2) / n

so the soft-threshold level in each coordinate update is ``lam / 2`` and
the KKT condition at zero reads ``|2 X_j^T resid / n| <= lam``.
"""
from __future__ import annotations

from typing import NamedTuple

import numba
import numpy as np
from scipy import linalg

from .core import DomainError, PenaltyConfig

REFRESH_EVERY = 50
# active-set passes between exact steps on the current support
STEP_EVERY = 20
# cold starts visit this many penalties, geometric from lam_max, before lam
CONTINUATION_STEPS = 10
CONTINUATION_RATIO = 1e-3


class LassoFit(NamedTuple):
    beta: np.ndarray
    kkt_residual: float
    passes: int
    objectives: np.ndarray


def soft_threshold(v: float, gamma: float) -> float:
    if gamma < 0:
        raise DomainError("gamma must be >= 0")
    return float(np.sign(v) * max(abs(v) - gamma, 0.0))


@numba.njit(cache=True, nogil=True)
def _cd_pass(X, beta, resid, col_norms_sq, lam, coords):
    """One cyclic pass over ``coords`` (ascending); returns the largest |change|."""
    n = X.shape[0]
    half = 0.5 * lam
    max_change = 0.0
    for j in coords:
        d = col_norms_sq[j]
        if d <= 0.0:
            continue
        old = beta[j]
        rho = 0.0
        for i in range(n):
            rho += X[i, j] * resid[i]
        rho = rho / n + d * old
        if rho > half:
            new = (rho - half) / d
        elif rho < -half:
            new = (rho + half) / d
        else:
            new = 0.0
        delta = new - old
        if delta != 0.0:
            for i in range(n):
                resid[i] -= delta * X[i, j]
            beta[j] = new
            if abs(delta) > max_change:
                max_change = abs(delta)
    return max_change


@numba.njit(cache=True, nogil=True)
def _sweeps(X, r, beta, resid, col_norms_sq, lam, coords, tol, max_sweeps, passes, objectives):
    """Repeat passes over ``coords`` until the largest change drops below ``tol``.

    Appends the objective after each pass to ``objectives`` starting at
    ``passes`` and returns (new pass count, change of the last pass).
    """
    n = X.shape[0]
    change = np.inf
    for _ in range(max_sweeps):
        change = _cd_pass(X, beta, resid, col_norms_sq, lam, coords)
        passes += 1
        if passes % REFRESH_EVERY == 0:
            for i in range(n):
                resid[i] = r[i]
            for j in range(X.shape[1]):
                if beta[j] != 0.0:
                    for i in range(n):
                        resid[i] -= X[i, j] * beta[j]
        l1 = 0.0
        for j in range(beta.size):
            l1 += abs(beta[j])
        objectives[passes] = resid @ resid / n + lam * l1
        if change < tol:
            break
    return passes, change


def lasso_objective(X, r, beta, lam: float) -> float:
    resid = r - X @ beta
    return float(resid @ resid / X.shape[0] + lam * np.abs(beta).sum())


def kkt_residual(X, r, beta, lam: float) -> float:
    """Max violation of the lasso stationarity conditions at ``beta``."""
    n = X.shape[0]
    grad = 2.0 * (X.T @ (r - X @ beta)) / n
    active = beta != 0
    viol = np.where(
        active,
        np.abs(-grad + lam * np.sign(beta)),
        np.maximum(np.abs(grad) - lam, 0.0),
    )
    return float(viol.max()) if viol.size else 0.0


def _step_to_boundary(bA, signs, target):
    """Move from bA toward ``target``; stop where the first coordinate hits zero."""
    crossing = np.sign(target) != signs
    if not crossing.any():
        return target
    t = bA[crossing] / (bA[crossing] - target[crossing])
    k = np.argmin(t)
    step = bA + t[k] * (target - bA)
    step[np.flatnonzero(crossing)[k]] = 0.0
    # rounding may push other coordinates across zero
    step[np.sign(step) != signs] = 0.0
    return step


def _null_step(XA, bA, signs):
    """Move inside null(X_A), lowering sign^T b until a coordinate reaches zero."""
    _, sv, vt = linalg.svd(XA, full_matrices=True, check_finite=False)
    tol = sv[0] * max(XA.shape) * np.finfo(float).eps if sv.size else 0.0
    rank = int(np.sum(sv > tol))
    if rank == bA.size:
        return None
    null = vt[rank:].T
    d = -null @ (null.T @ signs)
    shrink = d * signs < 0
    if not shrink.any():
        return None
    t = -bA[shrink] / d[shrink]
    k = np.argmin(t)
    step = bA + t[k] * d
    step[np.flatnonzero(shrink)[k]] = 0.0
    step[np.sign(step) != signs] = 0.0
    return step


def _support_step(X, r, beta, active, lam):
    """An objective-decreasing step that keeps the current support's signs, or None.

    On the face {sign(beta_A) fixed, beta_{-A} = 0} the objective is the
    quadratic ||r - X_A b||_n^2 + lam sign(beta_A)^T b. When X_A has full
    column rank the step heads for its minimizer, which solves
    (X_A^T X_A / n) b = X_A^T r / n - lam/2 sign(beta_A). Otherwise it moves
    inside the null space of X_A, where the fit is unchanged and the l1 norm
    falls. Either way the step stops where a coordinate reaches zero.
    """
    n = X.shape[0]
    active = active[beta[active] != 0]
    if not active.size:
        return None
    XA = X[:, active]
    bA = beta[active]
    signs = np.sign(bA)
    if active.size <= n:
        gram = XA.T @ XA / n
        rhs = XA.T @ r / n - 0.5 * lam * signs
        # ill-conditioned faces are fine: the caller keeps a step only if it lowers the objective
        try:
            b = linalg.cho_solve(linalg.cho_factor(gram, check_finite=False), rhs, check_finite=False)
        except linalg.LinAlgError:
            b = None
        if b is not None and np.all(np.isfinite(b)):
            out = np.zeros_like(beta)
            out[active] = _step_to_boundary(bA, signs, b)
            return out
    step = _null_step(XA, bA, signs)
    if step is None:
        return None
    out = np.zeros_like(beta)
    out[active] = step
    return out


def _solve(X, Xf, r, beta, resid, col_norms_sq, lam, tol, budget, objectives):
    """Run passes in place until certified; returns (passes, kkt)."""
    n, p = X.shape
    everything = np.arange(p)
    passes = 0
    objectives[0] = resid @ resid / n + lam * np.abs(beta).sum()
    # Full passes alternate with passes restricted to the current support
    # until a full pass leaves every coordinate in place.
    while passes < budget:
        passes, change = _sweeps(Xf, r, beta, resid, col_norms_sq, lam, everything, tol, 1,
                                 passes, objectives)
        if change < tol:
            kkt = kkt_residual(X, r, beta, lam)
            if kkt <= tol:
                return passes, kkt
        active = np.flatnonzero(beta)
        while active.size and passes < budget:
            passes, change = _sweeps(Xf, r, beta, resid, col_norms_sq, lam, active, tol,
                                     min(STEP_EVERY, budget - passes), passes, objectives)
            if change < tol:
                break
            trial = _support_step(X, r, beta, active, lam)
            if trial is not None:
                t_resid = r - X @ trial
                t_obj = t_resid @ t_resid / n + lam * np.abs(trial).sum()
                if t_obj <= objectives[passes]:
                    beta[:] = trial
                    resid[:] = t_resid
                    active = np.flatnonzero(beta)
    return passes, kkt_residual(X, r, beta, lam)


def lasso_fit(X, r, lam: float, cfg: PenaltyConfig, warm_start=None) -> LassoFit:
    """Minimize ||r - X beta||_n^2 + lam ||beta||_1 by cyclic coordinate descent.

    Stops once a full pass moves no coordinate by more than ``cfg.tol_kkt``
    and the KKT residual is at most ``cfg.tol_kkt``. A cold start first
    walks down a short geometric sequence of penalties from the smallest
    lam giving beta = 0; ``objectives`` traces the passes at ``lam`` only.
    """
    X = np.asarray(X, dtype=float)
    r = np.asarray(r, dtype=float)
    if X.ndim != 2 or r.shape != (X.shape[0],):
        raise DomainError(f"shape mismatch: X {X.shape}, r {r.shape}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(r))):
        raise DomainError("non-finite values in X or r")
    if not lam >= 0:
        raise DomainError(f"lam must be >= 0, got {lam}")
    n, p = X.shape
    Xf = np.asfortranarray(X)
    col_norms_sq = np.einsum("ij,ij->j", X, X) / n
    budget = cfg.max_cd_passes
    objectives = np.empty(budget + 1)
    passes = 0

    if warm_start is None:
        beta = np.zeros(p)
        resid = r.copy()
        lam_max = 2.0 * float(np.max(np.abs(X.T @ r))) / n
        if lam < lam_max:
            floor = max(lam, CONTINUATION_RATIO * lam_max)
            for step in np.geomspace(lam_max, floor, CONTINUATION_STEPS)[1:]:
                if step <= lam:
                    break
                used, _ = _solve(X, Xf, r, beta, resid, col_norms_sq, step, cfg.tol_kkt,
                                 budget - passes, objectives)
                passes += used
    else:
        beta = np.array(warm_start, dtype=float)
        if beta.shape != (p,):
            raise DomainError(f"warm_start has shape {beta.shape}, expected ({p},)")
        beta[col_norms_sq <= 0] = 0.0
        resid = r - X @ beta

    used, kkt = _solve(X, Xf, r, beta, resid, col_norms_sq, lam, cfg.tol_kkt,
                       max(budget - passes, 1), objectives)
    return LassoFit(beta, kkt, passes + used, objectives[: used + 1].copy())
