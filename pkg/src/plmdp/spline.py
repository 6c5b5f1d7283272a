"""Natural cubic smoothing splines in the value (Reinsch) representation.

A spline is stored by its values ``a`` at the distinct sorted knots. The
second derivatives at the interior knots follow from ``R gamma = Q^T a``
(Green & Silverman, ch. 2), so that

    int s''(t)^2 dt = a^T Q R^{-1} Q^T a = a^T omega a.

``gram`` holds the exact quadratic form of ``int s(t)^2 dt`` over
``[knots[0], knots[-1]]``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg

from .core import DomainError, NumericalError

# 4-point Gauss-Legendre is exact for the degree-6 integrand s(t)^2.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)
MIN_RELATIVE_GAP = 1e-10


@dataclass(frozen=True)
class SplineModel:
    knots: np.ndarray
    coeffs: np.ndarray
    omega: np.ndarray
    gram: np.ndarray
    # maps knot values to second derivatives at every knot (zero at both ends)
    second_deriv_map: np.ndarray
    # tridiagonal R in upper banded storage (empty when K == 2)
    r_band: np.ndarray

    @property
    def n_knots(self) -> int:
        return self.knots.shape[0]

    def second_derivatives(self) -> np.ndarray:
        return self.second_deriv_map @ self.coeffs

    def with_coeffs(self, coeffs) -> "SplineModel":
        coeffs = np.array(coeffs, dtype=float)
        if coeffs.shape != self.knots.shape:
            raise DomainError(f"coeffs shape {coeffs.shape} != knots shape {self.knots.shape}")
        coeffs.setflags(write=False)
        return replace(self, coeffs=coeffs)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _r_band(h: np.ndarray) -> np.ndarray:
    m = h.size - 1
    R_band = np.zeros((2, m))
    R_band[1] = (h[:-1] + h[1:]) / 3.0
    R_band[0, 1:] = h[1:-1] / 6.0
    return R_band


def _solve_r(band: np.ndarray, b: np.ndarray) -> np.ndarray:
    if band.shape[1] == 1:
        # scipy's tridiagonal path rejects 1 x 1 systems (K == 3)
        return b / band[1, 0]
    return linalg.solveh_banded(band, b, check_finite=False)


def _second_deriv_map(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (omega, Gamma) for knot gaps ``h``."""
    K = h.size + 1
    if K == 2:
        return np.zeros((2, 2)), np.zeros((2, 2))
    m = K - 2
    Q = np.zeros((K, m))
    j = np.arange(m)
    Q[j, j] = 1.0 / h[:-1]
    Q[j + 1, j] = -1.0 / h[:-1] - 1.0 / h[1:]
    Q[j + 2, j] = 1.0 / h[1:]
    inner = _solve_r(_r_band(h), Q.T)  # R^{-1} Q^T, shape (m, K)
    omega = Q @ inner
    omega = 0.5 * (omega + omega.T)
    Gamma = np.zeros((K, K))
    Gamma[1:-1] = inner
    return omega, Gamma


def _piece_weights(knots: np.ndarray, t: np.ndarray, left: np.ndarray):
    """Weights of (a_i, a_{i+1}, gamma_i, gamma_{i+1}) for s(t) on piece ``left``."""
    h = knots[left + 1] - knots[left]
    u = t - knots[left]
    v = knots[left + 1] - t
    wa0 = v / h
    wa1 = u / h
    wg0 = -(u * v / 6.0) * (1.0 + v / h)
    wg1 = -(u * v / 6.0) * (1.0 + u / h)
    return wa0, wa1, wg0, wg1


def _value_matrix(knots: np.ndarray, Gamma: np.ndarray, t: np.ndarray, left: np.ndarray) -> np.ndarray:
    """Matrix E with s(t) = E @ a for points t lying in pieces ``left``."""
    K = knots.size
    wa0, wa1, wg0, wg1 = _piece_weights(knots, t, left)
    rows = np.arange(t.size)
    E = np.zeros((t.size, K))
    np.add.at(E, (rows, left), wa0)
    np.add.at(E, (rows, left + 1), wa1)
    E += wg0[:, None] * Gamma[left] + wg1[:, None] * Gamma[left + 1]
    return E


def build_spline_basis(z) -> SplineModel:
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or not np.all(np.isfinite(z)):
        raise DomainError("z must be a finite 1-d vector")
    knots = np.unique(z)
    if knots.size < 2:
        raise DomainError("need at least 2 distinct z values to build a spline basis")
    h = np.diff(knots)
    # omega scales like 1/h^3; near-coincident knots overflow it
    if h.min() < MIN_RELATIVE_GAP * (knots[-1] - knots[0]):
        raise DomainError(
            f"distinct z values closer than {MIN_RELATIVE_GAP:g} x range; round or merge them"
        )
    omega, Gamma = _second_deriv_map(h)

    K = knots.size
    left = np.repeat(np.arange(K - 1), _GL_NODES.size)
    hh = h[left]
    t = knots[left] + 0.5 * hh * (1.0 + np.tile(_GL_NODES, K - 1))
    w = 0.5 * hh * np.tile(_GL_WEIGHTS, K - 1)
    E = _value_matrix(knots, Gamma, t, left)
    gram = E.T @ (w[:, None] * E)
    gram = 0.5 * (gram + gram.T)

    return SplineModel(
        knots=_readonly(knots),
        coeffs=_readonly(np.zeros(K)),
        omega=_readonly(omega),
        gram=_readonly(gram),
        second_deriv_map=_readonly(Gamma),
        r_band=_readonly(_r_band(h) if K > 2 else np.zeros((2, 0))),
    )


def knot_index(model: SplineModel, z) -> np.ndarray:
    """Row i of the incidence matrix N selects knot ``knot_index(model, z)[i]``."""
    z = np.asarray(z, dtype=float)
    idx = np.searchsorted(model.knots, z)
    idx = np.clip(idx, 0, model.n_knots - 1)
    if not np.array_equal(model.knots[idx], z):
        raise DomainError("z contains values that are not knots of this spline model")
    return idx


def incidence_matrix(model: SplineModel, z) -> np.ndarray:
    idx = knot_index(model, z)
    N = np.zeros((idx.size, model.n_knots))
    N[np.arange(idx.size), idx] = 1.0
    return N


class SmootherSystem:
    """Factorized normal equations (N^T N / n + mu^2 (omega + c gram)) a = N^T r / n.

    N^T N is diagonal (knot multiplicities), so it is never formed densely.
    """

    def __init__(self, model: SplineModel, z, mu_sq: float, c: float):
        if mu_sq < 0 or c < 0:
            raise DomainError("mu_sq and c must be >= 0")
        self.model = model
        self.index = knot_index(model, z)
        self.n = self.index.size
        self.mu_sq = float(mu_sq)
        self.c = float(c)
        counts = np.bincount(self.index, minlength=model.n_knots).astype(float)
        self.counts = counts
        self.penalty = model.omega + c * model.gram
        A = mu_sq * self.penalty
        A[np.diag_indices_from(A)] += counts / self.n
        self.matrix = A
        self._factor = self._factorize(counts)

    def _factorize(self, counts):
        """Factors for the second-derivative (Reinsch) form of the normal equations.

        With D' = diag(counts) / n + mu_sq c gram and gamma = R^{-1} Q^T a,
        the equations become (R + mu_sq Q^T D'^{-1} Q) gamma = Q^T D'^{-1} b
        and a = D'^{-1} (b - mu_sq Q gamma). Neither matrix involves omega,
        whose 1/h^3 entries make a direct solve lose digits once knots are close.
        """
        model, mu_sq = self.model, self.mu_sq
        Dp = mu_sq * self.c * model.gram
        Dp[np.diag_indices_from(Dp)] += counts / self.n
        try:
            Dp_f = linalg.cho_factor(Dp, lower=True, check_finite=False)
        except linalg.LinAlgError as exc:
            raise NumericalError(
                "smoothing system is singular (mu_sq = 0 with unobserved knots?)"
            ) from exc
        h = np.diff(model.knots)
        m = h.size - 1
        Q = np.zeros((model.n_knots, m))
        j = np.arange(m)
        Q[j, j] = 1.0 / h[:-1]
        Q[j + 1, j] = -1.0 / h[:-1] - 1.0 / h[1:]
        Q[j + 2, j] = 1.0 / h[1:]
        DQ = linalg.cho_solve(Dp_f, Q, check_finite=False)
        if m == 0:
            return Dp_f, Q, DQ, None
        band = model.r_band
        G = mu_sq * (Q.T @ DQ)
        G = 0.5 * (G + G.T)
        G[j, j] += band[1]
        G[j[:-1], j[1:]] += band[0, 1:]
        G[j[1:], j[:-1]] += band[0, 1:]
        try:
            G_f = linalg.cho_factor(G, lower=True, check_finite=False)
        except linalg.LinAlgError as exc:
            raise NumericalError("smoothing system is numerically singular") from exc
        return Dp_f, Q, DQ, G_f

    def _apply_inverse(self, b: np.ndarray) -> np.ndarray:
        Dp_f, Q, DQ, G_f = self._factor
        u = linalg.cho_solve(Dp_f, b, check_finite=False)
        if G_f is None:
            return u
        gamma = linalg.cho_solve(G_f, Q.T @ u, check_finite=False)
        return u - self.mu_sq * (DQ @ gamma)

    def rhs(self, r) -> np.ndarray:
        return np.bincount(self.index, weights=np.asarray(r, dtype=float),
                           minlength=self.model.n_knots) / self.n

    def solve(self, r) -> np.ndarray:
        a = self._apply_inverse(self.rhs(r))
        if not np.all(np.isfinite(a)):
            raise NumericalError("non-finite spline coefficients")
        return a

    def residual(self, a, r) -> float:
        """Max-norm of the normal-equation residual at coefficients ``a``."""
        return float(np.max(np.abs(self.matrix @ a - self.rhs(r))))

    def residual_floor(self, a, r) -> float:
        """Size of residual that rounding alone produces at ``a``.

        Cholesky is backward stable, so an exact solve leaves a residual of
        order K eps |A||a|; for large mu_sq that exceeds any fixed tolerance.
        """
        a = np.asarray(a, dtype=float)
        scale = np.abs(self.matrix) @ np.abs(a) + np.abs(self.rhs(r))
        return float(8.0 * self.model.n_knots * np.finfo(float).eps * scale.max())

    def hat_trace(self) -> float:
        """trace(N A^{-1} N^T / n), the effective degrees of freedom of the smoother."""
        Ainv = self._apply_inverse(np.eye(self.model.n_knots))
        return float(np.dot(np.diag(Ainv), self.counts) / self.n)

    def smooth(self, R: np.ndarray) -> np.ndarray:
        """Apply the smoother to each column of ``R`` and return fitted values."""
        K = self.model.n_knots
        rhs = np.zeros((K, R.shape[1]))
        np.add.at(rhs, self.index, R)
        rhs /= self.n
        coef = self._apply_inverse(rhs)
        return coef[self.index]


def spline_fit(model: SplineModel, z, r, mu_sq: float, c: float) -> SplineModel:
    r = np.asarray(r, dtype=float)
    if r.shape != np.shape(z):
        raise DomainError("z and r must have the same length")
    system = SmootherSystem(model, z, mu_sq, c)
    return model.with_coeffs(system.solve(r))


def spline_eval(model: SplineModel, zq, return_extrapolated: bool = False):
    """Evaluate the natural cubic interpolant of (knots, coeffs) at ``zq``.

    Outside the knot range the spline continues linearly. With
    ``return_extrapolated=True`` a boolean mask of extrapolated points is
    returned as well.
    """
    zq = np.asarray(zq, dtype=float)
    knots, a = model.knots, model.coeffs
    gamma = model.second_derivatives()
    K = knots.size
    left = np.clip(np.searchsorted(knots, zq, side="right") - 1, 0, K - 2)
    wa0, wa1, wg0, wg1 = _piece_weights(knots, zq, left)
    out = wa0 * a[left] + wa1 * a[left + 1] + wg0 * gamma[left] + wg1 * gamma[left + 1]

    below = zq < knots[0]
    above = zq > knots[-1]
    if below.any() or above.any():
        h0, h1 = knots[1] - knots[0], knots[-1] - knots[-2]
        slope0 = (a[1] - a[0]) / h0 - h0 * gamma[1] / 6.0
        slope1 = (a[-1] - a[-2]) / h1 + h1 * gamma[-2] / 6.0
        out = np.where(below, a[0] + slope0 * (zq - knots[0]), out)
        out = np.where(above, a[-1] + slope1 * (zq - knots[-1]), out)
    if return_extrapolated:
        return out, below | above
    return out


def roughness(model: SplineModel, a=None) -> float:
    """int s''^2 = gamma^T Q^T a, evaluated through the banded system.

    Numerically preferable to a^T omega a: omega has entries of order
    1/h^3 and the dense product cancels badly for smooth ``a``.
    """
    a = model.coeffs if a is None else np.asarray(a, dtype=float)
    if model.n_knots == 2:
        return 0.0
    qa = np.diff(np.diff(a) / np.diff(model.knots))
    gamma = _solve_r(model.r_band, qa)
    return max(float(gamma @ qa), 0.0)


def penalty_value(model: SplineModel, a, c: float) -> float:
    """int s''^2 + c int s^2 for knot values ``a``."""
    a = np.asarray(a, dtype=float)
    return roughness(model, a) + c * max(float(a @ model.gram @ a), 0.0)


def j_squared(model: SplineModel, c: float) -> float:
    return penalty_value(model, model.coeffs, c)
