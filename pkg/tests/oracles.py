"""Reference computations that share no code with the package.

Everything here is dense, slow and written for clarity: spline penalty
matrices come from scipy's CubicSpline basis functions with exact polynomial
integration, and minimizers come from grid search.
"""
from __future__ import annotations

import numpy as np
import mpmath
from scipy import integrate
from scipy.interpolate import CubicSpline


def _basis_pieces(knots):
    """Per-piece power coefficients (highest first) of each natural cardinal spline."""
    K = len(knots)
    return [CubicSpline(knots, np.eye(K)[k], bc_type="natural").c for k in range(K)]


def natural_spline_matrices(knots):
    """(omega, gram): exact int s_i'' s_j'' and int s_i s_j over the knot range."""
    knots = np.asarray(knots, dtype=float)
    # C[k, m, d]: coefficient of u^(3-d) on piece m of cardinal spline k, u = t - knots[m]
    C = np.stack(_basis_pieces(knots)).transpose(0, 2, 1)
    h = np.diff(knots)
    powers = 3 - np.arange(4)
    deg = powers[:, None] + powers[None, :] + 1
    H = h[:, None, None] ** deg / deg  # int_0^h u^(a+b) du
    gram = np.einsum("imd,mde,jme->ij", C, H, C)
    # s'' = 6 c0 u + 2 c1
    D = np.stack([6.0 * C[:, :, 0], 2.0 * C[:, :, 1]], axis=-1)
    p2 = np.array([1, 0])
    deg2 = p2[:, None] + p2[None, :] + 1
    H2 = h[:, None, None] ** deg2 / deg2
    omega = np.einsum("imd,mde,jme->ij", D, H2, D)
    return omega, gram


def dense_smoother_system(z, mu_sq, c):
    """(knots, N, A) with A = N^T N / n + mu_sq (omega + c gram), assembled densely."""
    z = np.asarray(z, dtype=float)
    knots = np.unique(z)
    n, K = z.size, knots.size
    N = np.zeros((n, K))
    for i in range(n):
        for k in range(K):
            if z[i] == knots[k]:
                N[i, k] = 1.0
    omega, gram = natural_spline_matrices(knots)
    return knots, N, N.T @ N / n + mu_sq * (omega + c * gram)


def dense_spline_fit(z, r, mu_sq, c):
    _, N, A = dense_smoother_system(z, mu_sq, c)
    return np.linalg.solve(A, N.T @ np.asarray(r, dtype=float) / len(r))


def precise_spline_fit(z, r, mu_sq, c, digits=40):
    """dense_spline_fit carried out in multiprecision.

    The smoother system has condition numbers near 1e10 for close knots, so
    a float64 oracle cannot certify agreement at 1e-8. Here omega comes from
    the natural-spline moment equations, with int s_i'' s_j'' integrated
    exactly piece by piece (s'' is linear on each piece), and the solve runs
    at ``digits`` significant digits. The small ridge term c * gram is taken
    from the float64 construction above.
    """
    z = np.asarray(z, dtype=float)
    knots = np.unique(z)
    n, K = z.size, knots.size
    _, gram = natural_spline_matrices(knots)
    with mpmath.workdps(digits):
        t = [mpmath.mpf(float(v)) for v in knots]
        h = [t[j + 1] - t[j] for j in range(K - 1)]
        # moments (second derivatives) of every cardinal spline: M = T^{-1} S, zero at both ends
        T = mpmath.zeros(K - 2, K - 2)
        S = mpmath.zeros(K - 2, K)
        for j in range(1, K - 1):
            T[j - 1, j - 1] = 2 * (h[j - 1] + h[j])
            if j > 1:
                T[j - 1, j - 2] = h[j - 1]
            if j < K - 2:
                T[j - 1, j] = h[j]
            S[j - 1, j - 1] = 6 / h[j - 1]
            S[j - 1, j] = -6 / h[j - 1] - 6 / h[j]
            S[j - 1, j + 1] = 6 / h[j]
        inner = mpmath.inverse(T) * S if K > 2 else mpmath.zeros(0, K)
        M = mpmath.zeros(K, K)
        for j in range(K - 2):
            for k in range(K):
                M[j + 1, k] = inner[j, k]
        # int over piece j of (linear from u_j to u_{j+1}) * (linear from v_j to v_{j+1})
        B = mpmath.zeros(K, K)
        for j in range(K - 1):
            B[j, j] += h[j] / 3
            B[j + 1, j + 1] += h[j] / 3
            B[j, j + 1] += h[j] / 6
            B[j + 1, j] += h[j] / 6
        A = mpmath.mpf(mu_sq) * (M.T * B * M + mpmath.mpf(c) * mpmath.matrix(gram.tolist()))
        b = mpmath.zeros(K, 1)
        for zi, ri in zip(np.searchsorted(knots, z).tolist(), np.asarray(r, dtype=float)):
            A[zi, zi] += mpmath.mpf(1) / n
            b[zi] += mpmath.mpf(float(ri)) / n
        a = mpmath.lu_solve(A, b)
        return np.array([float(v) for v in a])


def quad_j_squared(knots, values, c):
    """int s''^2 + c int s^2 by adaptive quadrature, piece by piece."""
    s = CubicSpline(knots, values, bc_type="natural")
    d2 = s.derivative(2)
    rough = ridge = 0.0
    for lo, hi in zip(knots[:-1], knots[1:]):
        rough += integrate.quad(lambda t: d2(t) ** 2, lo, hi, epsabs=1e-14, epsrel=1e-13)[0]
        ridge += integrate.quad(lambda t: s(t) ** 2, lo, hi, epsabs=1e-14, epsrel=1e-13)[0]
    return rough + c * ridge


def _grid_minimize(f, p, radius, points=41, rounds=6, shrink=8.0):
    """Coarse-to-fine grid search of a convex f over the box [-radius, radius]^p."""
    center = np.zeros(p)
    half = radius
    best = None
    for _ in range(rounds):
        axes = [np.linspace(c - half, c + half, points) for c in center]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, p)
        vals = f(grid)
        k = int(np.argmin(vals))
        center, best = grid[k], vals[k]
        half = max(2.0 * (2 * half / (points - 1)), half / shrink)
    return center, best


def grid_lasso(X, r, lam):
    """Minimizer of ||r - X b||_n^2 + lam ||b||_1 by refined grid search."""
    X = np.asarray(X, dtype=float)
    r = np.asarray(r, dtype=float)
    n, p = X.shape

    def f(B):
        R = r[None, :] - B @ X.T
        return (R * R).sum(axis=1) / n + lam * np.abs(B).sum(axis=1)

    radius = float(r @ r / n / lam) if lam > 0 else 10.0
    return _grid_minimize(f, p, radius, rounds=12)


def profile_dp_objective(X, z, y, B, lam, mu_sq, c):
    """min over g of the full objective, for each row of B, using the dense g-block."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.size
    _, N, A = dense_smoother_system(z, mu_sq, c)
    Ainv = np.linalg.inv(A)
    R = y[None, :] - B @ X.T  # rows: residual before g
    b = R @ N / n
    # min_a  r^T r / n - 2 b^T a + a^T A a  =  r^T r / n - b^T A^{-1} b
    return (R * R).sum(axis=1) / n - np.einsum("ij,jk,ik->i", b, Ainv, b) + lam * np.abs(B).sum(axis=1)


def grid_dp(X, z, y, lam, mu_sq, c):
    """Global minimizer (beta, objective) of the DP objective for tiny p."""
    X = np.asarray(X, dtype=float)

    def f(B):
        return profile_dp_objective(X, z, y, B, lam, mu_sq, c)

    y = np.asarray(y, dtype=float)
    radius = float(y @ y / y.size / lam) if lam > 0 else 10.0
    return _grid_minimize(f, X.shape[1], radius, rounds=12)
