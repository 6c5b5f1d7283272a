"""Shared data model for the partial linear model y = X beta + g(z) + e.

All norms over observations are empirical: ``||v||_n^2 = sum(v**2) / n``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .spline import SplineModel


class DomainError(ValueError):
    """Input violates an operation's preconditions."""


class NumericalError(ArithmeticError):
    """A computation produced a non-finite or singular result."""


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        raise DomainError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DesignData:
    """Observed triple (X, z, y); z is the scalar nuisance covariate."""

    X: np.ndarray
    z: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = _frozen(self.X, 2, "X")
        z = _frozen(self.z, 1, "z")
        y = _frozen(self.y, 1, "y")
        n, p = X.shape
        if n < 2 or p < 1:
            raise DomainError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
        if z.shape[0] != n or y.shape[0] != n:
            raise DomainError(
                f"length mismatch: X has {n} rows, z has {z.shape[0]}, y has {y.shape[0]}"
            )
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty weights and solver tolerances.

    ``lam`` weights the l1 term, ``mu_sq`` the smoothness functional
    ``J^2(g) = int g''^2 + c int g^2``.
    """

    lam: float
    mu_sq: float
    c: float = 1e-3
    tol_objective: float = 1e-8
    tol_kkt: float = 1e-6
    max_outer_iters: int = 200
    max_cd_passes: int = 100_000

    def __post_init__(self):
        for name in ("lam", "mu_sq", "c"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise DomainError(f"{name} must be finite and >= 0, got {v}")
        for name in ("tol_objective", "tol_kkt"):
            v = getattr(self, name)
            if not v > 0:
                raise DomainError(f"{name} must be > 0, got {v}")
        for name in ("max_outer_iters", "max_cd_passes"):
            if int(getattr(self, name)) < 1:
                raise DomainError(f"{name} must be a positive integer")


@dataclass(frozen=True)
class PartialLinearFit:
    beta: np.ndarray
    spline: "SplineModel"
    objective: float
    outer_iters: int
    kkt_max_residual: float
    converged: bool
    kkt_beta: float = 0.0
    kkt_g: float = 0.0
    objective_trace: tuple[float, ...] = field(default=(), repr=False)

    def predict(self, X: np.ndarray, z: np.ndarray) -> np.ndarray:
        from .spline import spline_eval

        return np.asarray(X) @ self.beta + spline_eval(self.spline, z)


def empirical_norm_sq(v) -> float:
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise DomainError("empirical norm of an empty vector")
    if not np.all(np.isfinite(v)):
        raise DomainError("vector contains non-finite entries")
    return float(np.dot(v, v) / v.size)


def empirical_norm(v) -> float:
    return float(np.sqrt(empirical_norm_sq(v)))


def dp_objective(data: DesignData, beta, spline: "SplineModel", cfg: PenaltyConfig) -> float:
    """||y - X beta - g(z)||_n^2 + lam ||beta||_1 + mu^2 J^2(g)."""
    from .spline import j_squared, spline_eval

    beta = np.asarray(beta, dtype=float)
    if beta.shape != (data.p,):
        raise DomainError(f"beta has shape {beta.shape}, expected ({data.p},)")
    resid = data.y - data.X @ beta - spline_eval(spline, data.z)
    return (
        empirical_norm_sq(resid)
        + cfg.lam * float(np.abs(beta).sum())
        + cfg.mu_sq * j_squared(spline, cfg.c)
    )
