"""Simulated partial-linear designs, replicate runner and per-replicate metrics."""
from __future__ import annotations

import enum
import functools
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.special import ndtr, ndtri

from .core import DesignData, DomainError, PenaltyConfig, empirical_norm
from .solver import dp_fit, fit_lk, fit_ln
from .spline import SmootherSystem, build_spline_basis, spline_eval
from .tuning import lambda_default, mu_default, sigma_estimate

TRUNCATION = 3.0
SUPPORT_THRESHOLD = 1e-8
# Scale of V in the dependent design: population corr(2z + V, z) = 0.74 for z ~ U[-1/2, 1/2].
TARGET_CORR = 0.74
V_SCALE = float(np.sqrt((4.0 / 12.0) * (1.0 / TARGET_CORR**2 - 1.0)))
PLOT_GRID = np.linspace(-0.5, 0.5, 201)


class GFunction(str, enum.Enum):
    G1 = "G1"
    G2 = "G2"
    G3 = "G3"


class Estimator(str, enum.Enum):
    LK = "LK"
    LN = "LN"
    DPi = "DPi"
    DPd = "DPd"


def gen_nuisance(g_id, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    g_id = GFunction(g_id)
    if g_id is GFunction.G1:
        return np.zeros_like(z)
    if g_id is GFunction.G2:
        return -20.0 * z**2 - 10.0
    return 3.0 * (np.exp(2.0 * z) + np.sin(12.0 * z))


@dataclass(frozen=True)
class DesignSpec:
    p: int = 250
    s0: int = 5
    lsnr: float = 8.0
    g_id: GFunction = GFunction.G2
    dependent: bool = True
    n: int = 72
    replicates: int = 200
    base_seed: int = 0
    source: str = "synthetic"  # or a path to a headerless CSV design matrix

    def __post_init__(self):
        object.__setattr__(self, "g_id", GFunction(self.g_id))
        if self.p < 1 or not 0 <= self.s0 <= self.p:
            raise DomainError(f"need 0 <= s0 <= p, got s0={self.s0}, p={self.p}")
        if self.n < 4:
            raise DomainError(f"need n >= 4, got {self.n}")
        if self.replicates < 1:
            raise DomainError("replicates must be >= 1")
        if not self.lsnr > 0:
            raise DomainError("lsnr must be > 0")
        if not 0 <= self.base_seed < 2**64:
            raise DomainError("base_seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class FitSettings:
    """How the estimators are tuned inside the harness."""

    lambda_scale: float = 2.0
    mu_sq: float | None = None  # None: (n^(-2/5)/100)^2
    c: float = 1e-3
    sigma: str = "true"  # "true": simulated noise level, "estimate": sigma_estimate

    def penalty(self, n: int, p: int, sigma: float) -> PenaltyConfig:
        mu_sq = mu_default(n) ** 2 if self.mu_sq is None else self.mu_sq
        return PenaltyConfig(lam=lambda_default(n, p, sigma, self.lambda_scale), mu_sq=mu_sq, c=self.c)


class SimulatedData(NamedTuple):
    X: np.ndarray
    z: np.ndarray
    beta0: np.ndarray
    g0: np.ndarray
    sigma: float
    y: np.ndarray

    def design(self) -> DesignData:
        return DesignData(self.X, self.z, self.y)


@dataclass
class ReplicateResult:
    design_id: int
    replicate: int
    estimator: Estimator
    pred_error: float
    est_error_l1: float
    tpr: float | None
    fpr: float | None
    g_error: float | None
    tsnr: float
    runtime_ms: float
    failed: bool = False
    variant: str = "independent"  # or "dependent": which draw of the design was fit


def rng_for(base_seed: int, design_id: int, replicate: int) -> np.random.Generator:
    """Counter-based stream keyed by (base_seed, design_id, replicate)."""
    ss = np.random.SeedSequence([base_seed, design_id, replicate])
    return np.random.Generator(np.random.Philox(ss))


@functools.lru_cache(maxsize=4)
def load_matrix_csv(path: str) -> np.ndarray:
    M = np.loadtxt(path, delimiter=",", ndmin=2)
    if M.size == 0 or not np.all(np.isfinite(M)):
        raise DomainError(f"{path}: empty or non-finite design matrix")
    M.setflags(write=False)
    return M


def _truncated_normal(rng: np.random.Generator, size) -> np.ndarray:
    lo, hi = ndtr(-TRUNCATION), ndtr(TRUNCATION)
    return ndtri(lo + (hi - lo) * rng.random(size))


def gen_design(spec: DesignSpec, design_id: int = 0, replicate: int = 0, *,
               dependent: bool | None = None) -> SimulatedData:
    """Draw one replicate of a design.

    The independent and dependent variants of the same (design_id, replicate)
    share z, beta0, the base design and the noise draw.
    """
    dependent = spec.dependent if dependent is None else dependent
    rng = rng_for(spec.base_seed, design_id, replicate)
    if spec.source == "synthetic":
        n = spec.n
        z = rng.uniform(-0.5, 0.5, n)
        X = _truncated_normal(rng, (n, spec.p))
    else:
        M = load_matrix_csv(str(spec.source))
        n = M.shape[0]
        if M.shape[1] < spec.p:
            raise DomainError(f"{spec.source}: has {M.shape[1]} columns, need p={spec.p}")
        z = rng.uniform(-0.5, 0.5, n)
        cols = rng.choice(M.shape[1], size=spec.p, replace=False)
        X = np.array(M[:, cols])
    beta0 = np.zeros(spec.p)
    beta0[: spec.s0] = rng.choice([-1.0, 1.0], size=spec.s0)
    eps = rng.standard_normal(n)
    V = V_SCALE * rng.standard_normal((n, 3))
    if dependent:
        if spec.p < 3:
            raise DomainError("the dependent design needs p >= 3")
        X[:, 0] = 2.0 * z + V[:, 0]
        X[:, 1] = 2.0 * z**2 + V[:, 1]
        X[:, 2] = -z + V[:, 2]
    g0 = gen_nuisance(spec.g_id, z)
    signal = X @ beta0
    sigma = empirical_norm(signal) / spec.lsnr
    y = signal + g0 + sigma * eps
    return SimulatedData(X, z, beta0, g0, sigma, y)


def tsnr(X, beta0, g0_values, sigma: float) -> float:
    if not sigma > 0:
        raise DomainError("sigma must be > 0")
    return empirical_norm(np.asarray(X) @ beta0 + g0_values) / sigma


def metrics(beta_hat, g_hat_values, truth: SimulatedData, estimator: Estimator | str) -> dict:
    """Error and selection metrics of one fit against the truth.

    ``g_hat_values`` is the fitted nuisance at the observed z for DP fits;
    it is ignored for LK (uses g0) and LN (uses 0).
    """
    estimator = Estimator(estimator)
    beta_hat = np.asarray(beta_hat, dtype=float)
    beta0 = truth.beta0
    if beta_hat.shape != beta0.shape:
        raise DomainError("beta_hat and beta0 differ in length")
    p = beta0.size
    true_set = beta0 != 0
    s0 = int(true_set.sum())
    selected = np.abs(beta_hat) > SUPPORT_THRESHOLD
    tpr = float((selected & true_set).sum() / s0) if s0 > 0 else None
    fpr = float((selected & ~true_set).sum() / (p - s0)) if s0 < p else None

    if estimator is Estimator.LK:
        g_part = truth.g0
    elif estimator is Estimator.LN:
        g_part = np.zeros_like(truth.g0)
    else:
        g_part = np.asarray(g_hat_values, dtype=float)
    pred = empirical_norm(truth.X @ (beta_hat - beta0) + g_part - truth.g0)
    g_err = empirical_norm(g_part - truth.g0) if estimator in (Estimator.DPi, Estimator.DPd) else None
    return dict(
        pred_error=pred,
        est_error_l1=float(np.abs(beta_hat - beta0).sum()),
        tpr=tpr,
        fpr=fpr,
        g_error=g_err,
    )


def min_eigen_diagnostic(X, z, support=None, mu_sq: float | None = None, c: float = 1e-3) -> float:
    """Smallest eigenvalue of X~^T X~ / n, X~ = X minus its spline smooth on z.

    With ``support`` the eigenvalue of the restricted Gram submatrix is
    returned. The full-Gram value is 0 when p > n.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if n < 2:
        raise DomainError("need n > 1")
    if mu_sq is None:
        mu_sq = mu_default(n) ** 2
    basis = build_spline_basis(z)
    system = SmootherSystem(basis, z, mu_sq, c)
    if support is not None:
        X = X[:, np.asarray(support)]
        p = X.shape[1]
        if p == 0:
            return 0.0
    elif p > n:
        return 0.0
    Xt = X - system.smooth(X)
    G = Xt.T @ Xt / n
    return float(max(np.linalg.eigvalsh(G)[0], 0.0))


@dataclass
class ReplicateOutput:
    records: list[ReplicateResult]
    # fitted nuisance on PLOT_GRID per DP estimator
    curves: dict[str, np.ndarray] = field(default_factory=dict)


def _failed(design_id, replicate, estimator, t, variant) -> ReplicateResult:
    nan = float("nan")
    return ReplicateResult(design_id, replicate, estimator, nan, nan, None, None, None, t, 0.0,
                           failed=True, variant=variant)


def run_replicate(spec: DesignSpec, design_id: int, replicate: int,
                  settings: FitSettings = FitSettings()) -> ReplicateOutput:
    """Fit LK, LN and DP on one replicate.

    DPi is fit on the independent variant; when ``spec.dependent`` is set
    the dependent variant is drawn too and gets its own LK, LN and DPd fits.
    """
    variants = [False, True] if spec.dependent else [False]
    records: list[ReplicateResult] = []
    curves: dict[str, np.ndarray] = {}
    for dependent in variants:
        variant = "dependent" if dependent else "independent"
        truth = gen_design(spec, design_id, replicate, dependent=dependent)
        data = truth.design()
        t_snr = tsnr(truth.X, truth.beta0, truth.g0, truth.sigma)
        cfg = settings.penalty(data.n, data.p, truth.sigma)
        if settings.sigma == "estimate":
            cfg = settings.penalty(data.n, data.p, sigma_estimate(data, cfg))

        for name in (Estimator.LK, Estimator.LN):
            t0 = time.perf_counter()
            try:
                beta = fit_lk(data, truth.g0, cfg) if name is Estimator.LK else fit_ln(data, cfg)
            except (ArithmeticError, ValueError):
                records.append(_failed(design_id, replicate, name, t_snr, variant))
                continue
            ms = 1e3 * (time.perf_counter() - t0)
            records.append(ReplicateResult(design_id, replicate, name, **metrics(beta, None, truth, name),
                                           tsnr=t_snr, runtime_ms=ms, variant=variant))

        dp_name = Estimator.DPd if dependent else Estimator.DPi
        t0 = time.perf_counter()
        try:
            fit = dp_fit(data, cfg)
        except (ArithmeticError, ValueError):
            records.append(_failed(design_id, replicate, dp_name, t_snr, variant))
            continue
        ms = 1e3 * (time.perf_counter() - t0)
        g_hat = spline_eval(fit.spline, truth.z)
        records.append(ReplicateResult(design_id, replicate, dp_name,
                                       **metrics(fit.beta, g_hat, truth, dp_name),
                                       tsnr=t_snr, runtime_ms=ms, variant=variant))
        curves[dp_name.value] = spline_eval(fit.spline, PLOT_GRID)

    return ReplicateOutput(records, curves)


def with_seed(spec: DesignSpec, base_seed: int) -> DesignSpec:
    return replace(spec, base_seed=base_seed)


def resolve_source(spec: DesignSpec, root: Path) -> DesignSpec:
    if spec.source == "synthetic":
        return spec
    path = Path(spec.source)
    if not path.is_absolute():
        path = root / path
    return replace(spec, source=str(path))
