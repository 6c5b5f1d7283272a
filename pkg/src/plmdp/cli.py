"""Command-line interface: ``plm-dp run | fit | tune``."""
from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from .core import DesignData, DomainError, PenaltyConfig
from .experiment import default_threads, fmt, run_experiment
from .solver import dp_fit
from .tuning import lambda_default, mu_default, sigma_estimate


def _read_csv(path: str, ndim: int) -> np.ndarray:
    with warnings.catch_warnings():
        # numpy warns on empty input; emptiness is reported below instead
        warnings.simplefilter("ignore", UserWarning)
        arr = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    if arr.size == 0:
        raise DomainError(f"{path}: no data")
    if ndim == 1:
        if min(arr.shape) != 1:
            raise DomainError(f"{path}: expected a single column or row, got shape {arr.shape}")
        arr = arr.ravel()
    return arr


def _penalty_from_args(args, data: DesignData) -> tuple[PenaltyConfig, float | None]:
    n, p = data.n, data.p
    mu_sq = mu_default(n) ** 2 if args.mu_sq is None else args.mu_sq
    if args.lam is not None:
        return PenaltyConfig(lam=args.lam, mu_sq=mu_sq, c=args.c), None
    # the noise level is always estimated at the default smoothness so that
    # changing --mu-sq or --g-zero leaves lam untouched
    probe = PenaltyConfig(lam=0.0, mu_sq=mu_default(n) ** 2, c=args.c)
    sigma = sigma_estimate(data, probe)
    return PenaltyConfig(lam=lambda_default(n, p, sigma, args.lambda_scale), mu_sq=mu_sq, c=args.c), sigma


def cmd_fit(args) -> int:
    try:
        X = _read_csv(args.x, 2)
        z = _read_csv(args.z, 1)
        y = _read_csv(args.y, 1)
        data = DesignData(X, z, y)
        cfg, sigma = _penalty_from_args(args, data)
        g_fixed = np.zeros(data.n) if args.g_zero else None
        fit = dp_fit(data, cfg, g_fixed=g_fixed)
    except (DomainError, OSError, ValueError) as exc:
        print(f"plm-dp fit: {exc}", file=sys.stderr)
        return 2

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "beta.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "value", "nonzero"])
        for j, b in enumerate(fit.beta):
            w.writerow([j, fmt(b), int(b != 0)])
    with (out / "spline.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["knot", "value"])
        for k, a in zip(fit.spline.knots, fit.spline.coeffs):
            w.writerow([fmt(k), fmt(a)])
    summary = {
        "objective": fit.objective,
        "lambda": cfg.lam,
        "mu_sq": cfg.mu_sq,
        "c": cfg.c,
        "sigma_hat": sigma,
        "g_zero": bool(args.g_zero),
        "outer_iters": fit.outer_iters,
        "kkt_beta": fit.kkt_beta,
        "kkt_g": fit.kkt_g,
        "converged": fit.converged,
        "nonzeros": int(np.count_nonzero(fit.beta)),
    }
    (out / "fit.json").write_text(json.dumps(summary, indent=2) + "\n")
    if not fit.converged:
        print(f"plm-dp fit: KKT not certified (kkt_beta={fit.kkt_beta:.3g}, kkt_g={fit.kkt_g:.3g})",
              file=sys.stderr)
    return 0


def cmd_tune(args) -> int:
    try:
        lam = lambda_default(args.n, args.p, args.sigma, args.lambda_scale)
        mu = mu_default(args.n)
    except DomainError as exc:
        print(f"plm-dp tune: {exc}", file=sys.stderr)
        return 2
    print(f"lambda {fmt(lam)}")
    print(f"mu {fmt(mu)}")
    print(f"mu_sq {fmt(mu * mu)}")
    return 0


def cmd_run(args) -> int:
    overrides = {}
    if args.lambda_scale is not None:
        overrides["lambda_scale"] = args.lambda_scale
    if args.mu_sq is not None:
        overrides["mu_sq"] = args.mu_sq
    if args.c is not None:
        overrides["c"] = args.c
    return run_experiment(args.config, args.out_dir, seed=args.seed,
                          threads=args.threads or default_threads(), strict=args.strict,
                          overrides=overrides)


def _nonneg(text: str) -> float:
    v = float(text)
    if not np.isfinite(v) or v < 0:
        raise argparse.ArgumentTypeError(f"expected a finite value >= 0, got {text}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plm-dp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a simulation study from a TOML config")
    run.add_argument("config")
    run.add_argument("--out-dir", default="results")
    run.add_argument("--seed", type=int, help="override base_seed")
    run.add_argument("--threads", type=_positive_int,
                     help="worker processes (default: $PLM_DP_THREADS or the CPU count)")
    run.add_argument("--strict", action="store_true", help="exit 1 if any replicate fit fails")
    run.add_argument("--lambda-scale", type=_nonneg)
    run.add_argument("--mu-sq", type=_nonneg)
    run.add_argument("--c", type=_nonneg)
    run.set_defaults(func=cmd_run)

    fit = sub.add_parser("fit", help="fit one dataset given as headerless CSV files")
    fit.add_argument("x", help="n x p design matrix")
    fit.add_argument("z", help="n nuisance covariates")
    fit.add_argument("y", help="n responses")
    fit.add_argument("--out-dir", default="fit_out")
    fit.add_argument("--lambda", dest="lam", type=_nonneg,
                     help="l1 weight (default: the lambda rule with an estimated sigma)")
    fit.add_argument("--lambda-scale", type=_nonneg, default=2.0)
    fit.add_argument("--mu-sq", type=_nonneg, help="smoothness weight mu^2 (default: (n^(-2/5)/100)^2)")
    fit.add_argument("--c", type=_nonneg, default=1e-3)
    fit.add_argument("--g-zero", action="store_true", help="freeze g at 0 (plain lasso)")
    fit.set_defaults(func=cmd_fit)

    tune = sub.add_parser("tune", help="print the default lambda and mu")
    tune.add_argument("--n", type=_positive_int, required=True)
    tune.add_argument("--p", type=_positive_int, required=True)
    tune.add_argument("--sigma", type=_nonneg, default=1.0)
    tune.add_argument("--lambda-scale", type=_nonneg, default=2.0)
    tune.set_defaults(func=cmd_tune)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)
