"""Config-driven simulation studies and their CSV outputs.

Config files are TOML::

    base_seed = 20240101        # optional, default 0
    replicates = 200            # default for every design
    n = 72                      # default for every design

    [settings]                  # optional
    lambda_scale = 2.0
    mu_sq = 1e-6                # omit for the (n^(-2/5)/100)^2 rule
    c = 1e-3
    sigma = "true"              # or "estimate"

    [[design]]
    p = 250
    s0 = 5
    lsnr = 8
    g = "G2"
    dependent = true            # also fit DPd on the dependent variant
    # n, replicates, source = "matrix.csv" may be set per design

Every output except ``timings.csv`` is a deterministic function of the
config bytes and the seed.
"""
from __future__ import annotations

import csv
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .core import DomainError
from .sim import (PLOT_GRID, DesignSpec, Estimator, FitSettings, GFunction, ReplicateOutput,
                  ReplicateResult, gen_nuisance, resolve_source, run_replicate)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1
REPLICATE_COLUMNS = ["schema_version", "design_id", "replicate", "variant", "estimator", "pred_error",
                     "est_error_l1", "tpr", "fpr", "g_error", "tsnr", "failed"]
SUMMARY_METRICS = ["est_error_l1", "pred_error", "g_error", "tpr", "fpr", "tsnr"]
SUMMARY_COLUMNS = (["schema_version", "design_id", "p", "s0", "lsnr", "g", "n", "dependent",
                    "estimator", "replicates_ok", "replicates_failed"] + SUMMARY_METRICS)
VARIANT_COLUMNS = SUMMARY_COLUMNS[:9] + ["variant"] + SUMMARY_COLUMNS[9:]
ESTIMATOR_ORDER = [Estimator.LK, Estimator.LN, Estimator.DPi, Estimator.DPd]

_DESIGN_KEYS = {"p", "s0", "lsnr", "g", "dependent", "n", "replicates", "source"}
_SETTINGS_KEYS = {f.name for f in fields(FitSettings)}
_TOP_KEYS = {"base_seed", "replicates", "n", "settings", "design", "schema_version"}


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class StudyConfig:
    designs: tuple[DesignSpec, ...]
    settings: FitSettings


def _design_lines(text: str) -> list[int]:
    return [i for i, line in enumerate(text.splitlines(), 1)
            if re.match(r"\s*\[\[\s*design\s*\]\]", line)]


def parse_config(text: str, root: Path = Path(".")) -> StudyConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"TOML syntax error: {exc}", int(m.group(1)) if m else None) from None

    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if doc.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {doc['schema_version']!r}")

    raw_settings = doc.get("settings", {})
    bad = set(raw_settings) - _SETTINGS_KEYS
    if bad:
        raise ConfigError(f"unknown [settings] keys: {sorted(bad)}")
    try:
        settings = FitSettings(**raw_settings)
    except TypeError as exc:
        raise ConfigError(f"[settings]: {exc}") from None
    if settings.sigma not in ("true", "estimate"):
        raise ConfigError(f"[settings] sigma must be 'true' or 'estimate', got {settings.sigma!r}")

    designs_raw = doc.get("design")
    if not isinstance(designs_raw, list) or not designs_raw:
        raise ConfigError("config needs at least one [[design]] table")
    lines = _design_lines(text)
    designs = []
    for k, entry in enumerate(designs_raw):
        line = lines[k] if k < len(lines) else None
        bad = set(entry) - _DESIGN_KEYS
        if bad:
            raise ConfigError(f"design #{k + 1}: unknown keys {sorted(bad)}", line)
        missing = {"p", "s0", "lsnr", "g"} - set(entry)
        if missing:
            raise ConfigError(f"design #{k + 1}: missing keys {sorted(missing)}", line)
        try:
            spec = DesignSpec(
                p=int(entry["p"]), s0=int(entry["s0"]), lsnr=float(entry["lsnr"]),
                g_id=GFunction(str(entry["g"]).upper()),
                dependent=bool(entry.get("dependent", True)),
                n=int(entry.get("n", doc.get("n", 72))),
                replicates=int(entry.get("replicates", doc.get("replicates", 200))),
                base_seed=int(doc.get("base_seed", 0)),
                source=str(entry.get("source", "synthetic")),
            )
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"design #{k + 1}: {exc}", line) from None
        designs.append(resolve_source(spec, root))
    return StudyConfig(tuple(designs), settings)


def load_config(path: str | Path) -> StudyConfig:
    path = Path(path)
    return parse_config(path.read_text(), root=path.parent)


def default_threads() -> int:
    env = os.environ.get("PLM_DP_THREADS")
    if env:
        return max(int(env), 1)
    return os.cpu_count() or 1


def _task(args) -> ReplicateOutput:
    spec, design_id, replicate, settings = args
    # single-threaded BLAS keeps floating-point reductions identical across workers
    with threadpool_limits(1):
        return run_replicate(spec, design_id, replicate, settings)


def run_study(config: StudyConfig, threads: int = 1) -> list[list[ReplicateOutput]]:
    """Run every replicate; results are ordered by (design, replicate)."""
    tasks = [(spec, d, r, config.settings)
             for d, spec in enumerate(config.designs, 1)
             for r in range(spec.replicates)]
    if threads <= 1:
        outputs = [_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (8 * threads))))
    grouped: list[list[ReplicateOutput]] = []
    it = iter(outputs)
    for spec in config.designs:
        grouped.append([next(it) for _ in range(spec.replicates)])
    return grouped


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(v)
    if isinstance(v, Estimator):
        return v.value
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


def _summary_row(spec: DesignSpec, design_id: int, est: Estimator, recs: list[ReplicateResult]) -> dict:
    ok = [r for r in recs if not r.failed]
    row = dict(schema_version=SCHEMA_VERSION, design_id=design_id, p=spec.p, s0=spec.s0,
               lsnr=spec.lsnr, g=spec.g_id.value, n=spec.n, dependent=spec.dependent,
               estimator=est, replicates_ok=len(ok), replicates_failed=len(recs) - len(ok))
    for key in SUMMARY_METRICS:
        vals = [getattr(r, key) for r in ok if getattr(r, key) is not None]
        row[key] = float(np.mean(vals)) if vals else None
    return row


def summarize(spec: DesignSpec, design_id: int, outputs: list[ReplicateOutput],
              by_variant: bool = False) -> list[dict]:
    """Mean metrics per estimator over every non-failed record.

    LK and LN are fit on each variant of a dependent design; unless
    ``by_variant`` is set their rows pool both variants.
    """
    groups: dict[tuple, list[ReplicateResult]] = {}
    for out in outputs:
        for rec in out.records:
            key = (rec.estimator, rec.variant) if by_variant else (rec.estimator,)
            groups.setdefault(key, []).append(rec)
    rows = []
    variants = ("independent", "dependent") if by_variant else (None,)
    for variant in variants:
        for est in ESTIMATOR_ORDER:
            recs = groups.get((est, variant) if by_variant else (est,))
            if not recs:
                continue
            row = _summary_row(spec, design_id, est, recs)
            if by_variant:
                row["variant"] = variant
            rows.append(row)
    return rows


def plot_rows(spec: DesignSpec, outputs: list[ReplicateOutput]) -> tuple[list[str], list[list]]:
    header = ["z", "g0"]
    cols = [PLOT_GRID, gen_nuisance(spec.g_id, PLOT_GRID)]
    for est in (Estimator.DPi, Estimator.DPd):
        curves = [o.curves[est.value] for o in outputs if est.value in o.curves]
        if not curves:
            continue
        C = np.vstack(curves)
        header += [f"{est.value}_mean", f"{est.value}_q05", f"{est.value}_q95"]
        cols += [C.mean(axis=0), np.quantile(C, 0.05, axis=0), np.quantile(C, 0.95, axis=0)]
    return header, [list(r) for r in zip(*cols)]


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_outputs(config: StudyConfig, grouped: list[list[ReplicateOutput]], out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    rep_rows, timing_rows, summary, by_variant = [], [], [], []
    for d, (spec, outputs) in enumerate(zip(config.designs, grouped), 1):
        for out in outputs:
            for rec in out.records:
                rep_rows.append([SCHEMA_VERSION] + [getattr(rec, c) for c in REPLICATE_COLUMNS[1:]])
                timing_rows.append([rec.design_id, rec.replicate, rec.variant, rec.estimator,
                                    rec.runtime_ms])
        summary += summarize(spec, d, outputs)
        by_variant += summarize(spec, d, outputs, by_variant=True)
        header, rows = plot_rows(spec, outputs)
        _write_csv(out_dir / f"plot_g_design{d:03d}.csv", header, rows)
    _write_csv(out_dir / "replicates.csv", REPLICATE_COLUMNS, rep_rows)
    _write_csv(out_dir / "summary.csv", SUMMARY_COLUMNS,
               ([row[c] for c in SUMMARY_COLUMNS] for row in summary))
    _write_csv(out_dir / "summary_by_variant.csv", VARIANT_COLUMNS,
               ([row[c] for c in VARIANT_COLUMNS] for row in by_variant))
    _write_csv(out_dir / "timings.csv", ["design_id", "replicate", "variant", "estimator", "runtime_ms"],
               timing_rows)


def run_experiment(config_path: str | Path, out_dir: str | Path = "results", *, seed: int | None = None,
                   threads: int | None = None, strict: bool = False,
                   overrides: dict | None = None) -> int:
    """Run a study from a config file; returns a process exit code."""
    try:
        config = load_config(config_path)
        if seed is not None:
            config = replace(config, designs=tuple(replace(d, base_seed=seed) for d in config.designs))
        if overrides:
            config = replace(config, settings=replace(config.settings, **overrides))
    except (ConfigError, DomainError, OSError) as exc:
        print(f"{config_path}: {exc}", file=sys.stderr)
        return 2
    grouped = run_study(config, threads or default_threads())
    write_outputs(config, grouped, Path(out_dir))
    failures = sum(r.failed for outs in grouped for o in outs for r in o.records)
    if failures:
        print(f"{failures} replicate fits failed; see the 'failed' column", file=sys.stderr)
        if strict:
            return 1
    return 0
