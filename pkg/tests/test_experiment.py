import csv
import math

import numpy as np
import pytest

import plmdp.sim as sim
from plmdp import NumericalError
from plmdp.experiment import ConfigError, default_threads, parse_config, run_experiment

SMOKE = """\
base_seed = 11
replicates = 2

[[design]]
p = 30
s0 = 3
lsnr = 8
g = "G1"
"""


def read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_parse_defaults():
    cfg = parse_config(SMOKE)
    (d,) = cfg.designs
    assert (d.p, d.s0, d.lsnr, d.g_id.value, d.n, d.replicates, d.base_seed, d.dependent) == \
        (30, 3, 8.0, "G1", 72, 2, 11, True)
    assert cfg.settings.lambda_scale == 2.0 and cfg.settings.mu_sq is None


@pytest.mark.parametrize("text, line, fragment", [
    (SMOKE + "\n[[design]]\np = 10\ns0 = 2\nlsnr = 2\n", 10, "missing keys"),
    (SMOKE + "\n[[design]]\np = 10\ns0 = 20\nlsnr = 2\ng = 'G2'\n", 10, "s0"),
    (SMOKE + "\n[[design]]\np = 10\ns0 = 2\nlsnr = 2\ng = 'G7'\n", 10, "G7"),
    (SMOKE + "bogus = 1\n", 4, "unknown keys"),
    ("replicates = 2\n[[design]\n", 2, "TOML"),
])
# design errors point at the line of their [[design]] header
def test_parse_errors_carry_lines(text, line, fragment):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.line == line
    assert fragment in str(exc.value)


def test_parse_errors_without_lines():
    with pytest.raises(ConfigError, match="at least one"):
        parse_config("replicates = 3\n")
    with pytest.raises(ConfigError, match="top-level"):
        parse_config(SMOKE + "\n[extra]\nx = 1\n")
    with pytest.raises(ConfigError, match="settings"):
        parse_config(SMOKE + "[settings]\nlambda = 1\n")
    with pytest.raises(ConfigError, match="sigma"):
        parse_config(SMOKE + "[settings]\nsigma = 'guess'\n")


def test_bad_config_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text("[[design]]\np = 'many'\ns0 = 1\nlsnr = 1\ng = 'G1'\n")
    assert run_experiment(path, tmp_path / "out") == 2
    assert "line 1" in capsys.readouterr().err
    assert run_experiment(tmp_path / "missing.toml", tmp_path / "out") == 2


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("smoke")
    (root / "c.toml").write_text(SMOKE)
    assert run_experiment(root / "c.toml", root / "out", threads=1) == 0
    return root / "out"


def test_smoke_summary(smoke_run):
    rows = read(smoke_run / "summary.csv")
    assert [r["estimator"] for r in rows] == ["LK", "LN", "DPi", "DPd"]
    for r in rows:
        for key in ("est_error_l1", "pred_error", "tpr", "fpr", "tsnr"):
            assert math.isfinite(float(r[key]))
        assert r["schema_version"] == "1"
    assert all(r["g_error"] == "" for r in rows[:2])
    assert all(math.isfinite(float(r["g_error"])) for r in rows[2:])


def test_summary_equals_recomputed_means(smoke_run):
    reps = read(smoke_run / "replicates.csv")
    for r in read(smoke_run / "summary.csv"):
        mine = [x for x in reps if x["estimator"] == r["estimator"] and x["failed"] == "0"]
        assert int(r["replicates_ok"]) == len(mine)
        for key in ("pred_error", "est_error_l1", "tpr", "fpr"):
            assert float(r[key]) == pytest.approx(np.mean([float(x[key]) for x in mine]), rel=1e-14)
    for r in read(smoke_run / "summary_by_variant.csv"):
        mine = [x for x in reps if x["estimator"] == r["estimator"] and x["variant"] == r["variant"]]
        assert float(r["pred_error"]) == pytest.approx(np.mean([float(x["pred_error"]) for x in mine]))


def test_seventeen_significant_digits(smoke_run):
    reps = read(smoke_run / "replicates.csv")
    text = reps[0]["pred_error"]
    assert float(format(float(text), ".17g")) == float(text)
    assert len(text.replace(".", "").lstrip("0").split("e")[0]) >= 15


def test_plot_files(smoke_run):
    rows = read(smoke_run / "plot_g_design001.csv")
    assert len(rows) == 201
    assert list(rows[0]) == ["z", "g0", "DPi_mean", "DPi_q05", "DPi_q95", "DPd_mean", "DPd_q05", "DPd_q95"]
    z = [float(r["z"]) for r in rows]
    assert z[0] == -0.5 and z[-1] == 0.5
    for r in rows:
        assert float(r["DPi_q05"]) <= float(r["DPi_mean"]) + 1e-12 <= float(r["DPi_q95"]) + 2e-12


def test_repeat_runs_are_byte_identical(tmp_path, smoke_run):
    (tmp_path / "c.toml").write_text(SMOKE)
    assert run_experiment(tmp_path / "c.toml", tmp_path / "again", threads=1) == 0
    for name in ("replicates.csv", "summary.csv", "summary_by_variant.csv", "plot_g_design001.csv"):
        assert (tmp_path / "again" / name).read_bytes() == (smoke_run / name).read_bytes()


def test_seed_override_changes_results(tmp_path, smoke_run):
    (tmp_path / "c.toml").write_text(SMOKE)
    run_experiment(tmp_path / "c.toml", tmp_path / "o", threads=1, seed=12)
    assert (tmp_path / "o" / "replicates.csv").read_bytes() != (smoke_run / "replicates.csv").read_bytes()


def test_failures_are_flagged_and_strict(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NumericalError("forced")

    monkeypatch.setattr(sim, "dp_fit", boom)
    (tmp_path / "c.toml").write_text(SMOKE)
    assert run_experiment(tmp_path / "c.toml", tmp_path / "a", threads=1) == 0
    assert run_experiment(tmp_path / "c.toml", tmp_path / "b", threads=1, strict=True) == 1
    reps = read(tmp_path / "a" / "replicates.csv")
    assert {r["estimator"] for r in reps if r["failed"] == "1"} == {"DPi", "DPd"}
    summary = read(tmp_path / "a" / "summary.csv")
    dp = [r for r in summary if r["estimator"].startswith("DP")]
    assert all(r["replicates_failed"] == "2" and r["pred_error"] == "" for r in dp)


def test_default_threads(monkeypatch):
    monkeypatch.setenv("PLM_DP_THREADS", "3")
    assert default_threads() == 3
    monkeypatch.delenv("PLM_DP_THREADS")
    assert default_threads() >= 1


def test_threads_do_not_change_output(tmp_path, smoke_run):
    (tmp_path / "c.toml").write_text(SMOKE)
    assert run_experiment(tmp_path / "c.toml", tmp_path / "t2", threads=2) == 0
    for name in ("replicates.csv", "summary.csv", "plot_g_design001.csv"):
        assert (tmp_path / "t2" / name).read_bytes() == (smoke_run / name).read_bytes()
