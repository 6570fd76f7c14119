import csv
import json
import math
from pathlib import Path

import pytest

from mmvlab.cli import main
from mmvlab.closed_form import riskless_wealth
from mmvlab.model import experiment_6_2, save_config


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "exp62.cfg"
    save_config(experiment_6_2(), p)
    return str(p)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_value_command(tmp_path, cfg_file, capsys):
    out = tmp_path / "value"
    assert main(["value", "--config", cfg_file, "--outdir", str(out)]) == 0
    rows = read_csv(out / "value.csv")
    table = {r[0]: float(r[1]) for r in rows[1:]}
    assert table["mmv_value"] == pytest.approx(
        table["riskless_terminal_wealth"] + (math.exp(0.53625) - 1.0) / 4.0, rel=1e-12)
    assert (out / "manifest.json").exists()
    assert "mmv_value" in capsys.readouterr().out


def test_invalid_config_exit_code(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text(
        "horizon = 3\nx0 = 1\ntheta = 2\nr = 0.08\nmu = 0.05\nsigma = 0.2\n"
        "kappa = 0.1\nkappa_r = 0.15\nlambda = 5\nclaim_law = exponential\nclaim_rate = 10\n"
    )
    assert main(["value", "--config", str(p), "--outdir", str(tmp_path / "o")]) == 1


def test_frontier_thetas(tmp_path, cfg_file):
    out = tmp_path / "front"
    assert main(["frontier", "--config", cfg_file, "--thetas", "0.5,1,2,4",
                 "--outdir", str(out), "--no-plots"]) == 0
    rows = read_csv(out / "frontier.csv")
    assert rows[0] == ["theta", "mean", "variance"]
    assert len(rows) == 5
    riskless = riskless_wealth(experiment_6_2(), 3.0)
    for th, mean, var in ((float(a), float(b), float(c)) for a, b, c in rows[1:]):
        assert var * th == pytest.approx(mean - riskless, rel=1e-9)


def test_frontier_zero_strategy_regime(tmp_path, cfg_file):
    out = tmp_path / "front2"
    riskless = riskless_wealth(experiment_6_2(), 3.0)
    assert main(["frontier", "--config", cfg_file, "--xis", f"1.0,{riskless}",
                 "--outdir", str(out), "--no-plots"]) == 0
    rows = read_csv(out / "frontier.csv")
    for row in rows[1:]:
        assert float(row[1]) == pytest.approx(riskless, rel=1e-12)
        assert float(row[2]) == 0.0


def test_frontier_requires_grid(tmp_path, cfg_file):
    assert main(["frontier", "--config", cfg_file, "--outdir", str(tmp_path / "x"),
                 "--no-plots"]) == 1


def test_simulate_zero_strategy(tmp_path, cfg_file):
    out = tmp_path / "sim"
    assert main(["simulate", "--config", cfg_file, "--strategy", "zero",
                 "--n-paths", "50", "--dt", "0.02", "--dump", "1",
                 "--outdir", str(out), "--no-plots"]) == 0
    rows = {r[0]: r for r in read_csv(out / "stats.csv")[1:]}
    assert float(rows["var_X"][1]) == 0.0
    assert float(rows["var_X"][2]) == 0.0
    assert float(rows["mean_X"][1]) == pytest.approx(riskless_wealth(experiment_6_2(), 3.0), rel=1e-12)
    assert (out / "trajectory_000.csv").exists()
    assert (out / "jumps_000.csv").exists()


def test_simulate_deterministic_across_threads(tmp_path, cfg_file):
    a = tmp_path / "a"
    b = tmp_path / "b"
    for out, threads in ((a, "1"), (b, "3")):
        assert main(["simulate", "--config", cfg_file, "--n-paths", "400", "--dt", "0.01",
                     "--dump", "0", "--threads", threads, "--seed", "7",
                     "--outdir", str(out), "--no-plots"]) == 0
    assert (a / "stats.csv").read_bytes() == (b / "stats.csv").read_bytes()


def test_manifest_deterministic_except_wall_time(tmp_path, cfg_file):
    a = tmp_path / "a"
    b = tmp_path / "b"
    for out in (a, b):
        assert main(["simulate", "--config", cfg_file, "--n-paths", "50", "--dt", "0.02",
                     "--dump", "0", "--seed", "3", "--outdir", str(out), "--no-plots"]) == 0
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    ma.pop("wall_time")
    mb.pop("wall_time")
    assert ma == mb
    for name in ma["outputs"]:
        assert (a / name).exists()


def test_verify_command_passes(tmp_path, cfg_file):
    out = tmp_path / "ver"
    assert main(["verify", "--config", cfg_file, "--outdir", str(out)]) == 0
    rows = read_csv(out / "saddle_report.csv")
    assert rows[0] == ["t", "x", "y", "control", "delta", "generator_value"]


def test_verify_bad_retention_fails(tmp_path, cfg_file):
    out = tmp_path / "ver2"
    assert main(["verify", "--config", cfg_file, "--bad-u-scale", "1.5",
                 "--outdir", str(out)]) == 2


def test_mmv_eval_atoms(tmp_path, capsys):
    out = tmp_path / "mmv"
    assert main(["mmv-eval", "--atoms", "0:0.5,1:0.5", "--theta", "1.0",
                 "--outdir", str(out)]) == 0
    rows = {r[0]: float(r[1]) for r in read_csv(out / "mmv.csv")[1:]}
    assert rows["agreement_gap"] <= 1e-10
    assert rows["mmv_waterfill"] <= rows["mv_utility"] + 1e-12


def test_mmv_eval_uniform_shorthand(tmp_path):
    out = tmp_path / "mmv2"
    assert main(["mmv-eval", "--uniform", "uniform(10,22,10000)", "--theta", "2",
                 "--outdir", str(out)]) == 0
    rows = {r[0]: float(r[1]) for r in read_csv(out / "mmv.csv")[1:]}
    assert rows["mmv_waterfill"] == pytest.approx(39.0 / 4.0 + 4.0 * math.sqrt(3.0) / 3.0, abs=0.01)


def test_mmv_eval_requires_one_source(tmp_path):
    assert main(["mmv-eval", "--theta", "2", "--outdir", str(tmp_path / "x")]) == 1


def test_example_6_1(tmp_path, capsys):
    out = tmp_path / "ex"
    assert main(["example-6-1", "--atoms", "20000", "--outdir", str(out), "--no-plots"]) == 0
    rows = read_csv(out / "example_6_1.csv")
    table = {r[0]: [float(v) for v in r[1:]] for r in rows[1:]}
    u0, v0w, v0t, _ = table["X0"]
    u1, v1w, v1t, kappa = table["X1"]
    assert u0 == 10.0 and v0w == pytest.approx(10.0, abs=1e-12)
    assert u1 < u0 < v1w  # the repair restores monotonic ranking
    assert kappa == pytest.approx(10.0 + 2.0 * math.sqrt(3.0), abs=0.01)
    assert "monotonicity" in capsys.readouterr().out


def test_experiment_6_2_smoke(tmp_path):
    out = tmp_path / "exp"
    assert main(["experiment-6-2", "--n-paths", "300", "--dt", "0.02", "--dump", "1",
                 "--outdir", str(out), "--no-plots"]) == 0
    for name in ("value.csv", "frontier.csv", "stats.csv", "trajectory_000.csv",
                 "jumps_000.csv", "config.cfg", "manifest.json"):
        assert (out / name).exists(), name


def test_plots_rendered(tmp_path, cfg_file):
    out = tmp_path / "simplots"
    assert main(["simulate", "--config", cfg_file, "--n-paths", "50", "--dt", "0.02",
                 "--dump", "2", "--outdir", str(out)]) == 0
    assert (out / "portfolio_stock.png").stat().st_size > 0
    assert (out / "retention_claims.png").stat().st_size > 0
