import csv
import subprocess
import sys

import numpy as np
import pytest

from ctmcgp import cli
from ctmcgp.errors import NumericalError


def rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


@pytest.fixture
def sim_dir(tmp_path):
    cfg = tmp_path / "sim.cfg"
    cfg.write_text("model = tree\nstates = 3\nn_tips = 12\ntree_height = 1.0\nseed = 5\n")
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "data")]) == 0
    return tmp_path


def test_simulate_outputs(sim_dir):
    data = sim_dir / "data"
    for name in ("covariates.csv", "truth.csv", "rates.csv", "tree.nwk", "tips.csv"):
        assert (data / name).exists()
    assert len(rows(data / "truth.csv")) == 6
    assert len(rows(data / "tips.csv")) == 12


def test_simulate_is_byte_identical(tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("model = sequential\nstates = 3\nn_obs = 30\n")
    for d in ("a", "b"):
        assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / d), "--seed", "3"]) == 0
    for name in ("observations.csv", "truth.csv", "covariates.csv", "rates.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_infer_writes_samples_and_summaries(sim_dir):
    cfg = sim_dir / "inf.cfg"
    cfg.write_text("\n".join([
        "model = tree", "states = 3", "tree = data/tree.nwk", "tips = data/tips.csv",
        "covariates = data/covariates.csv", "prior = both", "warmup = 20", "iterations = 30",
        "leapfrog_steps = 5", "step_size = 0.05", ""]))
    out = sim_dir / "fit"
    assert cli.main(["infer", "--config", str(cfg), "--out", str(out)]) == 0
    gp = rows(out / "samples_gp.csv")
    assert len(gp) == 30
    assert {"iteration", "log_posterior", "sigma2_x", "ell_x", "theta_1_2"} <= set(gp[0])
    assert len(rows(out / "samples_loglinear.csv")) == 30
    assert len(rows(out / "summary_gp.csv")) == 6
    assert (out / "summary.txt").exists()


def test_gradcheck_agreement(sim_dir):
    cfg = sim_dir / "g.cfg"
    cfg.write_text("states = 3\nn_tips = 10\n")
    assert cli.main(["grad-check", "--config", str(cfg), "--out", str(sim_dir / "g")]) == 0
    summary = {(r["space"], r["method"]): r for r in rows(sim_dir / "g" / "gradcheck.summary.csv")}
    assert float(summary["theta", "exact"]["max_rel_err"]) < 1e-6
    assert float(summary["lambda", "series"]["max_rel_err"]) < 1e-6
    table = rows(sim_dir / "g" / "gradcheck.csv")
    assert sum(r["space"] == "lambda" for r in table) == 9
    assert sum(r["space"] == "theta" for r in table) == 6


def test_gradcheck_guard(tmp_path):
    cfg = tmp_path / "g.cfg"
    cfg.write_text("max_states = 4\n")
    assert cli.main(["grad-check", "--config", str(cfg), "--states", "5", "--out", str(tmp_path)]) == 3


def test_bench_command(tmp_path, monkeypatch):
    from ctmcgp import bench
    real = bench.run_bench
    monkeypatch.setattr(cli, "run_bench", lambda **kw: real(
        **{**kw, "n_tips": 5}, timer=lambda m, S, fn: 1e-4 * S ** 2))
    cfg = tmp_path / "b.cfg"
    cfg.write_text("bench_states = 4, 8, 16\n")
    assert cli.main(["bench", "--config", str(cfg), "--method", "approx", "--out", str(tmp_path)]) == 0
    slope = rows(tmp_path / "bench_slopes.csv")[0]
    assert float(slope["slope"]) == pytest.approx(2.0, abs=1e-9)
    assert cli.main(["bench", "--config", str(cfg), "--reps", "2", "--out", str(tmp_path)]) == 1


def test_input_errors_exit_one(tmp_path):
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.cfg")]) == 1
    assert cli.main(["frobnicate", "--config", "x"]) == 1
    assert cli.main(["simulate"]) == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("model = tree\ntree = nowhere.nwk\n")
    assert cli.main(["infer", "--config", str(bad)]) == 1


def test_numerical_error_exit_two(tmp_path, monkeypatch):
    def boom(cfg):
        raise NumericalError("overflow")
    monkeypatch.setitem(cli.COMMANDS, "simulate", boom)
    cfg = tmp_path / "s.cfg"
    cfg.write_text("")
    assert cli.main(["simulate", "--config", str(cfg)]) == 2


def test_console_script(tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("model = sequential\nstates = 2\nn_obs = 5\n")
    res = subprocess.run([sys.executable, "-m", "ctmcgp.cli", "simulate", "--config", str(cfg),
                          "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "o" / "observations.csv").exists()


def test_infer_is_deterministic(sim_dir):
    cfg = sim_dir / "inf.cfg"
    cfg.write_text("\n".join([
        "model = tree", "states = 3", "tree = data/tree.nwk", "tips = data/tips.csv",
        "covariates = data/covariates.csv", "warmup = 10", "iterations = 15",
        "leapfrog_steps = 4", "step_size = 0.05", ""]))
    for d in ("a", "b"):
        assert cli.main(["infer", "--config", str(cfg), "--out", str(sim_dir / d), "--seed", "2"]) == 0
    assert (sim_dir / "a" / "samples_gp.csv").read_bytes() == (sim_dir / "b" / "samples_gp.csv").read_bytes()
    assert (sim_dir / "a" / "summary_gp.csv").read_bytes() == (sim_dir / "b" / "summary_gp.csv").read_bytes()
