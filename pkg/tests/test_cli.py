"""Command-line subcommands, output files and exit codes."""

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from softsensor import cli
from softsensor.systems import read_trajectory_csv


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_simulate_rossler_writes_full_grid(tmp_path):
    assert run("simulate", "--preset", "ex1", "--out", tmp_path) == 0
    traj = read_trajectory_csv(tmp_path / "trajectory.csv")
    assert traj.states.shape == (10001, 3)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["config"]["model"] == "rossler"
    assert (tmp_path / "config.txt").exists()


def test_simulate_harmonic_keeps_third_state(tmp_path):
    assert run("simulate", "--preset", "ex2", "--out", tmp_path) == 0
    traj = read_trajectory_csv(tmp_path / "trajectory.csv")
    assert np.all(traj.states[:, 2] == 3.0)


def test_simulate_many_trajectories_are_numbered(tmp_path):
    assert run("simulate", "--preset", "ex7", "--set", "data.count=3", "--out", tmp_path) == 0
    assert sorted(p.name for p in tmp_path.glob("trajectory_*.csv")) == [
        "trajectory_000.csv", "trajectory_001.csv", "trajectory_002.csv"]


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("SOFTSENSOR_OUT", str(tmp_path / "env"))
    assert run("simulate", "--preset", "linear_pair") == 0
    assert (tmp_path / "env" / "trajectory.csv").exists()


def test_config_file_and_missing_key(tmp_path, capsys):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("model = harmonic\ndata.dt = 0.01\ndata.x0 = [1, 0, 1]\ndata.xhat0 = [0, 0, 1]\n")
    assert run("simulate", "--config", cfg, "--out", tmp_path) == 2
    assert "data.horizon" in capsys.readouterr().err
    cfg.write_text(cfg.read_text() + "data.horizon = 1.0\n")
    assert run("simulate", "--config", cfg, "--out", tmp_path) == 0


def test_bad_set_and_epochs_are_config_errors(tmp_path):
    assert run("train", "--preset", "ex2", "--epochs", 0, "--out", tmp_path) == 2
    assert run("simulate", "--preset", "ex2", "--set", "smc.k0", "--out", tmp_path) == 2
    assert run("simulate", "--preset", "ex2", "--set", "smc.k0=-1", "--out", tmp_path) == 2
    assert run("simulate", "--out", tmp_path) == 2


def test_train_test_and_metrics(tmp_path, capsys):
    out = tmp_path / "run"
    assert run("train", "--preset", "ex5", "--epochs", 5, "--seed", 3, "-q", "--out", out) == 0
    history = list(csv.reader(open(out / "history.csv")))
    assert history[0] == ["epoch", "total", "mse_d", "mse_y", "reg"]
    assert len(history) == 6
    ckpt = json.loads((out / "checkpoint.json").read_text())
    assert ckpt["dims"] == [3, 64, 64, 2] and ckpt["seed"] == 3

    assert run("test", "--preset", "ex5", "--out", out) == 0
    rows = list(csv.reader(open(out / "metrics.csv")))
    assert rows[0] == ["mse", "rmse", "mae", "smape_percent"]
    doc = json.loads((out / "metrics.json").read_text())
    assert doc["burn_in_s"] == 5.0
    assert len(doc["trajectories"]) == 1
    assert "RMSE" in capsys.readouterr().out

    est = read_trajectory_csv(out / "estimate.csv", state_prefix="xhat")
    truth = read_trajectory_csv(out / "truth.csv")
    np.testing.assert_array_equal(est.times, truth.times)
    assert (out / "estimate.csv").read_text().startswith("t,xhat1,xhat2,y1,u1\n")
    assert run("metrics", "--truth", out / "truth.csv", "--estimate", out / "estimate.csv",
               "--estimate-prefix", "xhat", "--burn-in", 5, "--out", tmp_path / "m") == 0
    again = json.loads((tmp_path / "m" / "metrics.json").read_text())
    assert again["rmse"] == pytest.approx(doc["trajectories"][0]["rmse"], rel=1e-12)


def test_test_with_mismatched_checkpoint(tmp_path):
    assert run("train", "--preset", "ex5", "--epochs", 1, "-q", "--out", tmp_path) == 0
    assert run("test", "--preset", "ex2", "--checkpoint", tmp_path / "checkpoint.json",
               "--out", tmp_path) == 2


def test_missing_files_are_io_errors(tmp_path):
    assert run("test", "--preset", "ex2", "--out", tmp_path) == 4
    assert run("metrics", "--truth", tmp_path / "no.csv", "--estimate", tmp_path / "no.csv") == 4
    bad = tmp_path / "bad.csv"
    bad.write_text("t,x1\n0.0,abc\n")
    assert run("metrics", "--truth", bad, "--estimate", bad) == 4


def test_diverging_training_exit_code(tmp_path):
    assert run("train", "--preset", "ex7", "--epochs", 2, "--set", "data.count=1",
               "--set", "smc.k0=1e12", "-q", "--out", tmp_path) == 3


def test_diagnose_harmonic_and_linear_pair(tmp_path, capsys):
    assert run("diagnose", "--preset", "ex2", "--point", "0.7,-0.3,1.9", "--out", tmp_path) == 0
    assert json.loads((tmp_path / "observability.json").read_text())["rank"] == 3
    assert run("diagnose", "--preset", "ex2", "--point", "0,0,2", "--out", tmp_path) == 0
    assert json.loads((tmp_path / "observability.json").read_text())["rank"] == 2
    assert run("diagnose", "--preset", "linear_pair", "--out", tmp_path) == 0
    assert json.loads((tmp_path / "observability.json").read_text())["rank"] == 2
    assert run("diagnose", "--preset", "ex1", "--horizon", 3, "--out", tmp_path) == 0
    assert json.loads((tmp_path / "observability.json").read_text())["trajectory"] == "true trajectory"
    assert "rank" in capsys.readouterr().out


def test_diagnose_rejects_singular_and_malformed_points(tmp_path, capsys):
    assert run("diagnose", "--preset", "ex6", "--point", "0.4,0.4,0.1", "--out", tmp_path) == 2
    assert "x1=x2" in capsys.readouterr().err
    assert run("diagnose", "--preset", "ex2", "--point", "1,2", "--out", tmp_path) == 2
    assert run("diagnose", "--preset", "ex2", "--point", "1,a,2", "--out", tmp_path) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "softsensor", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "softsensor" in proc.stdout
