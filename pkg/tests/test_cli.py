import json
import subprocess
import sys

import pytest

from finrank.cli import cli_main

RANK2 = {"kind": "FINITE_RANK", "basis": {"family": "COSINE", "size": 5}, "score_variances": [1.0, 0.5]}


def _config(tmp_path, **kw):
    doc = {"process": RANK2, "observation": {"r": 10, "noise_sd": 0.1},
           "smoother": {"grid_size": 41}, "rate": {"epsilon": 0.1, "c_R": 0.05},
           "schedule": {"algorithm": "SOME_BASIS", "p": 3.0, "c_n": 25, "j_max": 3},
           "replicates": 2, "master_seed": 1, "output_dir": str(tmp_path / "out")}
    doc.update(kw)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return str(path)


def test_schedule_constraint_exit_1(capsys):
    assert cli_main(["schedule", "--alg", "some-basis", "--p", "2.0"]) == 1
    assert "p > 2" in capsys.readouterr().err


def test_missing_config_exit_1(capsys):
    assert cli_main(["experiment", "--config", "missing.json"]) == 1
    assert "not found" in capsys.readouterr().err


def test_usage_errors_exit_1():
    assert cli_main(["frobnicate"]) == 1
    assert cli_main(["schedule", "--bogus"]) == 1
    assert cli_main(["--help"]) == 0


def test_detect_oracle_csv(tmp_path):
    out = tmp_path / "traj.csv"
    cfg = _config(tmp_path)
    assert cli_main(["detect", "--config", cfg, "--oracle-cov", "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "j,n,k,delta,i_hat,decision"
    # k(1) = 1 cannot admit rank 2; later rows can
    assert [r.split(",")[-1] for r in rows[1:]] == ["INFINITE", "FINITE(2)", "FINITE(2)"]
    # a constant threshold of 5 admits rank 2 from the first update
    assert cli_main(["detect", "--config", cfg, "--oracle-cov", "--q-cap", "5", "--out", str(out)]) == 0
    assert all(r.split(",")[-1] == "FINITE(2)" for r in out.read_text().splitlines()[1:])


def test_detect_fixed_boundary(tmp_path):
    out = tmp_path / "traj.csv"
    cfg = _config(tmp_path, rate={"epsilon": 0.1, "c_R": 0.01})
    assert cli_main(["detect", "--config", cfg, "--oracle-cov", "--q-cap", "1", "--out", str(out)]) == 0
    assert all(r.endswith("EXCEEDS_CAP") for r in out.read_text().splitlines()[1:])


def test_schedule_output(capsys):
    assert cli_main(["schedule", "--p", "3.5", "--c-n", "10", "--j-max", "4", "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["schedule"]["update_times"] == [10, 114, 468, 1280]
    assert cli_main(["schedule", "--p", "3.5", "--c-n", "10", "--j-max", "20"]) == 0
    assert "verdict: PASS" in capsys.readouterr().out


def test_simulate_estimate_spectrum_pipeline(tmp_path, capsys):
    obs, est = tmp_path / "obs.json", tmp_path / "est.json"
    cfg = _config(tmp_path)
    assert cli_main(["simulate", "--config", cfg, "--n", "200", "--seed", "3", "--out", str(obs)]) == 0
    assert len(json.loads(obs.read_text())["curves"]) == 200
    assert cli_main(["estimate", "--obs", str(obs), "--grid-size", "31", "--out", str(est)]) == 0
    doc = json.loads(est.read_text())
    assert len(doc["covariance"]["values"]) == 31
    assert cli_main(["spectrum", str(est), "--top", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 5 and lines[0].split() == ["l", "eigenvalue", "tail_after_l"]


def test_estimate_runtime_error_exit_2(tmp_path):
    obs = tmp_path / "obs.json"
    curves = [{"design_points": [0.3, 0.6], "values": [1.0, 2.0]}] * 20
    obs.write_text(json.dumps({"curves": curves}))
    assert cli_main(["estimate", "--obs", str(obs), "--h-mu", "0.5", "--h-g", "0.5"]) == 2


def test_experiment_command(tmp_path, capsys):
    cfg = _config(tmp_path)
    assert cli_main(["experiment", "--config", cfg, "--oracle-cov", "--jobs", "1"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["final_histogram"] == {"FINITE(2)": 1.0}
    assert (tmp_path / "out" / "summary.json").is_file()


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "finrank.cli", "schedule", "--p", "2"],
                          capture_output=True, text=True)
    assert proc.returncode == 1
