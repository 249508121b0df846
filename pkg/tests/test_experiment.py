import json

import numpy as np
import pytest

from finrank.detect import ObservationConfig, run_detection
from finrank.errors import ConfigError
from finrank.experiment import (TIMESTAMP_KEY, ExperimentConfig, ScheduleParams, calibrate_c_R,
                                default_jobs, rate_slope, run_experiment, stable_after_first)
from finrank.schedule import RateConfig, rate_bound
from finrank.seeding import spawn_seed, splitmix64
from finrank.simulate import BasisSpec, ProcessSpec
from finrank.smooth import SmootherConfig

RANK2 = ProcessSpec(kind="FINITE_RANK", basis=BasisSpec("COSINE", 5), score_variances=[1.0, 0.5])


def _small_cfg(**kw):
    base = dict(process=RANK2, observation=ObservationConfig(r=10, noise_sd=0.1),
                smoother=SmootherConfig(grid_size=41), rate=RateConfig(epsilon=0.1, c_R=0.34),
                schedule=ScheduleParams(p=3.0, c_n=25, j_max=3), master_seed=123)
    base.update(kw)
    return ExperimentConfig(**base)


def test_splitmix64_reference_values():
    # published SplitMix64 outputs for state 0 (first draw after one increment)
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    assert spawn_seed(7, 0) != spawn_seed(8, 0)
    assert len({spawn_seed(s, i) for s in range(20) for i in range(20)}) == 400


def test_single_replicate_indicators(tmp_path):
    cfg = _small_cfg(replicates=1, output_dir=str(tmp_path))
    summary = run_experiment(cfg, jobs=1)
    traj = summary.trajectories[0]
    for row, e in zip(summary.data["updates"], traj.entries):
        assert row["frequencies"] == {traj.label(e.decision): 1.0}
    # replicate 0 equals a direct run with the split seed
    direct = run_detection(cfg.process, cfg.observation, cfg.smoother, cfg.build_schedule(),
                           seed=spawn_seed(cfg.master_seed, 0))
    assert direct.to_csv() == traj.to_csv()
    assert (tmp_path / "replicates" / "replicate_0000.csv").read_text() == traj.to_csv()


def test_oracle_experiment_frequency_one(tmp_path):
    cfg = _small_cfg(replicates=7, oracle_cov=True,
                     rate=RateConfig(epsilon=0.1, c_R=0.05), output_dir=str(tmp_path))
    summary = run_experiment(cfg, jobs=1)
    assert summary.final_frequency("FINITE(2)") == 1.0
    assert summary.data["final_stability"] == {"FINITE(2)": 1.0}


def test_outputs_and_reproducibility(tmp_path):
    cfg = _small_cfg(replicates=3)
    a = run_experiment(cfg, jobs=1, write=False)
    b = run_experiment(cfg, jobs=2, write=False)
    da, db = dict(a.data), dict(b.data)
    da.pop(TIMESTAMP_KEY)
    db.pop(TIMESTAMP_KEY)
    assert json.dumps(da, sort_keys=True) == json.dumps(db, sort_keys=True)
    for row in a.data["updates"]:
        assert sum(row["frequencies"].values()) == pytest.approx(1.0)
    assert a.data["schedule"]["update_times"] == [25, 200, 675]
    assert sum(a.data["final_histogram"].values()) == pytest.approx(1.0)

    cfg.output_dir = str(tmp_path)
    run_experiment(cfg, jobs=1)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["decision_frequencies.csv", "estimator_error.csv", "replicates", "summary.json"]
    assert len(list((tmp_path / "replicates").iterdir())) == 3
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["config"]["master_seed"] == 123
    assert summary["prior_bounds"]["verdict"] in ("PASS", "FAIL")
    assert (tmp_path / "estimator_error.csv").read_text().startswith("j,n,delta,mean_sup_error")


def test_failed_replicates_are_reported(monkeypatch):
    import finrank.experiment as ex
    from finrank.errors import EstimationError

    real = ex.run_detection

    def flaky(*args, seed, **kw):
        if seed == spawn_seed(123, 1):
            raise EstimationError("EMPTY_WINDOW", "no data", update_index=2)
        return real(*args, seed=seed, **kw)

    monkeypatch.setattr(ex, "run_detection", flaky)
    summary = run_experiment(_small_cfg(replicates=3, oracle_cov=True), jobs=1, write=False)
    reps = summary.data["replicates"]
    assert reps["completed"] == 2 and reps["failed"][0]["index"] == 1
    assert "j=2" in reps["failed"][0]["error"]


def test_config_roundtrip_and_errors(tmp_path):
    cfg = _small_cfg(replicates=4, prior=None)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.load(path).to_dict() == cfg.to_dict()
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "bad.json")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"process": RANK2.to_dict(), "colour": "red"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"process": RANK2.to_dict(), "schema_version": 2})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"process": RANK2.to_dict(), "schedule": {"algorithm": "GIVEN_BASIS", "q": 1.0, "p": 4}})


def test_default_jobs(monkeypatch):
    monkeypatch.setenv("FINRANK_JOBS", "3")
    assert default_jobs() == 3
    monkeypatch.setenv("FINRANK_JOBS", "x")
    with pytest.raises(ConfigError):
        default_jobs()


def test_stable_after_first():
    from finrank.detect import Decision, DecisionTrajectory, TrajectoryEntry

    def traj(ranks):
        return DecisionTrajectory([TrajectoryEntry(j, 10 * j, 0, 5, 0.1, Decision(r))
                                   for j, r in enumerate(ranks, 1)])

    assert stable_after_first(traj([None, 2, 2]))
    assert not stable_after_first(traj([2, None, 2]))
    assert stable_after_first(traj([1]))


def test_calibration_bounds_pilot_errors():
    obs_cfg = ObservationConfig(r=10)
    smoother = SmootherConfig(grid_size=31)
    rate = RateConfig(epsilon=0.1)
    c = calibrate_c_R(RANK2, obs_cfg, smoother, rate, (100, 300), seed=5)
    assert c > 0
    again = calibrate_c_R(RANK2, obs_cfg, smoother, RateConfig(epsilon=0.1, c_R=7.0), (100, 300), seed=5)
    assert again == c


def test_rate_slope_exact():
    n = np.array([200, 800, 3200])
    x = n / np.log(n)
    assert rate_slope(n, 3.0 * x**-0.5) == pytest.approx(-0.5)
