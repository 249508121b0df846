import json

import numpy as np
import pytest

from finrank.detect import (EXCEEDS_CAP, CovarianceTracker, Decision, DecisionTrajectory,
                            ObservationConfig, TrajectoryEntry, decide_at_update, run_detection,
                            run_fixed_boundary, simulate_observations)
from finrank.errors import ConfigError, EstimationError
from finrank.schedule import DetectionSchedule, RateConfig, build_schedule
from finrank.simulate import BasisSpec, Curve, ObservationSet, ProcessSpec
from finrank.smooth import GridKernel, SmootherConfig, estimate_cov
from finrank.spectral import OVERFLOW, eigendecompose, tail_hs

C_R = 0.3359179850628584  # pinned calibration, see test_acceptance


def _sched(deltas, thresholds, alg="SOME_BASIS"):
    j = len(deltas)
    return DetectionSchedule(alg, 3.0, None if alg == "SOME_BASIS" else 1.0, 25.0, j,
                             [25 * (i + 1) ** 3 for i in range(j)], list(thresholds), list(deltas))


def test_decide_at_update():
    assert decide_at_update(2, 5) == Decision.finite(2)
    assert decide_at_update(6, 5) == Decision.infinite()
    assert decide_at_update(OVERFLOW, 10**6) == Decision.infinite()
    assert decide_at_update(0, 0) == Decision.finite(0)
    with pytest.raises(ValueError):
        decide_at_update(1, -1)


def test_decision_labels_roundtrip():
    for d in (Decision.finite(0), Decision.finite(12), Decision.infinite()):
        assert Decision.parse(d.label()) == d
    assert Decision.infinite().label(EXCEEDS_CAP) == EXCEEDS_CAP
    assert Decision.parse(EXCEEDS_CAP) == Decision.infinite()
    with pytest.raises(ValueError):
        Decision.parse("MAYBE")


def test_hold_semantics():
    e = [TrajectoryEntry(1, 10, 5, 1, 0.5, Decision.infinite()),
         TrajectoryEntry(2, 80, 2, 2, 0.3, Decision.finite(2))]
    t = DecisionTrajectory(e)
    assert t.decision_at(10) == Decision.infinite()
    assert t.decision_at(79) == Decision.infinite()
    assert t.decision_at(80) == Decision.finite(2)
    assert t.decision_at(10**9) == Decision.finite(2)
    with pytest.raises(ValueError):
        t.decision_at(9)


def test_oracle_rank2_every_entry_finite(rank2_process):
    sched = _sched([0.45, 0.3, 0.2, 0.1], [2, 3, 4, 5])
    traj = run_detection(rank2_process, ObservationConfig(), SmootherConfig(), sched, oracle_cov=True)
    assert [str(e.decision) for e in traj.entries] == ["FINITE(2)"] * 4
    assert traj.metadata["oracle_cov"] is True
    assert all(e.sup_error == 0.0 for e in traj.entries)


@pytest.mark.parametrize("c_R, n_finite", [(1.0, 6), (0.05, 6), (0.01, 0)])
def test_oracle_brownian_sweep(c_R, n_finite):
    """Decisions agree with comparing delta_n(j) against the grid BM tail at k(j)."""
    grid_cfg = SmootherConfig(grid_size=201)
    sched = build_schedule("SOME_BASIS", 3.5, None, 10, 6, RateConfig(epsilon=0.1, c_R=c_R))
    bm = ProcessSpec(kind="BROWNIAN")
    traj = run_detection(bm, ObservationConfig(), grid_cfg, sched, oracle_cov=True)
    d = eigendecompose(GridKernel.from_function(lambda s, t: np.minimum(s, t), 201))
    for e, k, delta in zip(traj.entries, sched.thresholds, sched.deltas):
        expect_finite = tail_hs(d, k) < delta
        assert e.decision.is_finite == expect_finite
        if expect_finite:
            assert e.decision.rank == e.i_hat <= k
    assert sum(e.decision.is_finite for e in traj.entries) == n_finite


def test_given_basis_oracle():
    grid = np.linspace(0, 1, 101)
    psi1, psi2 = np.ones(101), np.sqrt(2) * np.cos(np.pi * grid)
    k = GridKernel(grid, np.outer(psi1, psi1) + 0.3 * np.outer(psi2, psi2))
    sched = _sched([0.2, 0.2], [3, 4], alg="GIVEN_BASIS")
    traj = run_detection(None, ObservationConfig(), SmootherConfig(), sched,
                         basis=BasisSpec("COSINE", 5), oracle_kernel=k)
    assert [e.i_hat for e in traj.entries] == [3, 3]
    assert traj.final == Decision.finite(3)
    with pytest.raises(ConfigError):
        run_detection(None, ObservationConfig(), SmootherConfig(), sched, oracle_kernel=k)


def test_fixed_boundary_oracles():
    sched = _sched([0.05, 0.01], [1, 2])
    rank2 = ProcessSpec(kind="FINITE_RANK", basis=BasisSpec("COSINE", 7), score_variances=[1.0, 0.5])
    rank7 = ProcessSpec(kind="FINITE_RANK", basis=BasisSpec("COSINE", 7),
                        score_variances=[1.0, 0.8, 0.6, 0.5, 0.4, 0.3, 0.2])
    t2 = run_fixed_boundary(rank2, ObservationConfig(), SmootherConfig(), sched, 5, oracle_cov=True)
    t7 = run_fixed_boundary(rank7, ObservationConfig(), SmootherConfig(), sched, 5, oracle_cov=True)
    assert t2.final == Decision.finite(2)
    assert t7.label(t7.final) == EXCEEDS_CAP
    assert t7.entries[-1].i_hat == 7
    assert t7.metadata["infinite_label"] == EXCEEDS_CAP
    assert "EXCEEDS_CAP" in t7.to_csv()
    with pytest.raises(ConfigError):
        run_fixed_boundary(rank2, ObservationConfig(), SmootherConfig(), sched, 0, oracle_cov=True)


def test_fixed_boundary_brownian_exceeds_cap():
    d = eigendecompose(GridKernel.from_function(lambda s, t: np.minimum(s, t), 101))
    delta = 0.9 * tail_hs(d, 3)
    traj = run_fixed_boundary(ProcessSpec(kind="BROWNIAN"), ObservationConfig(), SmootherConfig(),
                              _sched([delta], [1]), 3, oracle_cov=True)
    assert traj.label(traj.final) == EXCEEDS_CAP


def test_full_pipeline_reference_seed(rank2_process):
    sched = build_schedule("SOME_BASIS", 3, None, 25, 5, RateConfig(epsilon=0.1, c_R=C_R))
    traj = run_detection(rank2_process, ObservationConfig(r=50, noise_sd=0.1), SmootherConfig(),
                         sched, seed=0)
    assert [str(e.decision) for e in traj.entries] == ["INFINITE"] + ["FINITE(2)"] * 4
    assert [e.i_hat for e in traj.entries] == [2] * 5
    errs = [e.sup_error for e in traj.entries]
    assert errs[-1] < errs[0]


def test_tracker_reuse_equals_from_scratch(rank2_process):
    obs = simulate_observations(rank2_process, ObservationConfig(r=10), 300, seed=4)
    for smoother in (SmootherConfig(h_mu=0.2, h_G=0.2, grid_size=31), SmootherConfig(grid_size=31)):
        tracker = CovarianceTracker(obs, smoother)
        for n in (50, 120, 300):
            cached = tracker.estimate(n)
            fresh = estimate_cov(obs.prefix(n), smoother.resolve(n, 10))
            np.testing.assert_allclose(cached.values, fresh.values, rtol=1e-10, atol=1e-12)
        assert tracker.reused == (4 if smoother.pinned else 0)


def test_prefix_stability(rank2_process):
    cfg = ObservationConfig(r=5)
    small = simulate_observations(rank2_process, cfg, 20, seed=9)
    big = simulate_observations(rank2_process, cfg, 60, seed=9)
    for a, b in zip(small.curves, big.curves):
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.design_points, b.design_points)


def test_supplied_observations_and_errors(rank2_process):
    sched = _sched([0.4, 0.3], [1, 2])
    with pytest.raises(ConfigError):
        run_detection(rank2_process, ObservationConfig(), SmootherConfig(), sched,
                      obs=simulate_observations(rank2_process, ObservationConfig(r=5), 10, 1))
    # degenerate data: every curve observed at the same two points
    obs = ObservationSet([Curve([0.3, 0.6], [1.0, 2.0]) for _ in range(200)])
    with pytest.raises(EstimationError) as info:
        run_detection(rank2_process, ObservationConfig(r=2), SmootherConfig(h_mu=0.5, h_G=0.5),
                      sched, obs=obs)
    assert info.value.update_index == 1
    assert "j=1" in str(info.value)


def test_trajectory_serialisation(rank2_process):
    sched = _sched([0.45, 0.3], [2, 3])
    traj = run_detection(rank2_process, ObservationConfig(), SmootherConfig(), sched, oracle_cov=True)
    text = traj.to_csv()
    assert text.splitlines()[0] == "j,n,k,delta,i_hat,decision"
    back = DecisionTrajectory.from_csv(text)
    assert [e.decision for e in back.entries] == [e.decision for e in traj.entries]
    assert [e.delta for e in back.entries] == [e.delta for e in traj.entries]
    doc = json.loads(traj.to_json())
    assert doc["final"] == "FINITE(2)"


def test_observation_config_validation():
    with pytest.raises(ConfigError):
        ObservationConfig(r=1)
    with pytest.raises(ConfigError):
        ObservationConfig(noise_sd=-0.1)
    assert ObservationConfig.from_dict(ObservationConfig().to_dict()) == ObservationConfig()
