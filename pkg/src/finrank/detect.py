"""Sequential detection of finite expressibility.

At each update time ``n(j)`` the covariance is estimated from the first
``n(j)`` curves, a truncation index is computed at precision ``delta_n(j)``
and compared with the threshold ``k(j)``: an index ``i <= k(j)`` declares
rank ``i``, anything else declares infinite rank. The decision is held until
the next update.

SOME_BASIS uses the spectral truncation index (unknown eigenbasis);
GIVEN_BASIS uses the projection index against a fixed tensor basis.
"""

from __future__ import annotations

import csv
import io
import json
from bisect import bisect_right
from dataclasses import dataclass, field, replace

import numpy as np

from finrank.errors import ConfigError, EstimationError
from finrank.schedule import Algorithm, DetectionSchedule
from finrank.simulate import (BasisSpec, NoiseKind, ObservationSet, ProcessSpec, observe,
                              simulate_paths, true_covariance)
from finrank.smooth import (CovarianceAccumulator, GridKernel, MeanAccumulator, SmootherConfig,
                            assemble_covariance, output_grid)
from finrank.seeding import spawn_seed
from finrank.spectral import (DEFAULT_L_MAX, OVERFLOW, IndexOverflow, basis_coefficients,
                              eigendecompose, trunc_index_i, trunc_index_iota)

INFINITE_LABEL = "INFINITE"
EXCEEDS_CAP = "EXCEEDS_CAP"


@dataclass(frozen=True)
class Decision:
    """Declared hypothesis: finite rank ``rank``, or infinite when ``rank is None``."""

    rank: int | None

    def __post_init__(self):
        if self.rank is not None and self.rank < 0:
            raise ValueError("rank must be nonnegative")

    @classmethod
    def finite(cls, rank: int) -> "Decision":
        return cls(int(rank))

    @classmethod
    def infinite(cls) -> "Decision":
        return cls(None)

    @property
    def is_finite(self) -> bool:
        return self.rank is not None

    def label(self, infinite_label: str = INFINITE_LABEL) -> str:
        return f"FINITE({self.rank})" if self.is_finite else infinite_label

    def __str__(self) -> str:
        return self.label()

    @classmethod
    def parse(cls, text: str) -> "Decision":
        text = text.strip()
        if text in (INFINITE_LABEL, EXCEEDS_CAP):
            return cls.infinite()
        if text.startswith("FINITE(") and text.endswith(")"):
            return cls.finite(int(text[7:-1]))
        raise ValueError(f"cannot parse decision {text!r}")


def decide_at_update(index_value: int | IndexOverflow, k: int) -> Decision:
    if k < 0:
        raise ValueError("threshold k must be nonnegative")
    if index_value is OVERFLOW or index_value > k:
        return Decision.infinite()
    return Decision.finite(index_value)


@dataclass
class TrajectoryEntry:
    j: int
    n: int
    i_hat: int | IndexOverflow
    k: int
    delta: float
    decision: Decision
    sup_error: float | None = None

    def to_dict(self, infinite_label: str = INFINITE_LABEL) -> dict:
        return {"j": self.j, "n": self.n, "k": self.k, "delta": self.delta,
                "i_hat": str(self.i_hat) if self.i_hat is OVERFLOW else int(self.i_hat),
                "decision": self.decision.label(infinite_label), "sup_error": self.sup_error}


CSV_COLUMNS = ("j", "n", "k", "delta", "i_hat", "decision")


@dataclass
class DecisionTrajectory:
    entries: list[TrajectoryEntry]
    metadata: dict = field(default_factory=dict)

    @property
    def final(self) -> Decision:
        return self.entries[-1].decision

    @property
    def infinite_label(self) -> str:
        return self.metadata.get("infinite_label", INFINITE_LABEL)

    def label(self, decision: Decision) -> str:
        return decision.label(self.infinite_label)

    def decision_at(self, n: int) -> Decision:
        """Decision in force at sample size ``n`` (held between updates)."""
        times = [e.n for e in self.entries]
        pos = bisect_right(times, n)
        if pos == 0:
            raise ValueError(f"no decision before the first update time n={times[0]}")
        return self.entries[pos - 1].decision

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for e in self.entries:
            d = e.to_dict(self.infinite_label)
            writer.writerow([d[c] if c != "delta" else repr(float(e.delta)) for c in CSV_COLUMNS])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"entries": [e.to_dict(self.infinite_label) for e in self.entries],
                "final": self.label(self.final), "metadata": self.metadata}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_csv(cls, text: str, infinite_label: str = INFINITE_LABEL) -> "DecisionTrajectory":
        entries = []
        for row in csv.DictReader(io.StringIO(text)):
            i_hat = OVERFLOW if row["i_hat"] == "OVERFLOW" else int(row["i_hat"])
            entries.append(TrajectoryEntry(int(row["j"]), int(row["n"]), i_hat, int(row["k"]),
                                           float(row["delta"]), Decision.parse(row["decision"])))
        return cls(entries, {"infinite_label": infinite_label})


@dataclass(frozen=True)
class ObservationConfig:
    r: int = 50
    noise_sd: float = 0.1
    noise: NoiseKind = NoiseKind.GAUSSIAN

    def __post_init__(self):
        object.__setattr__(self, "noise", NoiseKind(self.noise))
        if int(self.r) != self.r or self.r < 2:
            raise ConfigError("r must be an integer >= 2")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be nonnegative")

    def to_dict(self) -> dict:
        return {"r": self.r, "noise_sd": self.noise_sd, "noise": self.noise.value}

    @classmethod
    def from_dict(cls, d: dict) -> "ObservationConfig":
        return cls(**d)


class CovarianceTracker:
    """Covariance estimates for a growing prefix of an observation set.

    Pooled sums are carried over from the previous update whenever the
    bandwidths did not change, so only the new curves are processed.
    """

    def __init__(self, obs: ObservationSet, smoother: SmootherConfig):
        self.obs = obs
        self.smoother = smoother
        self.grid = output_grid(smoother.grid_size)
        self._mean: MeanAccumulator | None = None
        self._cov: CovarianceAccumulator | None = None
        self.reused = 0

    def _grow(self, acc, cls, h, n):
        if acc is not None and acc.h == h and len(acc.curves) <= n:
            self.reused += 1
        else:
            acc = cls(self.grid, h, self.smoother.kernel)
        acc.add(self.obs.curves[len(acc.curves):n])
        return acc

    def estimate(self, n: int) -> GridKernel:
        r = min(c.design_points.size for c in self.obs.curves[:n])
        cfg = self.smoother.resolve(n, r)
        self._mean = self._grow(self._mean, MeanAccumulator, cfg.h_mu, n)
        self._cov = self._grow(self._cov, CovarianceAccumulator, cfg.h_G, n)
        return GridKernel(self.grid, assemble_covariance(self._cov.estimate(), self._mean.estimate()))


def _truncation_index(kernel: GridKernel, delta: float, algorithm: Algorithm,
                      basis: BasisSpec | None, l_max: int):
    if algorithm is Algorithm.SOME_BASIS:
        return trunc_index_i(eigendecompose(kernel), delta)
    return trunc_index_iota(basis_coefficients(kernel, basis, l_max), delta)


def simulate_observations(process: ProcessSpec, obs_cfg: ObservationConfig, n: int,
                          seed: int) -> ObservationSet:
    """Simulated data for a detection run; prefixes do not depend on ``n``."""
    paths = simulate_paths(process, n, spawn_seed(seed, 0))
    return observe(paths, obs_cfg.r, obs_cfg.noise_sd, spawn_seed(seed, 1), obs_cfg.noise)


def run_detection(process: ProcessSpec, obs_cfg: ObservationConfig, smoother: SmootherConfig,
                  sched: DetectionSchedule, basis: BasisSpec | None = None, seed: int = 0,
                  oracle_cov: bool = False, obs: ObservationSet | None = None,
                  oracle_kernel: GridKernel | None = None,
                  l_max: int = DEFAULT_L_MAX) -> DecisionTrajectory:
    """Run the detection procedure along ``sched``.

    One data set of ``n(j_max)`` curves is simulated (unless ``obs`` is
    given) and update ``j`` uses its first ``n(j)`` curves. With
    ``oracle_cov`` the estimator is bypassed and the true covariance (or
    ``oracle_kernel``) is used at every update.
    """
    if sched.algorithm is Algorithm.GIVEN_BASIS and basis is None:
        raise ConfigError("GIVEN_BASIS detection needs a basis")
    grid = output_grid(smoother.grid_size)
    truth = None
    if oracle_kernel is None and process is not None:
        truth = true_covariance(process, grid)
    if oracle_cov and oracle_kernel is None:
        if truth is None:
            raise ConfigError("oracle bypass needs a process with a known covariance")
        oracle_kernel = GridKernel(grid, truth)

    tracker = None
    if not (oracle_cov or oracle_kernel is not None):
        if obs is None:
            obs = simulate_observations(process, obs_cfg, sched.update_times[-1], seed)
        elif obs.n < sched.update_times[-1]:
            raise ConfigError(f"need {sched.update_times[-1]} curves, observation set has {obs.n}")
        tracker = CovarianceTracker(obs, smoother)

    entries = []
    for j, (n, k, delta) in enumerate(zip(sched.update_times, sched.thresholds, sched.deltas), 1):
        if tracker is None:
            kernel = oracle_kernel
        else:
            try:
                kernel = tracker.estimate(n)
            except EstimationError as exc:
                raise EstimationError(exc.code, exc.args[0], update_index=j) from exc
        idx = _truncation_index(kernel, delta, sched.algorithm, basis, l_max)
        sup_err = None
        if truth is not None and kernel.values.shape == truth.shape:
            sup_err = float(np.max(np.abs(kernel.values - truth)))
        entries.append(TrajectoryEntry(j, n, idx, k, float(delta), decide_at_update(idx, k), sup_err))

    meta = {"algorithm": sched.algorithm.value, "oracle_cov": bool(oracle_cov or tracker is None),
            "infinite_label": INFINITE_LABEL}
    if tracker is not None:
        meta["accumulator_reuses"] = tracker.reused
    return DecisionTrajectory(entries, meta)


def run_fixed_boundary(process: ProcessSpec, obs_cfg: ObservationConfig, smoother: SmootherConfig,
                       sched: DetectionSchedule, q_cap: int, basis: BasisSpec | None = None,
                       seed: int = 0, **kwargs) -> DecisionTrajectory:
    """Detection with the constant threshold ``k(j) = q_cap``.

    An index above ``q_cap`` declares "dimension exceeds q_cap", which
    bundles every larger finite rank with infinite rank (label ``EXCEEDS_CAP``).
    """
    if int(q_cap) != q_cap or q_cap < 1:
        raise ConfigError("q_cap must be a positive integer")
    capped = replace(sched, thresholds=[int(q_cap)] * sched.j_max)
    traj = run_detection(process, obs_cfg, smoother, capped, basis, seed, **kwargs)
    traj.metadata.update(infinite_label=EXCEEDS_CAP, q_cap=int(q_cap))
    return traj
