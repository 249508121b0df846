"""Monte Carlo experiments: replicated detection runs and their aggregation.

An experiment is described by a single JSON document (``schema_version`` 1)::

    {
      "schema_version": 1,
      "process": {...ProcessSpec...},
      "observation": {"r": 50, "noise_sd": 0.1, "noise": "GAUSSIAN"},
      "smoother": {"kernel": "EPANECHNIKOV", "h_mu": null, "h_G": null, "grid_size": 101, "c_h": 1.0},
      "rate": {"regime": "DENSE", "epsilon": 0.1, "c_R": 1.0, ...},
      "schedule": {"algorithm": "SOME_BASIS", "p": 3.0, "q": null, "c_n": 25, "j_max": 5},
      "basis": null,
      "prior": null,
      "replicates": 100,
      "master_seed": 0,
      "output_dir": "runs/example",
      "oracle_cov": false
    }

Replicate ``i`` uses seed ``spawn_seed(master_seed, i)``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from finrank.detect import (DecisionTrajectory, ObservationConfig, run_detection,
                            simulate_observations)
from finrank.errors import ConfigError, FinrankError
from finrank.schedule import (Algorithm, DetectionSchedule, PriorSpec, RateConfig,
                              build_schedule, prior_mass_bounds, rate_bound)
from finrank.seeding import spawn_seed
from finrank.simulate import BasisSpec, ProcessSpec, true_covariance
from finrank.smooth import SmootherConfig, estimate_cov

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
TIMESTAMP_KEY = "generated_at"


@dataclass
class ScheduleParams:
    algorithm: Algorithm = Algorithm.SOME_BASIS
    p: float = 3.0
    q: float | None = None
    c_n: float = 25.0
    j_max: int = 5

    def __post_init__(self):
        try:
            self.algorithm = Algorithm(self.algorithm)
        except ValueError:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}") from None

    def to_dict(self) -> dict:
        return {"algorithm": self.algorithm.value, "p": self.p, "q": self.q,
                "c_n": self.c_n, "j_max": self.j_max}


@dataclass
class ExperimentConfig:
    process: ProcessSpec
    observation: ObservationConfig = field(default_factory=ObservationConfig)
    smoother: SmootherConfig = field(default_factory=SmootherConfig)
    rate: RateConfig = field(default_factory=RateConfig)
    schedule: ScheduleParams = field(default_factory=ScheduleParams)
    basis: BasisSpec | None = None
    prior: PriorSpec | None = None
    replicates: int = 1
    master_seed: int = 0
    output_dir: str | None = None
    oracle_cov: bool = False

    def __post_init__(self):
        if int(self.replicates) != self.replicates or self.replicates < 1:
            raise ConfigError("replicates must be a positive integer")
        if self.schedule.algorithm is Algorithm.GIVEN_BASIS and self.basis is None:
            raise ConfigError("GIVEN_BASIS experiments need a basis")

    def build_schedule(self) -> DetectionSchedule:
        s = self.schedule
        return build_schedule(s.algorithm, s.p, s.q, s.c_n, s.j_max, self.rate)

    def prior_spec(self) -> PriorSpec:
        return self.prior or PriorSpec.default_for(self.schedule.algorithm)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "process": self.process.to_dict(),
            "observation": self.observation.to_dict(),
            "smoother": self.smoother.to_dict(),
            "rate": self.rate.to_dict(),
            "schedule": self.schedule.to_dict(),
            "basis": None if self.basis is None else self.basis.to_dict(),
            "prior": None if self.prior is None else self.prior.to_dict(),
            "replicates": self.replicates,
            "master_seed": self.master_seed,
            "output_dir": self.output_dir,
            "oracle_cov": self.oracle_cov,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        version = d.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "process" not in d:
            raise ConfigError("config needs a 'process' section")
        try:
            return cls(
                process=ProcessSpec.from_dict(d["process"]),
                observation=ObservationConfig.from_dict(d.get("observation") or {}),
                smoother=SmootherConfig.from_dict(d.get("smoother") or {}),
                rate=RateConfig.from_dict(d.get("rate") or {}),
                schedule=ScheduleParams(**(d.get("schedule") or {})),
                basis=BasisSpec.from_dict(d["basis"]) if d.get("basis") else None,
                prior=PriorSpec.from_dict(d["prior"]) if d.get("prior") else None,
                replicates=d.get("replicates", 1),
                master_seed=d.get("master_seed", 0),
                output_dir=d.get("output_dir"),
                oracle_cov=bool(d.get("oracle_cov", False)),
            )
        except TypeError as exc:
            raise ConfigError(f"malformed config: {exc}") from exc

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def calibrate_c_R(process: ProcessSpec, obs_cfg: ObservationConfig, smoother: SmootherConfig,
                  rate: RateConfig, n_values: tuple[int, ...], seed: int) -> float:
    """Smallest ``c_R`` for which ``R(n)`` bounds the observed sup-error at every pilot ``n``.

    A single pilot data set of ``max(n_values)`` curves is simulated; the
    estimate at each ``n`` uses its prefix.
    """
    obs = simulate_observations(process, obs_cfg, max(n_values), seed)
    unit = RateConfig(**{**rate.to_dict(), "c_R": 1.0, "constant_delta": None})
    ratios = []
    for n in n_values:
        est = estimate_cov(obs.prefix(n), smoother.resolve(n, obs_cfg.r))
        err = np.max(np.abs(est.values - true_covariance(process, est.grid)))
        ratios.append(err / rate_bound(n, unit))
    return float(max(ratios))


def _replicate(cfg_dict: dict, index: int):
    cfg = ExperimentConfig.from_dict(cfg_dict)
    sched = cfg.build_schedule()
    seed = spawn_seed(cfg.master_seed, index)
    try:
        traj = run_detection(cfg.process, cfg.observation, cfg.smoother, sched,
                             basis=cfg.basis, seed=seed, oracle_cov=cfg.oracle_cov)
        return index, traj, None
    except FinrankError as exc:
        return index, None, f"{type(exc).__name__}: {exc}"


def stable_after_first(traj: DecisionTrajectory) -> bool:
    """Whether the final decision, once first declared, is never abandoned."""
    labels = [traj.label(e.decision) for e in traj.entries]
    first = labels.index(labels[-1])
    return all(lab == labels[-1] for lab in labels[first:])


@dataclass
class ExperimentSummary:
    data: dict
    trajectories: dict[int, DecisionTrajectory]

    def final_frequency(self, label: str) -> float:
        return self.data["final_histogram"].get(label, 0.0)

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)


def _aggregate(cfg: ExperimentConfig, sched: DetectionSchedule,
               trajectories: dict[int, DecisionTrajectory], failed: list[dict]) -> dict:
    done = [trajectories[i] for i in sorted(trajectories)]
    updates = []
    for j, n in enumerate(sched.update_times):
        row = {"j": j + 1, "n": n, "k": sched.thresholds[j], "delta": sched.deltas[j]}
        if done:
            counts = Counter(t.label(t.entries[j].decision) for t in done)
            row["frequencies"] = {lab: c / len(done) for lab, c in sorted(counts.items())}
            errs = [t.entries[j].sup_error for t in done if t.entries[j].sup_error is not None]
            row["mean_sup_error"] = float(np.mean(errs)) if errs else None
            row["max_sup_error"] = float(np.max(errs)) if errs else None
        else:
            row.update(frequencies={}, mean_sup_error=None, max_sup_error=None)
        updates.append(row)

    final_counts = Counter(t.label(t.final) for t in done)
    stability = {}
    for lab in sorted(final_counts):
        group = [t for t in done if t.label(t.final) == lab]
        stability[lab] = sum(stable_after_first(t) for t in group) / len(group)
    prior = prior_mass_bounds(cfg.prior_spec(), sched)
    return {
        "schema_version": SCHEMA_VERSION,
        TIMESTAMP_KEY: datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "config": cfg.to_dict(),
        "schedule": sched.to_dict(),
        "prior_bounds": prior.to_dict(),
        "replicates": {"requested": cfg.replicates, "completed": len(done), "failed": failed},
        "updates": updates,
        "final_histogram": {lab: c / len(done) for lab, c in sorted(final_counts.items())},
        "final_stability": stability,
    }


def default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("FINRANK_JOBS", "1")))
    except ValueError:
        raise ConfigError("FINRANK_JOBS must be an integer") from None


def run_experiment(cfg: ExperimentConfig, jobs: int | None = None,
                   write: bool = True) -> ExperimentSummary:
    """Run ``cfg.replicates`` independent detections and aggregate them.

    When ``write`` is set and ``cfg.output_dir`` is given, writes
    ``summary.json``, ``replicates/replicate_XXXX.csv``,
    ``decision_frequencies.csv`` and ``estimator_error.csv``.
    """
    sched = cfg.build_schedule()
    jobs = default_jobs() if jobs is None else max(1, int(jobs))
    cfg_dict = cfg.to_dict()
    results = []
    if jobs == 1 or cfg.replicates == 1:
        results = [_replicate(cfg_dict, i) for i in range(cfg.replicates)]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_replicate, [cfg_dict] * cfg.replicates, range(cfg.replicates)))

    trajectories, failed = {}, []
    for index, traj, err in sorted(results, key=lambda x: x[0]):
        if traj is None:
            log.warning("replicate %d failed: %s", index, err)
            failed.append({"index": index, "error": err})
        else:
            trajectories[index] = traj
    summary = ExperimentSummary(_aggregate(cfg, sched, trajectories, failed), trajectories)
    if write and cfg.output_dir:
        write_outputs(summary, Path(cfg.output_dir))
    return summary


def write_outputs(summary: ExperimentSummary, out: Path) -> None:
    rep_dir = out / "replicates"
    rep_dir.mkdir(parents=True, exist_ok=True)
    for index, traj in summary.trajectories.items():
        (rep_dir / f"replicate_{index:04d}.csv").write_text(traj.to_csv())

    with open(out / "decision_frequencies.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["j", "n", "decision", "frequency"])
        for row in summary.data["updates"]:
            for lab, f in row["frequencies"].items():
                w.writerow([row["j"], row["n"], lab, repr(f)])
    with open(out / "estimator_error.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["j", "n", "delta", "mean_sup_error", "max_sup_error"])
        for row in summary.data["updates"]:
            w.writerow([row["j"], row["n"], repr(row["delta"]),
                        "" if row["mean_sup_error"] is None else repr(row["mean_sup_error"]),
                        "" if row["max_sup_error"] is None else repr(row["max_sup_error"])])
    (out / "summary.json").write_text(summary.to_json() + "\n")


def rate_slope(n_values, errors) -> float:
    """Least-squares slope of ``log error`` against ``log(n / log n)``."""
    x = np.log([n / math.log(n) for n in n_values])
    return float(np.polyfit(x, np.log(errors), 1)[0])
