"""Command-line front end.

Exit codes: 0 success, 1 configuration/usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from finrank.detect import ObservationConfig, run_detection, run_fixed_boundary
from finrank.errors import ConfigError, FinrankError
from finrank.experiment import ExperimentConfig, run_experiment
from finrank.schedule import PriorSpec, RateConfig, build_schedule, prior_mass_bounds
from finrank.simulate import ObservationSet, ProcessSpec, observe, simulate_paths
from finrank.smooth import GridKernel, SmootherConfig, estimate_cov, estimate_mean
from finrank.spectral import eigendecompose, tail_profile


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _read_json(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_config(args) -> ExperimentConfig:
    if args.config:
        return ExperimentConfig.load(args.config)
    return ExperimentConfig(process=ProcessSpec(kind="BROWNIAN"))


def cmd_simulate(args) -> None:
    cfg = _load_config(args)
    r = args.r if args.r is not None else cfg.observation.r
    noise_sd = args.noise_sd if args.noise_sd is not None else cfg.observation.noise_sd
    paths = simulate_paths(cfg.process, args.n, args.seed)
    obs = observe(paths, r, noise_sd, args.seed + 1, cfg.observation.noise)
    _write(json.dumps(obs.to_dict()) + "\n", args.out)


def cmd_estimate(args) -> None:
    obs = ObservationSet.from_dict(_read_json(args.obs))
    r = min(c.design_points.size for c in obs.curves)
    cfg = SmootherConfig(kernel=args.kernel, h_mu=args.h_mu, h_G=args.h_g,
                         grid_size=args.grid_size, c_h=args.c_h).resolve(obs.n, r)
    mean = estimate_mean(obs, cfg)
    cov = estimate_cov(obs, cfg, mean=mean)
    doc = {"smoother": cfg.to_dict(), "mean": mean.to_dict(), "covariance": cov.to_dict()}
    _write(json.dumps(doc) + "\n", args.out)


def cmd_spectrum(args) -> None:
    doc = _read_json(args.kernel_file)
    kernel = GridKernel.from_dict(doc.get("covariance", doc))
    d = eigendecompose(kernel)
    tails = tail_profile(d)
    print(f"{'l':>4} {'eigenvalue':>14} {'tail_after_l':>14}")
    print(f"{0:>4} {'':>14} {tails[0]:>14.6g}")
    for l in range(min(args.top, d.eigenvalues.size)):
        print(f"{l + 1:>4} {d.eigenvalues[l]:>14.6g} {tails[l + 1]:>14.6g}")


def cmd_schedule(args) -> None:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
        sched, prior = cfg.build_schedule(), cfg.prior_spec()
    else:
        alg = {"some-basis": "SOME_BASIS", "given-basis": "GIVEN_BASIS"}[args.alg]
        rate = RateConfig(epsilon=args.epsilon, c_R=args.c_r)
        sched = build_schedule(alg, args.p, args.q, args.c_n, args.j_max, rate)
        if args.prior == "exp":
            prior = PriorSpec("EXP_ORDERSTAT", lambda1=args.lambda1)
        elif args.prior == "gauss":
            prior = PriorSpec("GAUSS_SQUARE", rho=args.rho)
        else:
            prior = PriorSpec.default_for(alg)
    report = prior_mass_bounds(prior, sched)
    if args.json:
        print(json.dumps({"schedule": sched.to_dict(), "prior_bounds": report.to_dict()}, indent=2))
        return
    print(f"{'j':>4} {'n(j)':>10} {'k(j)':>6} {'delta':>12} {'bound':>12}")
    for j in range(sched.j_max):
        print(f"{j + 1:>4} {sched.update_times[j]:>10} {sched.thresholds[j]:>6} "
              f"{sched.deltas[j]:>12.6g} {report.bounds[j]:>12.6g}")
    print(f"verdict: {report.verdict} (fitted exponent {report.exponent:.4g} "
          f"over j={report.fit_range[0]}..{report.fit_range[1]})")


def cmd_detect(args) -> None:
    cfg = _load_config(args)
    sched = cfg.build_schedule()
    seed = cfg.master_seed if args.seed is None else args.seed
    oracle = args.oracle_cov or cfg.oracle_cov
    kw = dict(basis=cfg.basis, seed=seed, oracle_cov=oracle)
    if args.q_cap is not None:
        traj = run_fixed_boundary(cfg.process, cfg.observation, cfg.smoother, sched, args.q_cap, **kw)
    else:
        traj = run_detection(cfg.process, cfg.observation, cfg.smoother, sched, **kw)
    _write(traj.to_csv(), args.out)
    if args.json:
        _write(traj.to_json() + "\n", args.json)


def cmd_experiment(args) -> None:
    cfg = ExperimentConfig.load(args.config)
    if args.oracle_cov:
        cfg.oracle_cov = True
    if args.output_dir:
        cfg.output_dir = args.output_dir
    if args.replicates is not None:
        cfg.replicates = args.replicates
    summary = run_experiment(cfg, jobs=args.jobs)
    print(json.dumps({"final_histogram": summary.data["final_histogram"],
                      "final_stability": summary.data["final_stability"],
                      "replicates": summary.data["replicates"]}, indent=2))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="finrank", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate noisy discrete observations")
    p.add_argument("--config")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--r", type=int)
    p.add_argument("--noise-sd", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate mean and covariance from observations")
    p.add_argument("--obs", required=True)
    p.add_argument("--kernel", default="EPANECHNIKOV", choices=["EPANECHNIKOV", "QUARTIC"])
    p.add_argument("--h-mu", type=float)
    p.add_argument("--h-g", type=float)
    p.add_argument("--grid-size", type=int, default=101)
    p.add_argument("--c-h", type=float, default=1.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("spectrum", help="print leading eigenvalues and spectral tails")
    p.add_argument("kernel_file")
    p.add_argument("--top", type=int, default=10)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("schedule", help="print an update schedule and its prior certificate")
    p.add_argument("--config")
    p.add_argument("--alg", choices=["some-basis", "given-basis"], default="some-basis")
    p.add_argument("--p", type=float, default=3.0)
    p.add_argument("--q", type=float)
    p.add_argument("--c-n", type=float, default=25.0)
    p.add_argument("--j-max", type=int, default=5)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--c-r", type=float, default=1.0)
    p.add_argument("--prior", choices=["exp", "gauss"])
    p.add_argument("--lambda1", type=float, default=1.0)
    p.add_argument("--rho", type=float, default=0.1)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("detect", help="run one detection and write its trajectory CSV")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--oracle-cov", action="store_true")
    p.add_argument("--q-cap", type=int)
    p.add_argument("--out")
    p.add_argument("--json")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("experiment", help="run replicated detections and summarise")
    p.add_argument("--config", required=True)
    p.add_argument("--jobs", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--oracle-cov", action="store_true")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_experiment)
    return parser


def cli_main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (FinrankError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
