"""Estimation-rate bounds, detection thresholds and update schedules.

The threshold at sample size ``n`` is ``delta_n = (1 + eps) * c_R * eta(n) * tau(n)``
with ``eta(n) = log n`` and ``tau(n)`` the almost-sure sup-norm rate of the
covariance estimator. Update times ``n(j)`` grow like ``c_n * j^p``; the prior
mass bounds certify numerically that the chosen growth makes the prior mass
of the "undetectable" sets summable over ``j``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from finrank.errors import ConfigError, ConstraintViolation
from finrank.smooth import default_bandwidths


class Regime(str, Enum):
    DENSE = "DENSE"
    GENERAL = "GENERAL"


class Algorithm(str, Enum):
    SOME_BASIS = "SOME_BASIS"
    GIVEN_BASIS = "GIVEN_BASIS"


class PriorKind(str, Enum):
    EXP_ORDERSTAT = "EXP_ORDERSTAT"
    GAUSS_SQUARE = "GAUSS_SQUARE"


@dataclass(frozen=True)
class RateConfig:
    """Parameters of ``delta_n``.

    For the GENERAL regime the bandwidths follow :func:`default_bandwidths`
    for ``r`` points per curve unless ``h_mu``/``h_G`` are pinned.
    ``constant_delta`` replaces ``delta_n`` by a constant; it exists only to
    exhibit a non-summable (degenerate) schedule.
    """

    regime: Regime = Regime.DENSE
    epsilon: float = 0.1
    c_R: float = 1.0
    eta: str = "LOG"
    r: int | None = None
    c_h: float = 1.0
    h_mu: float | None = None
    h_G: float | None = None
    constant_delta: float | None = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "regime", Regime(self.regime))
        except ValueError:
            raise ConfigError(f"unknown regime {self.regime!r}") from None
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if not self.c_R > 0:
            raise ConfigError(f"c_R must be positive, got {self.c_R}")
        if self.eta != "LOG":
            raise ConfigError(f"unsupported eta {self.eta!r}; only LOG is available")
        if self.regime is Regime.GENERAL and self.r is None and (self.h_mu is None or self.h_G is None):
            raise ConfigError("GENERAL regime needs r or pinned bandwidths")
        if self.constant_delta is not None and not self.constant_delta > 0:
            raise ConfigError("constant_delta must be positive")

    def to_dict(self) -> dict:
        return {"regime": self.regime.value, "epsilon": self.epsilon, "c_R": self.c_R,
                "eta": self.eta, "r": self.r, "c_h": self.c_h, "h_mu": self.h_mu,
                "h_G": self.h_G, "constant_delta": self.constant_delta}

    @classmethod
    def from_dict(cls, d: dict) -> "RateConfig":
        return cls(**d)


def rate_tau(n: int, cfg: RateConfig) -> float:
    """Almost-sure sup-norm rate of the covariance estimator at sample size ``n``."""
    if n < 2:
        raise ValueError(f"rate needs n >= 2, got {n}")
    ln = math.log(n) / n
    if cfg.regime is Regime.DENSE:
        return math.sqrt(ln)
    h_mu, h_G = cfg.h_mu, cfg.h_G
    if h_mu is None or h_G is None:
        d_mu, d_G = default_bandwidths(n, cfg.r, cfg.c_h)
        h_mu, h_G = h_mu or d_mu, h_G or d_G
    r = cfg.r if cfg.r is not None else math.inf
    cov_term = math.sqrt(h_G**-4 * ln * (h_G**4 + h_G**3 / r + h_G**2 / r**2))
    mean_term = math.sqrt(h_mu**-2 * ln * (h_mu**2 + h_mu / r))
    return cov_term + mean_term + h_mu**2 + h_G**2


def rate_bound(n: int, cfg: RateConfig) -> float:
    """``R(n) = c_R * log(n) * tau(n)``."""
    return cfg.c_R * math.log(n) * rate_tau(n, cfg)


def delta_n(n: int, cfg: RateConfig) -> float:
    if n < 3:
        raise ValueError(f"delta_n needs n >= 3, got {n}")
    if cfg.constant_delta is not None:
        return float(cfg.constant_delta)
    return (1.0 + cfg.epsilon) * rate_bound(n, cfg)


@dataclass
class DetectionSchedule:
    algorithm: Algorithm
    p: float
    q: float | None
    c_n: float
    j_max: int
    update_times: list[int]
    thresholds: list[int]
    deltas: list[float]

    def __post_init__(self):
        self.algorithm = Algorithm(self.algorithm)
        self.validate()

    def validate(self) -> None:
        J = self.j_max
        if not (len(self.update_times) == len(self.thresholds) == len(self.deltas) == J):
            raise ConfigError("schedule sequences must all have length j_max")
        n = np.asarray(self.update_times)
        if np.any(np.diff(n) <= 0):
            raise ConfigError("update times must be strictly increasing")
        if np.any(np.diff(self.thresholds) < 0) or min(self.thresholds) < 0:
            raise ConfigError("thresholds must be nonnegative and nondecreasing")
        if np.any(np.diff(self.deltas) > 0) or min(self.deltas) <= 0:
            raise ConfigError("deltas must be positive and nonincreasing")

    def to_dict(self) -> dict:
        return {"algorithm": self.algorithm.value, "p": self.p, "q": self.q, "c_n": self.c_n,
                "j_max": self.j_max, "update_times": list(map(int, self.update_times)),
                "thresholds": list(map(int, self.thresholds)),
                "deltas": list(map(float, self.deltas))}

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionSchedule":
        return cls(**d)


def _check_constraints(alg: Algorithm, p: float, q: float | None) -> None:
    if alg is Algorithm.SOME_BASIS:
        if not p > 2:
            raise ConstraintViolation(
                f"SOME_BASIS requires p > 2 (got p={p}): with n(j) ~ j^p the bound "
                "2*delta_n(j)*lambda_1 ~ j^(-p/2) is summable only for p > 2"
            )
        return
    if q is None or q < 0:
        raise ConstraintViolation(f"GIVEN_BASIS requires q >= 0 (got q={q})")
    if not p > 2 * q + 1:
        raise ConstraintViolation(
            f"GIVEN_BASIS requires p > 2q + 1 (got p={p}, q={q}): with k(j) ~ j^q and "
            "n(j) ~ j^p the bound delta_n(j)^2 / lambda_(k(j)+4) is summable only for p > 2q + 1"
        )


def _ceil(x: float) -> int:
    # guard against j**p landing a hair above an exact integer
    return math.ceil(x * (1.0 - 1e-12))


def build_schedule(alg: Algorithm, p: float, q: float | None, c_n: float, j_max: int,
                   cfg: RateConfig) -> DetectionSchedule:
    """Update times ``n(j) = max(3, ceil(c_n j^p))`` (bumped to be strictly increasing).

    Thresholds are ``k(j) = j`` for SOME_BASIS and ``ceil(j^q)`` for GIVEN_BASIS.
    """
    alg = Algorithm(alg)
    _check_constraints(alg, p, q)
    if c_n <= 0:
        raise ConfigError("c_n must be positive")
    if int(j_max) != j_max or j_max < 1:
        raise ConfigError("j_max must be a positive integer")
    if alg is Algorithm.SOME_BASIS:
        q = None
    update_times, thresholds = [], []
    for j in range(1, int(j_max) + 1):
        n = max(3, _ceil(c_n * j**p))
        if update_times and n <= update_times[-1]:
            n = update_times[-1] + 1
        update_times.append(n)
        thresholds.append(j if alg is Algorithm.SOME_BASIS else _ceil(j**q))
    deltas = [delta_n(n, cfg) for n in update_times]
    if any(b > a for a, b in zip(deltas, deltas[1:])):
        raise ConfigError(
            "delta_n increases between update times (log-rate peak near n = e^3); "
            "raise c_n so that n(1) lies past the peak"
        )
    return DetectionSchedule(alg, p, q, c_n, int(j_max), update_times, thresholds, deltas)


@dataclass(frozen=True)
class PriorSpec:
    """Prior used to certify a schedule.

    EXP_ORDERSTAT: exponential rates ``lambda_l``; only ``lambda1`` enters the
    bound, and summability of the rates is checked from ``rule`` (GEOMETRIC
    with ratio ``rate_param`` in (0, 1), or P_SERIES ``lambda1 * l^-rate_param``
    with ``rate_param > 1``). GAUSS_SQUARE: coefficient variances
    ``lambda_j = j^-(2 + rho)``.
    """

    kind: PriorKind
    lambda1: float = 1.0
    rule: str = "GEOMETRIC"
    rate_param: float = 0.5
    rho: float = 0.1

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", PriorKind(self.kind))
        except ValueError:
            raise ConfigError(f"unknown prior kind {self.kind!r}") from None
        if self.kind is PriorKind.EXP_ORDERSTAT:
            if not self.lambda1 > 0:
                raise ConfigError("lambda1 must be positive")
            if self.rule == "GEOMETRIC":
                if not 0 < self.rate_param < 1:
                    raise ConfigError("geometric rates need ratio in (0, 1) to be summable")
            elif self.rule == "P_SERIES":
                if not self.rate_param > 1:
                    raise ConfigError("p-series rates need exponent > 1 to be summable")
            else:
                raise ConfigError(f"unknown rate rule {self.rule!r}")
        elif not self.rho > 0:
            raise ConfigError("rho must be positive")

    def lam(self, l):
        l = np.asarray(l, dtype=float)
        if self.kind is PriorKind.GAUSS_SQUARE:
            return l ** -(2.0 + self.rho)
        if self.rule == "GEOMETRIC":
            return self.lambda1 * self.rate_param ** (l - 1)
        return self.lambda1 * l ** -self.rate_param

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "lambda1": self.lambda1, "rule": self.rule,
                "rate_param": self.rate_param, "rho": self.rho}

    @classmethod
    def from_dict(cls, d: dict) -> "PriorSpec":
        return cls(**d)

    @classmethod
    def default_for(cls, alg: Algorithm) -> "PriorSpec":
        if Algorithm(alg) is Algorithm.SOME_BASIS:
            return cls(PriorKind.EXP_ORDERSTAT)
        return cls(PriorKind.GAUSS_SQUARE)


@dataclass
class PriorBoundReport:
    bounds: list[float]
    exponent: float
    verdict: str
    fit_range: tuple[int, int] = field(default=(1, 1))

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"

    def to_dict(self) -> dict:
        return {"bounds": [float(b) for b in self.bounds], "exponent": float(self.exponent),
                "verdict": self.verdict, "fit_range": list(self.fit_range)}


def prior_mass_bounds(prior: PriorSpec, sched: DetectionSchedule) -> PriorBoundReport:
    """Upper bounds on the prior mass of the undetectable set at each update.

    EXP_ORDERSTAT: ``min(1, 2 delta_n(j) lambda_1)``.
    GAUSS_SQUARE: ``1 - exp(-4 delta_n(j)^2 / lambda_(k(j)+4))``.

    The verdict fits ``log bound_j = c - s log j`` by least squares over the
    second half of the schedule and passes when ``s > 1``.
    """
    expected = {PriorKind.EXP_ORDERSTAT: Algorithm.SOME_BASIS,
                PriorKind.GAUSS_SQUARE: Algorithm.GIVEN_BASIS}[prior.kind]
    if sched.algorithm is not expected:
        raise ConfigError(f"{prior.kind.value} prior does not apply to {sched.algorithm.value} schedules")
    delta = np.asarray(sched.deltas, dtype=float)
    if prior.kind is PriorKind.EXP_ORDERSTAT:
        bounds = np.minimum(1.0, 2.0 * delta * prior.lambda1)
    else:
        lam = prior.lam(np.asarray(sched.thresholds) + 4)
        bounds = -np.expm1(-4.0 * delta**2 / lam)

    J = sched.j_max
    lo = max(1, (J + 1) // 2)
    j = np.arange(lo, J + 1)
    b = bounds[lo - 1:]
    pos = b > 0
    if not pos.any():
        return PriorBoundReport(bounds.tolist(), math.inf, "PASS", (lo, J))
    if pos.sum() < 2:
        return PriorBoundReport(bounds.tolist(), float("nan"), "FAIL", (lo, J))
    slope = np.polyfit(np.log(j[pos]), np.log(b[pos]), 1)[0]
    exponent = -float(slope) + 0.0
    return PriorBoundReport(bounds.tolist(), exponent, "PASS" if exponent > 1 else "FAIL", (lo, J))
