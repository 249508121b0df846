"""Sample-path simulation and noisy discrete observation of random curves.

Curves live on [0, 1]. Paths are generated on a fine equispaced grid and then
observed at ``r`` uniform random design points per curve with additive noise::

    Y_ml = X_m(T_ml) + U_ml,   m = 1..n,  l = 1..r.

Every curve draws from its own generator seeded by ``spawn_seed(seed, m)``, so
the first ``n`` curves of a larger sample are identical to a sample of size
``n`` generated with the same seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

from finrank.errors import ConfigError
from finrank.seeding import child_rng

DEFAULT_FINE_GRID = 1001


class BasisFamily(str, Enum):
    COSINE = "COSINE"
    FOURIER = "FOURIER"


class ProcessKind(str, Enum):
    FINITE_RANK = "FINITE_RANK"
    BROWNIAN = "BROWNIAN"
    OU = "OU"
    GEOMETRIC_BM = "GEOMETRIC_BM"


class NoiseKind(str, Enum):
    GAUSSIAN = "GAUSSIAN"
    UNIFORM_CENTERED = "UNIFORM_CENTERED"


@dataclass(frozen=True)
class BasisSpec:
    """An orthonormal system on [0, 1] truncated to its first ``size`` elements."""

    family: BasisFamily
    size: int

    def __post_init__(self):
        try:
            object.__setattr__(self, "family", BasisFamily(self.family))
        except ValueError:
            raise ConfigError(f"unknown basis family {self.family!r}") from None
        if int(self.size) != self.size or self.size <= 0:
            raise ConfigError(f"basis size must be a positive integer, got {self.size!r}")
        object.__setattr__(self, "size", int(self.size))

    def to_dict(self) -> dict:
        return {"family": self.family.value, "size": self.size}

    @classmethod
    def from_dict(cls, d: dict) -> "BasisSpec":
        return cls(family=d["family"], size=d["size"])


def make_basis(spec: BasisSpec, grid: Sequence[float]) -> np.ndarray:
    """Evaluate the basis on ``grid``; row ``l`` holds the (l+1)-th element.

    COSINE: ``1, sqrt(2) cos(pi t), sqrt(2) cos(2 pi t), ...``.
    FOURIER: ``1, sqrt(2) cos(2 pi t), sqrt(2) sin(2 pi t), sqrt(2) cos(4 pi t), ...``.
    """
    t = np.asarray(grid, dtype=float)
    if t.ndim != 1:
        raise ValueError("grid must be one-dimensional")
    if t.size and (t.min() < 0.0 or t.max() > 1.0):
        raise ValueError("grid points must lie in [0, 1]")
    if t.size > 1 and np.any(np.diff(t) <= 0):
        raise ValueError("grid must be strictly increasing")

    out = np.empty((spec.size, t.size))
    out[0] = 1.0
    for l in range(1, spec.size):
        if spec.family is BasisFamily.COSINE:
            out[l] = np.sqrt(2.0) * np.cos(l * np.pi * t)
        else:
            freq = (l + 1) // 2
            trig = np.cos if l % 2 == 1 else np.sin
            out[l] = np.sqrt(2.0) * trig(2.0 * np.pi * freq * t)
    return out


@dataclass
class ProcessSpec:
    """Description of a second-order process on [0, 1].

    Only the fields relevant to ``kind`` are used. For ``FINITE_RANK`` the
    paths are ``mean + sum_l xi_l psi_l`` with independent ``xi_l ~ N(0, a_l)``
    where ``a_l`` are the ``score_variances``; ``mean`` is given by its values
    on the fine grid (``None`` means zero). ``OU`` starts in its stationary
    law (mean zero). ``GEOMETRIC_BM`` is ``initial * exp((drift - vol^2/2) t + vol W_t)``.
    """

    kind: ProcessKind
    basis: BasisSpec | None = None
    score_variances: list[float] | None = None
    mean: list[float] | None = None
    theta: float = 1.0
    stationary_variance: float = 1.0
    drift: float = 0.0
    volatility: float = 1.0
    initial: float = 1.0
    fine_grid_size: int = DEFAULT_FINE_GRID

    def __post_init__(self):
        try:
            self.kind = ProcessKind(self.kind)
        except ValueError:
            raise ConfigError(f"unknown process kind {self.kind!r}") from None
        if isinstance(self.basis, dict):
            self.basis = BasisSpec.from_dict(self.basis)
        self.validate()

    def validate(self) -> None:
        if int(self.fine_grid_size) != self.fine_grid_size or self.fine_grid_size < 2:
            raise ConfigError("fine_grid_size must be an integer >= 2")
        if self.kind is ProcessKind.FINITE_RANK:
            if self.basis is None or not self.score_variances:
                raise ConfigError("FINITE_RANK needs a basis and at least one score variance")
            v = np.asarray(self.score_variances, dtype=float)
            if np.any(v < 0) or not np.all(np.isfinite(v)):
                raise ConfigError("score variances must be finite and nonnegative")
            if v.size > self.basis.size:
                raise ConfigError("more score variances than basis elements")
            if self.mean is not None and len(self.mean) != self.fine_grid_size:
                raise ConfigError("mean must be given on the fine grid")
        elif self.kind is ProcessKind.OU:
            if self.theta <= 0 or self.stationary_variance <= 0:
                raise ConfigError("OU needs theta > 0 and stationary_variance > 0")
        elif self.kind is ProcessKind.GEOMETRIC_BM:
            if self.volatility < 0 or self.initial <= 0:
                raise ConfigError("GEOMETRIC_BM needs volatility >= 0 and initial > 0")

    @property
    def rank(self) -> int | None:
        """Number of nonzero KL terms, or ``None`` for infinite-rank processes."""
        if self.kind is not ProcessKind.FINITE_RANK:
            return None
        return int(np.count_nonzero(self.score_variances))

    def fine_grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.fine_grid_size)

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "fine_grid_size": self.fine_grid_size}
        if self.kind is ProcessKind.FINITE_RANK:
            d.update(
                basis=self.basis.to_dict(),
                score_variances=[float(v) for v in self.score_variances],
                mean=None if self.mean is None else [float(v) for v in self.mean],
            )
        elif self.kind is ProcessKind.OU:
            d.update(theta=self.theta, stationary_variance=self.stationary_variance)
        elif self.kind is ProcessKind.GEOMETRIC_BM:
            d.update(drift=self.drift, volatility=self.volatility, initial=self.initial)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProcessSpec":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown ProcessSpec fields: {sorted(extra)}")
        return cls(**d)


def true_mean(spec: ProcessSpec, grid: np.ndarray) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if spec.kind is ProcessKind.FINITE_RANK:
        if spec.mean is None:
            return np.zeros_like(grid)
        return np.interp(grid, spec.fine_grid(), np.asarray(spec.mean, dtype=float))
    if spec.kind is ProcessKind.GEOMETRIC_BM:
        return spec.initial * np.exp(spec.drift * grid)
    return np.zeros_like(grid)


def true_covariance(spec: ProcessSpec, grid: np.ndarray) -> np.ndarray:
    """Covariance kernel ``C(s, t)`` evaluated on ``grid x grid``."""
    s = np.asarray(grid, dtype=float)[:, None]
    t = np.asarray(grid, dtype=float)[None, :]
    if spec.kind is ProcessKind.FINITE_RANK:
        psi = make_basis(spec.basis, grid)[: len(spec.score_variances)]
        return (psi.T * np.asarray(spec.score_variances, dtype=float)) @ psi
    if spec.kind is ProcessKind.BROWNIAN:
        return np.minimum(s, t)
    if spec.kind is ProcessKind.OU:
        return spec.stationary_variance * np.exp(-spec.theta * np.abs(s - t))
    vol2 = spec.volatility**2
    return spec.initial**2 * np.exp(spec.drift * (s + t)) * np.expm1(vol2 * np.minimum(s, t))


def _simulate_one(spec: ProcessSpec, grid: np.ndarray, rng: np.random.Generator,
                  psi: np.ndarray | None, mean: np.ndarray | None) -> np.ndarray:
    m = grid.size
    if spec.kind is ProcessKind.FINITE_RANK:
        sd = np.sqrt(np.asarray(spec.score_variances, dtype=float))
        xi = rng.standard_normal(sd.size) * sd
        return mean + xi @ psi
    dt = np.diff(grid)
    if spec.kind is ProcessKind.BROWNIAN:
        incr = rng.standard_normal(m - 1) * np.sqrt(dt)
        return np.concatenate(([0.0], np.cumsum(incr)))
    if spec.kind is ProcessKind.OU:
        # exact AR(1) transition on the uniform grid
        h = grid[1] - grid[0]
        decay = np.exp(-spec.theta * h)
        z = rng.standard_normal(m)
        z[0] *= np.sqrt(spec.stationary_variance)
        z[1:] *= np.sqrt(spec.stationary_variance * -np.expm1(-2.0 * spec.theta * h))
        return lfilter([1.0], [1.0, -decay], z)
    incr = rng.standard_normal(m - 1) * np.sqrt(dt)
    w = np.concatenate(([0.0], np.cumsum(incr)))
    vol = spec.volatility
    return spec.initial * np.exp((spec.drift - 0.5 * vol**2) * grid + vol * w)


def simulate_paths(spec: ProcessSpec, n: int, seed: int) -> np.ndarray:
    """Simulate ``n`` independent paths on the fine grid.

    Returns an ``(n, fine_grid_size)`` array; row ``m`` depends only on
    ``(spec, seed, m)``.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    spec.validate()
    grid = spec.fine_grid()
    psi = mean = None
    if spec.kind is ProcessKind.FINITE_RANK:
        psi = make_basis(spec.basis, grid)[: len(spec.score_variances)]
        mean = true_mean(spec, grid)
    out = np.empty((int(n), grid.size))
    for i in range(int(n)):
        out[i] = _simulate_one(spec, grid, child_rng(seed, i), psi, mean)
    return out


@dataclass
class Curve:
    design_points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.design_points = np.asarray(self.design_points, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.design_points.shape != self.values.shape or self.design_points.ndim != 1:
            raise ConfigError("design_points and values must be 1-D of equal length")
        if self.design_points.size < 2:
            raise ConfigError("every curve needs r >= 2 observations")
        if np.any(self.design_points < 0) or np.any(self.design_points > 1):
            raise ConfigError("design points must lie in [0, 1]")


@dataclass
class ObservationSet:
    curves: list[Curve]
    noise_sd: float = 0.0
    seed: int = 0
    noise: NoiseKind = field(default=NoiseKind.GAUSSIAN)

    @property
    def n(self) -> int:
        return len(self.curves)

    def prefix(self, n: int) -> "ObservationSet":
        """The first ``n`` curves."""
        return ObservationSet(self.curves[:n], self.noise_sd, self.seed, self.noise)

    def to_dict(self) -> dict:
        return {
            "curves": [
                {"design_points": c.design_points.tolist(), "values": c.values.tolist()}
                for c in self.curves
            ],
            "noise_sd": float(self.noise_sd),
            "seed": int(self.seed),
            "noise": NoiseKind(self.noise).value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObservationSet":
        try:
            curves = [Curve(c["design_points"], c["values"]) for c in d["curves"]]
            return cls(curves, float(d.get("noise_sd", 0.0)), int(d.get("seed", 0)),
                       NoiseKind(d.get("noise", "GAUSSIAN")))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed ObservationSet: {exc}") from exc


def observe(paths: np.ndarray, r: int, noise_sd: float, seed: int,
            noise: NoiseKind = NoiseKind.GAUSSIAN) -> ObservationSet:
    """Observe each path at ``r`` i.i.d. uniform design points with additive noise.

    Path values off the fine grid are obtained by linear interpolation. The
    noise has mean zero and standard deviation ``noise_sd``.
    """
    if int(r) != r or r < 2:
        raise ConfigError(
            f"r must be an integer >= 2 (got {r!r}): with a single observation per "
            "curve there is no information on the covariance"
        )
    if noise_sd < 0:
        raise ConfigError("noise_sd must be nonnegative")
    noise = NoiseKind(noise)
    paths = np.atleast_2d(np.asarray(paths, dtype=float))
    grid = np.linspace(0.0, 1.0, paths.shape[1])
    curves = []
    for i, path in enumerate(paths):
        rng = child_rng(seed, i)
        t = rng.uniform(0.0, 1.0, size=int(r))
        if noise is NoiseKind.GAUSSIAN:
            u = rng.standard_normal(int(r)) * noise_sd
        else:
            half = noise_sd * np.sqrt(3.0)
            u = rng.uniform(-half, half, size=int(r))
        curves.append(Curve(t, np.interp(t, grid, path) + u))
    return ObservationSet(curves, float(noise_sd), int(seed), noise)
