"""Pooled local-polynomial estimation of the mean and covariance functions.

The mean is a local linear fit to all pooled observations ``(T_ml, Y_ml)``.
The raw covariance surface ``G(s, t) = E X(s) X(t)`` is a local linear fit in
two variables to the products ``Y_mk * Y_ml`` over pairs of *distinct*
observations of the same curve, so measurement-error variance never reaches
the diagonal. Within a curve the observations are sorted by design point and
the pair ``k < l`` is placed at ``(s, t) = (T_ml, T_mk)``, so every pair lies
in the triangle ``0 <= t <= s <= 1``; the surface is fitted there and
reflected. The covariance estimate is ``G(s, t) - mu(s) mu(t)``.

All pooled sums needed by the normal equations are additive over curves,
which is what :class:`MeanAccumulator` and :class:`CovarianceAccumulator`
exploit: they can be grown with new curves without refitting from scratch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from finrank.errors import ConfigError, EstimationError
from finrank.simulate import Curve, ObservationSet

DEFAULT_GRID_SIZE = 101
MAX_DOUBLINGS = 6
DET_TOL = 1e-10
_CHUNK_ROWS = 4096


class KernelKind(str, Enum):
    EPANECHNIKOV = "EPANECHNIKOV"
    QUARTIC = "QUARTIC"


def kernel_eval(kind: KernelKind, u):
    """Compactly supported smoothing kernel on [-1, 1]; accepts scalars or arrays."""
    kind = KernelKind(kind)
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) < 1.0
    one_minus = np.where(inside, 1.0 - u * u, 0.0)
    if kind is KernelKind.EPANECHNIKOV:
        out = 0.75 * one_minus
    else:
        out = (15.0 / 16.0) * one_minus**2
    return float(out) if out.ndim == 0 else out


def default_bandwidths(n: int, r: int, c_h: float = 1.0) -> tuple[float, float]:
    """``max(1/r, c_h (log n / n)^(1/4))`` clamped to ``(0, 0.5]``, for both smoothers."""
    if n < 2 or r < 2:
        raise ValueError("default bandwidths need n >= 2 and r >= 2")
    h = max(1.0 / r, c_h * (math.log(n) / n) ** 0.25)
    h = min(h, 0.5)
    return h, h


def output_grid(m: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, m)


def trapezoid_weights(m: int) -> np.ndarray:
    w = np.full(m, 1.0 / (m - 1))
    w[[0, -1]] *= 0.5
    return w


@dataclass(frozen=True)
class SmootherConfig:
    """Kernel, bandwidths and output grid for the smoothers.

    ``h_mu``/``h_G`` set to ``None`` are chosen per sample size by
    :func:`default_bandwidths` (scaled by ``c_h``); see :meth:`resolve`.
    """

    kernel: KernelKind = KernelKind.EPANECHNIKOV
    h_mu: float | None = None
    h_G: float | None = None
    grid_size: int = DEFAULT_GRID_SIZE
    c_h: float = 1.0

    def __post_init__(self):
        try:
            object.__setattr__(self, "kernel", KernelKind(self.kernel))
        except ValueError:
            raise ConfigError(f"unknown kernel {self.kernel!r}") from None
        for name in ("h_mu", "h_G"):
            h = getattr(self, name)
            if h is not None and not 0.0 < h <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1], got {h}")
        if int(self.grid_size) != self.grid_size or self.grid_size < 3:
            raise ConfigError("grid_size must be an integer >= 3")
        if self.c_h <= 0:
            raise ConfigError("c_h must be positive")

    @property
    def pinned(self) -> bool:
        return self.h_mu is not None and self.h_G is not None

    def resolve(self, n: int, r: int) -> "SmootherConfig":
        """Fill unset bandwidths with the defaults for ``n`` curves of ``r`` points."""
        if self.pinned:
            return self
        h_mu, h_G = default_bandwidths(n, r, self.c_h)
        return replace(self, h_mu=self.h_mu or h_mu, h_G=self.h_G or h_G)

    def to_dict(self) -> dict:
        return {"kernel": self.kernel.value, "h_mu": self.h_mu, "h_G": self.h_G,
                "grid_size": self.grid_size, "c_h": self.c_h}

    @classmethod
    def from_dict(cls, d: dict) -> "SmootherConfig":
        return cls(**d)


@dataclass
class GridFunction:
    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.grid.shape != self.values.shape:
            raise ConfigError("grid and values must have the same length")

    def to_dict(self) -> dict:
        return {"grid": self.grid.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "GridFunction":
        return cls(d["grid"], d["values"])


@dataclass
class GridKernel:
    """Symmetric kernel sampled on an equispaced grid of [0, 1] with trapezoid weights."""

    grid: np.ndarray
    values: np.ndarray
    quadrature_weights: np.ndarray | None = None

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        m = self.grid.size
        if self.values.shape != (m, m):
            raise ConfigError(f"kernel values must be {m}x{m}, got {self.values.shape}")
        if self.quadrature_weights is None:
            self.quadrature_weights = trapezoid_weights(m)
        self.quadrature_weights = np.asarray(self.quadrature_weights, dtype=float)
        if self.quadrature_weights.shape != (m,):
            raise ConfigError("quadrature_weights must match the grid")

    @classmethod
    def from_function(cls, fn, m: int = DEFAULT_GRID_SIZE) -> "GridKernel":
        grid = output_grid(m)
        return cls(grid, fn(grid[:, None], grid[None, :]))

    def hs_norm(self) -> float:
        w = self.quadrature_weights
        return float(np.sqrt(np.einsum("i,ij,j->", w, self.values**2, w)))

    def to_dict(self) -> dict:
        return {"grid": self.grid.tolist(), "values": self.values.tolist(),
                "quadrature_weights": self.quadrature_weights.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "GridKernel":
        return cls(d["grid"], d["values"], d.get("quadrature_weights"))


def _sorted_arrays(curves: list[Curve]):
    """Concatenate curves sorted within each curve; returns t, y, curve lengths."""
    ts, ys, lens = [], [], []
    for c in curves:
        order = np.argsort(c.design_points, kind="stable")
        ts.append(c.design_points[order])
        ys.append(c.values[order])
        lens.append(c.design_points.size)
    return np.concatenate(ts), np.concatenate(ys), np.asarray(lens)


def _chunks(curves: list[Curve]):
    start = 0
    while start < len(curves):
        rows, stop = 0, start
        while stop < len(curves) and (rows == 0 or rows + curves[stop].design_points.size <= _CHUNK_ROWS):
            rows += curves[stop].design_points.size
            stop += 1
        yield curves[start:stop]
        start = stop


class MeanAccumulator:
    """Pooled local-linear sums for the mean, additive over curves."""

    _KEYS = ("count", "S0", "S1", "S2", "R0", "R1")

    def __init__(self, grid: np.ndarray, h: float, kernel: KernelKind = KernelKind.EPANECHNIKOV):
        self.grid = np.asarray(grid, dtype=float)
        self.h = float(h)
        self.kernel = KernelKind(kernel)
        self.curves: list[Curve] = []
        self._sums = {0: self._zeros()}

    def _zeros(self):
        return {k: np.zeros(self.grid.size) for k in self._KEYS}

    def _accumulate(self, sums, curves, h):
        for chunk in _chunks(curves):
            t, y, lens = _sorted_arrays(chunk)
            w = np.repeat(1.0 / lens, lens)
            d = t[:, None] - self.grid[None, :]
            k = kernel_eval(self.kernel, d / h)
            sums["count"] += (k > 0).sum(axis=0)
            kw = k * w[:, None]
            kwd = kw * d
            sums["S0"] += kw.sum(axis=0)
            sums["S1"] += kwd.sum(axis=0)
            sums["S2"] += (kwd * d).sum(axis=0)
            sums["R0"] += y @ kw
            sums["R1"] += y @ kwd

    def add(self, curves: list[Curve]) -> None:
        curves = list(curves)
        self._accumulate(self._sums[0], curves, self.h)
        self.curves.extend(curves)
        self._sums = {0: self._sums[0]}

    def _level(self, level: int):
        if level not in self._sums:
            sums = self._zeros()
            self._accumulate(sums, self.curves, self.h * 2**level)
            self._sums[level] = sums
        return self._sums[level]

    def estimate(self) -> np.ndarray:
        out = np.full(self.grid.size, np.nan)
        todo = np.ones(self.grid.size, dtype=bool)
        for level in range(MAX_DOUBLINGS + 1):
            h = self.h * 2**level
            s = self._level(level)
            det = s["S0"] * s["S2"] - s["S1"] ** 2
            with np.errstate(divide="ignore", invalid="ignore"):
                scaled = det / (s["S0"] ** 2 * h**2)
                ok = todo & (s["count"] >= 2) & (scaled > DET_TOL)
                out[ok] = ((s["S2"] * s["R0"] - s["S1"] * s["R1"]) / det)[ok]
            todo &= ~ok
            if not todo.any():
                return out
        raise EstimationError(
            "EMPTY_WINDOW",
            f"mean smoother has fewer than 2 distinct design points near "
            f"s={self.grid[np.argmax(todo)]:.4g} even at bandwidth {self.h * 2**MAX_DOUBLINGS:.4g}",
        )


def _det3(a, b, c, d, e, f, g, h, i):
    return a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)


def _segment_exclusive_cumsum(x: np.ndarray, lens: np.ndarray) -> np.ndarray:
    """Row ``l`` of the result is the sum of rows ``k < l`` of the same curve."""
    cs = np.cumsum(x, axis=0) - x
    starts = np.repeat(np.cumsum(lens) - lens, lens)
    return cs - cs[starts]


class CovarianceAccumulator:
    """Pooled local-linear sums for the raw covariance surface, additive over curves.

    Matrices are indexed ``[s, t]`` on ``grid x grid``; only the lower
    triangle ``t <= s`` is meaningful.
    """

    _KEYS = ("S00", "S10", "S01", "S20", "S11", "S02", "R0", "R1", "R2")

    def __init__(self, grid: np.ndarray, h: float, kernel: KernelKind = KernelKind.EPANECHNIKOV):
        self.grid = np.asarray(grid, dtype=float)
        self.h = float(h)
        self.kernel = KernelKind(kernel)
        self.curves: list[Curve] = []
        self._sums = {0: self._zeros()}

    def _zeros(self):
        m = self.grid.size
        return {k: np.zeros((m, m)) for k in self._KEYS}

    def _accumulate(self, sums, curves, h):
        for chunk in _chunks(curves):
            t, y, lens = _sorted_arrays(chunk)
            pair_w = np.repeat(2.0 / (lens * (lens - 1.0)), lens)[:, None]
            d = t[:, None] - self.grid[None, :]
            k = kernel_eval(self.kernel, d / h)
            kd = k * d
            ky = k * y[:, None]
            kdy = kd * y[:, None]

            # later point of the pair: s side; earlier points (exclusive cumsum): t side
            b0 = _segment_exclusive_cumsum(k, lens)
            b1 = _segment_exclusive_cumsum(kd, lens)
            b2 = _segment_exclusive_cumsum(kd * d, lens)
            by0 = _segment_exclusive_cumsum(ky, lens)
            by1 = _segment_exclusive_cumsum(kdy, lens)
            a0 = k * pair_w
            a1 = kd * pair_w

            sums["S00"] += a0.T @ b0
            sums["S10"] += a1.T @ b0
            sums["S01"] += a0.T @ b1
            sums["S20"] += (a1 * d).T @ b0
            sums["S11"] += a1.T @ b1
            sums["S02"] += a0.T @ b2
            sums["R0"] += (ky * pair_w).T @ by0
            sums["R1"] += (kdy * pair_w).T @ by0
            sums["R2"] += (ky * pair_w).T @ by1

    def add(self, curves: list[Curve]) -> None:
        curves = list(curves)
        for c in curves:
            if c.design_points.size < 2:
                raise ConfigError("covariance estimation needs r >= 2 on every curve")
        self._accumulate(self._sums[0], curves, self.h)
        self.curves.extend(curves)
        self._sums = {0: self._sums[0]}

    def _level(self, level: int):
        if level not in self._sums:
            sums = self._zeros()
            self._accumulate(sums, self.curves, self.h * 2**level)
            self._sums[level] = sums
        return self._sums[level]

    def _pair_count(self, i: int, j: int) -> int:
        """Number of pairs in the widest window around grid point ``(i, j)``."""
        h = self.h * 2**MAX_DOUBLINGS
        total = 0
        for c in self.curves:
            t = np.sort(c.design_points)
            near_s = np.abs(t - self.grid[i]) < h
            near_t = np.abs(t - self.grid[j]) < h
            total += int(np.sum(np.triu(np.outer(near_t, near_s), 1)))
        return total

    def estimate(self) -> np.ndarray:
        """Fitted raw surface on the lower triangle (upper triangle left as NaN)."""
        m = self.grid.size
        out = np.full((m, m), np.nan)
        todo = np.tril(np.ones((m, m), dtype=bool))
        for level in range(MAX_DOUBLINGS + 1):
            h = self.h * 2**level
            s = self._level(level)
            det = _det3(s["S00"], s["S10"], s["S01"],
                        s["S10"], s["S20"], s["S11"],
                        s["S01"], s["S11"], s["S02"])
            with np.errstate(divide="ignore", invalid="ignore"):
                scaled = det / (s["S00"] ** 3 * h**4)
                # fewer than 3 support pairs always gives a (numerically) zero determinant
                ok = todo & (scaled > DET_TOL)
                num = _det3(s["R0"], s["S10"], s["S01"],
                            s["R1"], s["S20"], s["S11"],
                            s["R2"], s["S11"], s["S02"])
                out[ok] = (num / det)[ok]
            todo &= ~ok
            if not todo.any():
                return out
        i, j = np.argwhere(todo)[0]
        code = "SINGULAR_SYSTEM" if self._pair_count(i, j) >= 3 else "EMPTY_WINDOW"
        raise EstimationError(
            code,
            f"covariance smoother cannot fit at (s, t)=({self.grid[i]:.4g}, {self.grid[j]:.4g}) "
            f"even at bandwidth {self.h * 2**MAX_DOUBLINGS:.4g}",
        )


def _check_config(cfg: SmootherConfig):
    if cfg.h_mu is None or cfg.h_G is None:
        raise ConfigError("bandwidths must be set; use SmootherConfig.resolve(n, r)")


def estimate_mean(obs: ObservationSet, cfg: SmootherConfig) -> GridFunction:
    """Local linear estimate of the mean function on the output grid."""
    _check_config(cfg)
    grid = output_grid(cfg.grid_size)
    acc = MeanAccumulator(grid, cfg.h_mu, cfg.kernel)
    acc.add(obs.curves)
    return GridFunction(grid, acc.estimate())


def assemble_covariance(raw: np.ndarray, mean: np.ndarray) -> np.ndarray:
    """Subtract ``mu(s) mu(t)`` on the lower triangle and reflect."""
    c = np.tril(raw - np.outer(mean, mean))
    return c + np.tril(c, -1).T


def estimate_cov(obs: ObservationSet, cfg: SmootherConfig,
                 mean: GridFunction | None = None) -> GridKernel:
    """Covariance estimate ``G_hat - mu_hat (x) mu_hat`` as a symmetric :class:`GridKernel`.

    ``mean`` may be supplied to avoid refitting the mean.
    """
    _check_config(cfg)
    grid = output_grid(cfg.grid_size)
    if mean is None:
        mean = estimate_mean(obs, cfg)
    acc = CovarianceAccumulator(grid, cfg.h_G, cfg.kernel)
    acc.add(obs.curves)
    return GridKernel(grid, assemble_covariance(acc.estimate(), mean.values))
