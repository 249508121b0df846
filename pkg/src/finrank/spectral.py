"""Spectral truncation and fixed-basis projection of grid kernels.

Inner products are trapezoid quadratures on the kernel's grid. Eigenvalues
are ranked by absolute value so that estimated (possibly indefinite) kernels
are truncated by singular value, which is what best rank-j approximation in
Hilbert-Schmidt norm requires.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from finrank.errors import AsymmetricInputError
from finrank.simulate import BasisSpec, make_basis
from finrank.smooth import GridKernel

SYMMETRY_TOL = 1e-10
DEFAULT_L_MAX = 400


class IndexOverflow(Enum):
    """Projection index beyond the available coefficients."""

    OVERFLOW = "OVERFLOW"

    def __repr__(self) -> str:
        return "OVERFLOW"

    __str__ = __repr__


OVERFLOW = IndexOverflow.OVERFLOW


@dataclass
class SpectralDecomposition:
    """Eigenpairs of a grid kernel; ``eigenfunctions[:, l]`` pairs with ``eigenvalues[l]``."""

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    quadrature_weights: np.ndarray

    def hs_norm(self) -> float:
        return float(np.sqrt(np.sum(self.eigenvalues**2)))

    def to_dict(self) -> dict:
        return {
            "eigenvalues": self.eigenvalues.tolist(),
            "eigenfunctions": self.eigenfunctions.tolist(),
            "quadrature_weights": self.quadrature_weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpectralDecomposition":
        return cls(np.asarray(d["eigenvalues"], dtype=float),
                   np.asarray(d["eigenfunctions"], dtype=float),
                   np.asarray(d["quadrature_weights"], dtype=float))


def eigendecompose(k: GridKernel) -> SpectralDecomposition:
    """Nystrom eigendecomposition with the kernel's quadrature weights.

    Solves the symmetric problem for ``D^(1/2) K D^(1/2)`` and maps the
    eigenvectors back with ``D^(-1/2)``, so eigenfunctions are orthonormal in
    the weighted inner product. Sorted by ``|eigenvalue|`` descending, ties by
    ascending original index.
    """
    values = k.values
    asym = np.max(np.abs(values - values.T)) if values.size else 0.0
    if asym > SYMMETRY_TOL:
        raise AsymmetricInputError(f"kernel is not symmetric (max deviation {asym:.3g})")
    sw = np.sqrt(k.quadrature_weights)
    evals, evecs = np.linalg.eigh(sw[:, None] * values * sw[None, :])
    order = np.argsort(-np.abs(evals), kind="stable")
    return SpectralDecomposition(evals[order], evecs[:, order] / sw[:, None],
                                 k.quadrature_weights.copy())


def tail_profile(d: SpectralDecomposition) -> np.ndarray:
    """``tails[j] = tail_hs(d, j)`` for ``j = 0..len(eigenvalues)``."""
    sq = d.eigenvalues**2
    tails = np.concatenate((np.cumsum(sq[::-1])[::-1], [0.0]))
    return np.sqrt(tails)


def tail_hs(d: SpectralDecomposition, j: int) -> float:
    """Hilbert-Schmidt distance from the kernel to its ``j``-term spectral truncation."""
    if j < 0:
        raise ValueError("j must be nonnegative")
    return float(np.sqrt(np.sum(d.eigenvalues[j:] ** 2)))


def trunc_index_i(d: SpectralDecomposition, delta: float) -> int:
    """Least ``j >= 0`` whose spectral truncation is within ``delta`` (strictly)."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    return int(np.argmax(tail_profile(d) < delta))


def truncate(d: SpectralDecomposition, j: int) -> np.ndarray:
    """Grid values of the rank-``j`` spectral truncation."""
    phi = d.eigenfunctions[:, :j]
    return (phi * d.eigenvalues[:j]) @ phi.T


def square_order_index(row: int, col: int) -> int:
    """Position of ``psi_row (x) psi_col`` in the square ordering (1-based).

    Block ``m = max(row, col)`` lists ``(1, m), (2, m), ..., (m, m), (m, m-1), ..., (m, 1)``.
    """
    if row < 1 or col < 1:
        raise ValueError("row and col must be >= 1")
    m = max(row, col)
    return (m - 1) ** 2 + (row if col == m else 2 * m - col)


def square_order_pair(index: int) -> tuple[int, int]:
    """Inverse of :func:`square_order_index`."""
    if index < 1:
        raise ValueError("index must be >= 1")
    m = math.isqrt(index - 1) + 1
    offset = index - (m - 1) ** 2
    return (offset, m) if offset <= m else (m, 2 * m - offset)


@dataclass
class OperatorBasisCoeffs:
    """Coefficients of a kernel against square-ordered tensor products of a basis."""

    basis: BasisSpec
    coeffs: np.ndarray
    hs_norm_sq: float

    @property
    def l_max(self) -> int:
        return self.coeffs.size

    def residuals(self) -> np.ndarray:
        """``residuals[j] = ||S - P_j S||`` for ``j = 0..l_max`` via the norm identity."""
        captured = np.concatenate(([0.0], np.cumsum(self.coeffs**2)))
        return np.sqrt(np.maximum(self.hs_norm_sq - captured, 0.0))

    def to_dict(self) -> dict:
        return {"basis": self.basis.to_dict(), "coeffs": self.coeffs.tolist(),
                "hs_norm_sq": float(self.hs_norm_sq)}

    @classmethod
    def from_dict(cls, d: dict) -> "OperatorBasisCoeffs":
        return cls(BasisSpec.from_dict(d["basis"]), np.asarray(d["coeffs"], dtype=float),
                   float(d["hs_norm_sq"]))


def tensor_element(basis_values: np.ndarray, index: int) -> np.ndarray:
    """Grid values of the ``index``-th square-ordered element ``psi_row(s) psi_col(t)``."""
    row, col = square_order_pair(index)
    return np.outer(basis_values[row - 1], basis_values[col - 1])


def basis_coefficients(k: GridKernel, basis: BasisSpec,
                       l_max: int = DEFAULT_L_MAX) -> OperatorBasisCoeffs:
    """Quadrature coefficients ``<K, Psi_l>`` for ``l = 1..l_max``.

    Only the first ``ceil(sqrt(l_max))`` elements of ``basis`` are used, so
    ``basis.size`` is ignored beyond providing the family.
    """
    if l_max < 1:
        raise ValueError("l_max must be >= 1")
    size = math.isqrt(l_max - 1) + 1
    psi = make_basis(BasisSpec(basis.family, size), k.grid)
    w = k.quadrature_weights
    pw = psi * w
    gram = pw @ k.values @ pw.T
    pairs = [square_order_pair(i) for i in range(1, l_max + 1)]
    rows = np.array([p[0] - 1 for p in pairs])
    cols = np.array([p[1] - 1 for p in pairs])
    hs_sq = float(np.einsum("i,ij,j->", w, k.values**2, w))
    return OperatorBasisCoeffs(basis, gram[rows, cols], hs_sq)


def trunc_index_iota(c: OperatorBasisCoeffs, delta: float) -> int | IndexOverflow:
    """Least ``j >= 0`` with ``||S - P_j S|| < delta``, or ``OVERFLOW`` past ``l_max``."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    hits = np.flatnonzero(c.residuals() < delta)
    return int(hits[0]) if hits.size else OVERFLOW
