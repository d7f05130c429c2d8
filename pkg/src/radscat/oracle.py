"""
Dense-matrix ground truth on small grids.

Every first-order operator (momentum, dilation generator, radial momentum)
is built on the periodic odd extension of the half line, where p is an exact
Fourier multiplier and x is the odd sawtooth.  Odd and even functions form
invariant subspaces of x p + p x and of p^2, so the half-line operators are
the odd parity blocks of these full matrices.  The momentum itself maps odd
to even, which is why the even block is exposed as well.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.fft as sfft

from .grid import (RadialGrid, WaveFunction, extended_coordinate, extended_even,
                   extended_wavenumbers)

DENSE_CAP = 512


class OracleError(ValueError):
    pass


def dense_dimension(grid: RadialGrid) -> int:
    """Interior nodes carried by the dense operators (the wall node is fixed at zero)."""
    return grid.n_points - 1


def within_cap(grid: RadialGrid) -> bool:
    return dense_dimension(grid) <= DENSE_CAP


def _check_cap(grid: RadialGrid):
    if not within_cap(grid):
        raise OracleError(
            f"dense oracle limited to dimension {DENSE_CAP}, grid gives {dense_dimension(grid)}")


@dataclass(frozen=True)
class SpectralData:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residual: float

    def export_csv(self, path) -> None:
        np.savetxt(Path(path), self.eigenvalues, header="eigenvalue", comments="",
                   fmt="%.17e")


@dataclass(eq=False)
class DenseOperator:
    """Dense matrix acting on interior node values u_1..u_{n-1}."""

    matrix: np.ndarray
    hermitian: bool
    provenance: str
    grid: Optional[RadialGrid] = None

    def __post_init__(self):
        m = np.asarray(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise OracleError("operator matrix must be square")
        if self.hermitian:
            scale = max(np.linalg.norm(m, 2), 1e-300)
            err = np.max(np.abs(m - m.conj().T))
            if err > 1e-12 * scale:
                raise OracleError(f"{self.provenance}: hermitian defect {err:.3e}")
        self.matrix = m

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def spectral(self) -> SpectralData:
        if not self.hermitian:
            raise OracleError("spectral data requires a hermitian operator")
        w, U = np.linalg.eigh(self.matrix)
        recon = (U * w) @ U.conj().T
        res = np.linalg.norm(self.matrix - recon, 2) / max(np.linalg.norm(self.matrix, 2), 1e-300)
        return SpectralData(w, U, float(res))

    def apply(self, u: WaveFunction) -> WaveFunction:
        out = np.zeros(u.grid.n_points, dtype=complex)
        out[:-1] = self.matrix @ u.values[:-1]
        return WaveFunction(u.grid, out)


# ---------------------------------------------------------------------------
# Parity-block construction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParityBlocks:
    """Odd/even restrictions of full periodic operators."""

    grid: RadialGrid
    odd_index: np.ndarray
    odd_mirror: np.ndarray
    even_index: np.ndarray
    even_mirror: np.ndarray
    even_weight: np.ndarray

    def odd_odd(self, full):
        i, mi = self.odd_index, self.odd_mirror
        return 0.5 * (full[np.ix_(i, i)] - full[np.ix_(i, mi)]
                      - full[np.ix_(mi, i)] + full[np.ix_(mi, mi)])

    def _even_cols(self, full, rows):
        # columns in the even basis: (e_j + e_{-j})/sqrt 2, or e_0 / e_N alone
        c = full[:, self.even_index] + full[:, self.even_mirror]
        c = c * self.even_weight
        return c[rows]

    def even_even(self, full):
        cols = self._even_cols(full, slice(None))
        rows = (cols[self.even_index] + cols[self.even_mirror]) * self.even_weight[:, None]
        return rows

    def even_odd(self, full):
        """Block mapping odd coordinates to even coordinates."""
        i, mi = self.odd_index, self.odd_mirror
        cols = (full[:, i] - full[:, mi]) / np.sqrt(2.0)
        return (cols[self.even_index] + cols[self.even_mirror]) * self.even_weight[:, None]

    def odd_even(self, full):
        cols = self._even_cols(full, slice(None))
        return (cols[self.odd_index] - cols[self.odd_mirror]) / np.sqrt(2.0)


def parity_blocks(grid: RadialGrid) -> ParityBlocks:
    n = grid.n_points
    M = 2 * n
    j = np.arange(1, n)
    even_index = np.concatenate([[0], j, [n]])
    even_mirror = np.concatenate([[0], M - j, [n]])
    # e_0 and e_N are their own mirrors: weight 1/2 undoes the doubling
    even_weight = np.concatenate([[0.5], np.full(n - 1, 1 / np.sqrt(2.0)), [0.5]])
    return ParityBlocks(grid, j, M - j, even_index, even_mirror, even_weight)


def full_momentum(grid: RadialGrid) -> np.ndarray:
    k = extended_wavenumbers(grid)
    col = sfft.ifft(k)
    return sla.circulant(col)


def _full_dilation(grid: RadialGrid) -> np.ndarray:
    P = full_momentum(grid)
    x = extended_coordinate(grid)
    return 0.5 * (x[:, None] * P + P * x[None, :])


def dense_laplacian(grid: RadialGrid) -> DenseOperator:
    """-d^2/dr^2 in the Dirichlet sine basis (odd block of p^2)."""
    _check_cap(grid)
    n = grid.n_points
    j = np.arange(1, n)
    S = np.sqrt(2.0 / n) * np.sin(np.pi * np.outer(j, j) / n)
    k2 = grid.wavenumbers ** 2
    L = (S * k2) @ S
    return DenseOperator(0.5 * (L + L.T), True, "-Delta_r (sine spectral)", grid)


def dense_hamiltonian(V: Callable, grid: RadialGrid) -> DenseOperator:
    """H = -Delta_r + V(r) on the interior nodes."""
    L = dense_laplacian(grid).matrix
    v = np.asarray(V(grid.nodes[:-1]), dtype=float)
    return DenseOperator(L + np.diag(v), True, "H = -Delta_r + V", grid)


def dense_dilation(grid: RadialGrid) -> DenseOperator:
    """A = -i(r d/dr + 1/2) as the odd block of (x p + p x)/2."""
    _check_cap(grid)
    blocks = parity_blocks(grid)
    A = blocks.odd_odd(_full_dilation(grid))
    return DenseOperator(0.5 * (A + A.conj().T), True, "A dilation (odd block)", grid)


def dense_dilation_even(grid: RadialGrid) -> DenseOperator:
    _check_cap(grid)
    blocks = parity_blocks(grid)
    A = blocks.even_even(_full_dilation(grid))
    return DenseOperator(0.5 * (A + A.conj().T), True, "A dilation (even block)", grid)


def dense_momentum_blocks(grid: RadialGrid):
    """(p: odd -> even, p: even -> odd) as matrices."""
    _check_cap(grid)
    blocks = parity_blocks(grid)
    P = full_momentum(grid)
    return blocks.even_odd(P), blocks.odd_even(P)


def dense_gamma(grid: RadialGrid, profile: Callable) -> DenseOperator:
    """gamma = (g p + p g)/2 with an even extension of g.

    With g even, gamma sends odd extensions to even ones, so the matrix maps
    interior values to the values of gamma u on the positive half.  It is
    hermitian on the interior when g vanishes near the wall r = 0.
    """
    _check_cap(grid)
    blocks = parity_blocks(grid)
    P = full_momentum(grid)
    g = extended_even(grid, profile)
    G = 0.5 * (g[:, None] * P + P * g[None, :])
    i, mi = blocks.odd_index, blocks.odd_mirror
    m = G[np.ix_(i, i)] - G[np.ix_(i, mi)]
    return DenseOperator(0.5 * (m + m.conj().T), True, "gamma radial momentum", grid)


def exact_function(op: DenseOperator, f: Callable) -> DenseOperator:
    """f(op) by eigendecomposition."""
    sd = op.spectral
    vals = np.asarray(f(sd.eigenvalues))
    m = (sd.eigenvectors * vals) @ sd.eigenvectors.conj().T
    herm = bool(np.all(np.isreal(vals)))
    if herm:
        m = 0.5 * (m + m.conj().T)
    return DenseOperator(m, herm, f"f({op.provenance})", op.grid)


def exact_propagate(H: DenseOperator, u: WaveFunction, t: float) -> WaveFunction:
    """e^{-iHt} u."""
    sd = H.spectral
    c = sd.eigenvectors.conj().T @ u.values[:-1]
    out = np.zeros(u.grid.n_points, dtype=complex)
    out[:-1] = sd.eigenvectors @ (np.exp(-1j * sd.eigenvalues * t) * c)
    return WaveFunction(u.grid, out)


# ---------------------------------------------------------------------------
# Regularity conditions on the potential
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VConditionReport:
    sigma: float
    sup_values: tuple      # sup of <r>^s |V|, <r>^s |r V'|, <r>^s |(r d)^2 V|
    tail_slopes: tuple     # log-log slope of each weighted quantity on the tail
    passed: bool


def v_condition_report(V: Callable, grid: RadialGrid, sigma: float,
                       slope_tol: float = 0.05) -> VConditionReport:
    """Measure the short-range conditions on V with declared decay sigma > 1.

    A weighted quantity counts as bounded when it does not grow on the outer
    half of the grid (log-log slope <= slope_tol).
    """
    if sigma <= 1:
        return VConditionReport(sigma, (np.inf,) * 3, (np.inf,) * 3, False)
    y = np.linspace(np.log(grid.spacing), np.log(grid.r_max), 4000)
    r = np.exp(y)
    v = np.asarray(V(r), dtype=float)
    # r d/dr = d/dy in log coordinates
    dv = np.gradient(v, y, edge_order=2)
    d2v = np.gradient(dv, y, edge_order=2)
    w = (1.0 + r ** 2) ** (sigma / 2)
    quantities = [w * np.abs(v), w * np.abs(dv), w * np.abs(d2v)]
    tail = r >= 0.5 * grid.r_max
    sups, slopes = [], []
    for q in quantities:
        sups.append(float(np.max(q)))
        qt = q[tail]
        if np.max(qt) < 1e-14 * max(np.max(q), 1e-300) or np.max(qt) < 1e-300:
            slopes.append(-np.inf)
            continue
        qt = np.maximum(qt, 1e-300)
        slopes.append(float(np.polyfit(np.log(r[tail]), np.log(qt), 1)[0]))
    passed = all(np.isfinite(s) for s in sups) and all(s <= slope_tol for s in slopes)
    return VConditionReport(sigma, tuple(sups), tuple(slopes), passed)
