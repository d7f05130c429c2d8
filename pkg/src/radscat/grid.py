"""
Radial grid
===========

Uniform half-line discretization of radial functions on R^3 through the
reduction u = r * psi.  On u the Laplacian becomes -d^2/dr^2 with a Dirichlet
condition at r = 0, and the Dirichlet sine basis sin(k pi r / r_max)
diagonalizes it.

Conventions
-----------
- Nodes are r_j = j * h for j = 1..n, h = r_max / n.  The last node sits on
  the wall r = r_max and always carries zero amplitude in the sine basis.
- The constant 4 pi of the spherical measure is dropped everywhere, so
  ||psi||^2 = sum_j |u_j|^2 h.
- Operators that need a first derivative use the odd extension of u to the
  periodic interval [-r_max, r_max) and an FFT; see ``odd_extension``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as sfft


MIN_POINTS = 16


class GridError(ValueError):
    """Raised for unusable grids or mismatched grids."""


class UnderResolvedWarning(UserWarning):
    """Top of the sine spectrum carries a noticeable fraction of the norm."""


@dataclass(frozen=True)
class RadialGrid:
    n_points: int
    r_max: float

    @property
    def spacing(self) -> float:
        return self.r_max / self.n_points

    @property
    def nodes(self) -> np.ndarray:
        return self.spacing * np.arange(1, self.n_points + 1)

    @property
    def wavenumbers(self) -> np.ndarray:
        """Sine-basis wavenumbers k_j = j pi / r_max, j = 1..n-1."""
        return np.pi * np.arange(1, self.n_points) / self.r_max

    @property
    def k_max(self) -> float:
        return np.pi / self.spacing

    def zeros(self) -> "WaveFunction":
        return WaveFunction(self, np.zeros(self.n_points, dtype=complex))

    def wavefunction(self, values) -> "WaveFunction":
        return WaveFunction(self, values)

    def from_function(self, fn) -> "WaveFunction":
        """Sample ``fn(r)`` on the nodes; the wall value is forced to zero."""
        return WaveFunction(self, fn(self.nodes))


def make_grid(n_points: int, r_max: float) -> RadialGrid:
    """Build a uniform radial grid with ``n_points`` nodes up to ``r_max``."""
    if int(n_points) != n_points or n_points < MIN_POINTS:
        raise GridError(f"n_points must be an integer >= {MIN_POINTS}, got {n_points}")
    if not np.isfinite(r_max) or r_max <= 0:
        raise GridError(f"r_max must be positive, got {r_max}")
    return RadialGrid(int(n_points), float(r_max))


@dataclass(frozen=True)
class WaveFunction:
    """Complex samples u_j of u = r psi on a radial grid."""

    grid: RadialGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=complex)
        if v.shape != (self.grid.n_points,):
            raise GridError(
                f"expected {self.grid.n_points} values, got shape {v.shape}")
        v[-1] = 0.0
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def r(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def psi(self) -> np.ndarray:
        """The three-dimensional profile psi = u / r on the nodes."""
        return self.values / self.grid.nodes

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.grid.spacing))

    def mass(self) -> float:
        return self.norm() ** 2

    def normalized(self, mass: float = 1.0) -> "WaveFunction":
        n = self.norm()
        if n == 0:
            raise ValueError("cannot normalize the zero function")
        return WaveFunction(self.grid, self.values * (np.sqrt(mass) / n))

    def _check(self, other: "WaveFunction"):
        if other.grid != self.grid:
            raise GridError("wavefunctions live on different grids")

    def __add__(self, other):
        self._check(other)
        return WaveFunction(self.grid, self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return WaveFunction(self.grid, self.values - other.values)

    def __mul__(self, scalar):
        return WaveFunction(self.grid, self.values * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return WaveFunction(self.grid, -self.values)


@dataclass(frozen=True)
class SpectralCoefficients:
    grid: RadialGrid
    coefficients: np.ndarray

    @property
    def wavenumbers(self) -> np.ndarray:
        return self.grid.wavenumbers


def inner_product(u: WaveFunction, v: WaveFunction) -> complex:
    """Discrete L^2 pairing sum_j u_j conj(v_j) h, conjugate-linear in ``v``."""
    if u.grid != v.grid:
        raise GridError("inner product of wavefunctions on different grids")
    return complex(np.sum(u.values * np.conj(v.values)) * u.grid.spacing)


def expectation(u: WaveFunction, Au: WaveFunction) -> complex:
    """<A>_u = (A u, u) given the already computed A u."""
    return inner_product(Au, u)


# ---------------------------------------------------------------------------
# Sine transform and spectral Laplacian
# ---------------------------------------------------------------------------

def sine_coefficients(values: np.ndarray, spacing: float) -> np.ndarray:
    """Orthonormal sine coefficients of interior samples (array level)."""
    return np.sqrt(spacing) * sfft.dst(values[..., :-1], type=1, norm="ortho")


def sine_synthesis(coefficients: np.ndarray, spacing: float) -> np.ndarray:
    c = sfft.idst(coefficients, type=1, norm="ortho") / np.sqrt(spacing)
    pad = np.zeros(c.shape[:-1] + (1,), dtype=c.dtype)
    return np.concatenate([c, pad], axis=-1)


def sine_transform(u: WaveFunction) -> SpectralCoefficients:
    """Coefficients against sqrt(2/r_max) sin(k pi r / r_max); Parseval holds."""
    return SpectralCoefficients(u.grid, sine_coefficients(u.values, u.grid.spacing))


def inverse_sine_transform(c: SpectralCoefficients) -> WaveFunction:
    return WaveFunction(c.grid, sine_synthesis(np.asarray(c.coefficients, dtype=complex),
                                               c.grid.spacing))


def resolution_fraction(u: WaveFunction, top: float = 0.1) -> float:
    """Fraction of ||u||^2 carried by the top ``top`` share of the sine spectrum."""
    c = sine_coefficients(u.values, u.grid.spacing)
    total = np.sum(np.abs(c) ** 2)
    if total == 0:
        return 0.0
    cut = int(np.floor(len(c) * (1.0 - top)))
    return float(np.sum(np.abs(c[cut:]) ** 2) / total)


def check_resolved(u: WaveFunction, threshold: float = 0.01) -> bool:
    frac = resolution_fraction(u)
    if frac >= threshold:
        warnings.warn(
            f"top 10% of the sine spectrum carries {frac:.3g} of the norm",
            UnderResolvedWarning, stacklevel=3)
        return False
    return True


def laplacian_radial(u: WaveFunction) -> WaveFunction:
    """Action of the non-negative operator -d^2/dr^2 (that is, -Delta on psi).

    Computed exactly in the sine basis.  Emits ``UnderResolvedWarning`` when
    the input is not resolved by the grid.
    """
    check_resolved(u)
    k2 = u.grid.wavenumbers ** 2
    c = sine_coefficients(u.values, u.grid.spacing)
    return WaveFunction(u.grid, sine_synthesis(k2 * c, u.grid.spacing))


def kinetic_energy(u: WaveFunction) -> float:
    """<-Delta> = sum k^2 |c_k|^2."""
    c = sine_coefficients(u.values, u.grid.spacing)
    return float(np.sum(u.grid.wavenumbers ** 2 * np.abs(c) ** 2))


def free_propagate(u: WaveFunction, t: float) -> WaveFunction:
    """Exact free flow e^{i t Delta} u in the sine basis."""
    k2 = u.grid.wavenumbers ** 2
    c = sine_coefficients(u.values, u.grid.spacing)
    return WaveFunction(u.grid, sine_synthesis(np.exp(-1j * k2 * t) * c, u.grid.spacing))


# ---------------------------------------------------------------------------
# Odd extension machinery (first-order operators)
# ---------------------------------------------------------------------------

def odd_extension(values: np.ndarray) -> np.ndarray:
    """Periodic odd extension of node values to 2n points x_m = m h.

    Index m in [0, 2n) stands for x = m h for m < n and x = (m - 2n) h
    above; index n is the wall and holds zero.
    """
    n = values.shape[-1]
    ext = np.zeros(values.shape[:-1] + (2 * n,), dtype=complex)
    ext[..., 1:n] = values[..., :n - 1]
    ext[..., n + 1:] = -values[..., n - 2::-1]
    return ext


def restrict(ext: np.ndarray) -> np.ndarray:
    """Inverse of ``odd_extension`` (takes the positive half, wall zeroed)."""
    n = ext.shape[-1] // 2
    out = np.zeros(ext.shape[:-1] + (n,), dtype=complex)
    out[..., :n - 1] = ext[..., 1:n]
    return out


def extended_coordinate(grid: RadialGrid) -> np.ndarray:
    """Odd periodic coordinate x on the extension (zero at the wall index)."""
    n = grid.n_points
    m = np.arange(2 * n)
    x = np.where(m < n, m, m - 2 * n) * grid.spacing
    x[n] = 0.0
    return x


def extended_even(grid: RadialGrid, profile) -> np.ndarray:
    """Even extension of a radial profile g(r) (evaluated at |x|)."""
    x = extended_coordinate(grid)
    ax = np.abs(x)
    ax[grid.n_points] = grid.r_max
    return profile(ax)


def extended_wavenumbers(grid: RadialGrid) -> np.ndarray:
    n = grid.n_points
    k = 2 * np.pi * sfft.fftfreq(2 * n, grid.spacing)
    k[n] = 0.0  # drop Nyquist so the derivative stays exactly skew
    return k


def momentum_ext(ext: np.ndarray, k: np.ndarray) -> np.ndarray:
    """p = -i d/dx on the periodic extension."""
    return sfft.ifft(k * sfft.fft(ext, axis=-1), axis=-1)


def derivative(u: WaveFunction) -> np.ndarray:
    """Spectral du/dr on the nodes (array; not a Dirichlet function)."""
    k = extended_wavenumbers(u.grid)
    d = 1j * momentum_ext(odd_extension(u.values), k)
    n = u.grid.n_points
    return d[..., 1:n + 1]


def evaluate(u: WaveFunction, points, chunk: int = 2048) -> np.ndarray:
    """Evaluate the sine series of ``u`` at arbitrary radii (zero outside)."""
    pts = np.asarray(points, dtype=float)
    flat = pts.ravel()
    c = sine_coefficients(u.values, u.grid.spacing)
    k = u.grid.wavenumbers
    norm = np.sqrt(2.0 / u.grid.r_max)
    out = np.zeros(flat.shape, dtype=complex)
    inside = np.nonzero((flat > 0) & (flat < u.grid.r_max))[0]
    for start in range(0, inside.size, chunk):
        idx = inside[start:start + chunk]
        out[idx] = norm * (np.sin(np.outer(flat[idx], k)) @ c)
    return out.reshape(pts.shape)


# ---------------------------------------------------------------------------
# Absorbing layer
# ---------------------------------------------------------------------------

def absorbing_mask(grid: RadialGrid, width_fraction: float = 0.1,
                   strength: float = 1.0) -> np.ndarray:
    """Per-unit-time damping profile: zero in the bulk, smooth rise to the wall.

    The step applies exp(-strength * profile * dt); the profile is
    sin^2 shaped over the outer ``width_fraction`` of the domain.
    """
    r = grid.nodes
    start = grid.r_max * (1.0 - width_fraction)
    s = np.clip((r - start) / (grid.r_max - start), 0.0, 1.0)
    return strength * np.sin(0.5 * np.pi * s) ** 2


# ---------------------------------------------------------------------------
# Radial Sobolev embedding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SobolevReport:
    sup_weighted: float
    h1_norm: float
    ratio: float


def radial_sobolev_check(u: WaveFunction) -> SobolevReport:
    """Measure sup_{r >= 1} r |psi(r)| against ||psi||_{H^1}.

    With u = r psi, r |psi| = |u| and ||grad psi||^2 = ||u'||^2 for Dirichlet u.
    """
    mask = u.grid.nodes >= 1.0
    sup = float(np.max(np.abs(u.values[mask]))) if mask.any() else 0.0
    h1 = float(np.sqrt(u.mass() + kinetic_energy(u)))
    ratio = sup / h1 if h1 > 0 else 0.0
    return SobolevReport(sup, h1, ratio)


# ---------------------------------------------------------------------------
# Columnar text format
# ---------------------------------------------------------------------------

def save_wavefunction(u: WaveFunction, path) -> None:
    """Write ``# radial-grid n=<int> rmax=<float>`` then rows ``r re im``."""
    path = Path(path)
    data = np.column_stack([u.grid.nodes, u.values.real, u.values.imag])
    header = f"radial-grid n={u.grid.n_points} rmax={u.grid.r_max!r}"
    np.savetxt(path, data, header=header, fmt="%.17e")


def load_wavefunction(path) -> WaveFunction:
    path = Path(path)
    with path.open() as fh:
        first = fh.readline().strip()
    if not first.startswith("# radial-grid"):
        raise GridError(f"{path}: missing radial-grid header")
    fields = dict(tok.split("=") for tok in first.split()[2:])
    grid = make_grid(int(fields["n"]), float(fields["rmax"]))
    data = np.loadtxt(path, ndmin=2)
    if data.shape != (grid.n_points, 3):
        raise GridError(f"{path}: expected {grid.n_points} rows of 3 columns")
    return WaveFunction(grid, data[:, 1] + 1j * data[:, 2])
