"""
Phase-space operators on radial wavefunctions.

Matrix-free counterparts of the dense oracle: spatial cutoffs, the radial
momentum gamma, the dilation generator A and its flow, functions of A, smooth
spectral projections P^{+/-}_{M,R}(A), Littlewood-Paley pieces, plus the
dense algebraic verifiers (commutator expansion, symmetrization, the tanh
commutator).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import factorial
from typing import Callable, Optional, Union

import numpy as np
import scipy.fft as sfft
from scipy.interpolate import CubicSpline, make_interp_spline

from . import oracle
from .cutoffs import BnFunction, Multiplier, SmoothCutoff, smooth_step, tanh_projection
from .grid import (GridError, RadialGrid, WaveFunction, check_resolved, evaluate,
                   extended_coordinate, extended_even, extended_wavenumbers,
                   momentum_ext, odd_extension, restrict, sine_coefficients,
                   sine_synthesis)

TANH_R_MIN = 2.0 / np.pi


class OperatorError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Spatial cutoffs and gamma
# ---------------------------------------------------------------------------

def apply_spatial_cutoff(F: SmoothCutoff, scale: float, u: WaveFunction) -> WaveFunction:
    """Multiplication by F(r / scale)."""
    if scale <= 0:
        raise OperatorError("cutoff scale must be positive")
    return WaveFunction(u.grid, u.values * F(u.grid.nodes / scale))


def default_vector_field(r):
    """g(r): 0 on [0, 1], integrated-bump rise on [1, 2], 1 beyond."""
    return smooth_step(np.asarray(r, dtype=float) - 1.0)


@dataclass(frozen=True)
class DilationSpec:
    grid: RadialGrid
    profile: Callable = default_vector_field

    def g(self, r=None):
        return self.profile(self.grid.nodes if r is None else r)


def _symmetrized_first_order(weight_ext: np.ndarray, u: WaveFunction) -> WaveFunction:
    """(w p + p w)/2 applied on the odd extension, w an extended real profile."""
    k = extended_wavenumbers(u.grid)
    U = odd_extension(u.values)
    out = 0.5 * (weight_ext * momentum_ext(U, k) + momentum_ext(weight_ext * U, k))
    return WaveFunction(u.grid, restrict(out))


def gamma_apply(spec: Union[DilationSpec, RadialGrid], u: WaveFunction) -> WaveFunction:
    """gamma = (g p_r + p_r g)/2, the symmetrized outward momentum."""
    if isinstance(spec, RadialGrid):
        spec = DilationSpec(spec)
    if spec.grid != u.grid:
        raise GridError("dilation spec and wavefunction grids differ")
    check_resolved(u)
    return _symmetrized_first_order(extended_even(u.grid, spec.profile), u)


def dilation_apply(u: WaveFunction) -> WaveFunction:
    """A = (r p + p r)/2 = -i (r d/dr + 1/2) on u = r psi."""
    check_resolved(u)
    return _symmetrized_first_order(extended_coordinate(u.grid), u)


def momentum_apply(u: WaveFunction) -> np.ndarray:
    """p_r u = -i u' as a node array (not a Dirichlet function)."""
    k = extended_wavenumbers(u.grid)
    n = u.grid.n_points
    return momentum_ext(odd_extension(u.values), k)[..., 1:n + 1]


# ---------------------------------------------------------------------------
# Dilation flow
# ---------------------------------------------------------------------------

DEFAULT_S_MAX = 3.0


def _flow(u: WaveFunction, s: float, method: str) -> np.ndarray:
    r = u.grid.nodes
    target = np.exp(s) * r
    if method == "spectral":
        vals = evaluate(u, target)
    elif method == "cubic":
        rr = np.concatenate([[0.0], r])
        vv = np.concatenate([[0.0], u.values])
        spline = CubicSpline(rr, vv)
        vals = np.where(target < u.grid.r_max, spline(np.minimum(target, u.grid.r_max)), 0.0)
    else:
        raise OperatorError(f"unknown flow method {method!r}")
    return np.exp(0.5 * s) * vals


def dilation_flow(u: WaveFunction, s: float, s_max: float = DEFAULT_S_MAX,
                  method: str = "spectral") -> WaveFunction:
    """e^{iAs} u (r) = e^{s/2} u(e^s r), zero beyond r_max.

    ``method='spectral'`` evaluates the sine series off-grid (exact for
    band-limited u); ``'cubic'`` uses cubic interpolation.
    """
    if abs(s) > s_max:
        raise OperatorError(f"|s|={abs(s)} exceeds s_max={s_max}")
    if s == 0:
        return u
    return WaveFunction(u.grid, _flow(u, s, method))


def dilation_flow_loss(u: WaveFunction, s: float) -> float:
    """Mass pushed beyond r_max by the flow (nonzero only for s < 0)."""
    if s >= 0:
        return 0.0
    r = u.grid.nodes
    out = r > u.grid.r_max * np.exp(s)
    return float(np.sum(np.abs(u.values[out]) ** 2) * u.grid.spacing)


# ---------------------------------------------------------------------------
# Log coordinates: r = e^y, v(y) = e^{y/2} u(e^y), A = -i d/dy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LogGrid:
    y: np.ndarray
    dy: float

    @property
    def lam(self) -> np.ndarray:
        return 2 * np.pi * sfft.fftfreq(self.y.size, self.dy)


def _dilation_bandwidth(u: WaveFunction) -> float:
    """Rough upper estimate of the A-spectrum extent: k_99 * r_99."""
    c = np.abs(sine_coefficients(u.values, u.grid.spacing)) ** 2
    tot = c.sum()
    if tot == 0:
        return 1.0
    k = u.grid.wavenumbers
    k99 = k[min(np.searchsorted(np.cumsum(c) / tot, 0.999999), k.size - 1)]
    m = np.abs(u.values) ** 2
    r99 = u.grid.nodes[min(np.searchsorted(np.cumsum(m) / m.sum(), 0.999999),
                           u.grid.n_points - 1)]
    return max(float(k99 * r99), 1.0)


def log_grid(u: WaveFunction, pad: float = 14.0, dy: Optional[float] = None,
             max_points: int = 2 ** 18) -> LogGrid:
    lam = _dilation_bandwidth(u)
    if dy is None:
        dy = float(np.clip(np.pi / (8.0 * lam), 1e-4, 0.01))
    y_lo = np.log(u.grid.spacing) - pad
    y_hi = np.log(u.grid.r_max) + pad
    n = int(2 ** np.ceil(np.log2((y_hi - y_lo) / dy)))
    if n > max_points:
        warnings.warn(f"log grid capped at {max_points} points", RuntimeWarning)
        n = max_points
    y = y_lo + (y_hi - y_lo) * np.arange(n) / n
    return LogGrid(y, (y_hi - y_lo) / n)


def to_log(u: WaveFunction, lg: LogGrid) -> np.ndarray:
    return np.exp(0.5 * lg.y) * evaluate(u, np.exp(lg.y))


def from_log(v: np.ndarray, lg: LogGrid, grid: RadialGrid) -> WaveFunction:
    # degree 7 keeps the round trip near round-off at the default dy
    spline = make_interp_spline(lg.y, v, k=7)
    vals = spline(np.log(grid.nodes)) * grid.nodes ** -0.5
    return WaveFunction(grid, vals)


def log_multiplier(f: Callable, u: WaveFunction, lg: Optional[LogGrid] = None) -> WaveFunction:
    """f(A) u as a Fourier multiplier f(lambda) in log coordinates."""
    lg = lg or log_grid(u)
    v = to_log(u, lg)
    v_hat = sfft.fft(v)
    out = sfft.ifft(np.asarray(f(lg.lam)) * v_hat)
    return from_log(out, lg, u.grid)


def _quadrature_calculus(f: BnFunction, u: WaveFunction, n_nodes: Optional[int]) -> WaveFunction:
    S = f.s_support
    lam = _dilation_bandwidth(u)
    if n_nodes is None:
        ds = min(np.pi / (4.0 * lam), 0.05)
        n_nodes = int(2 * np.ceil(S / ds)) + 1
    s = np.linspace(-S, S, n_nodes)
    w = f.fhat(s) * (s[1] - s[0])
    acc = np.zeros(u.grid.n_points, dtype=complex)
    for si, wi in zip(s, w):
        if abs(wi) < 1e-18 * np.max(np.abs(w)):
            continue
        acc += wi * (u.values if si == 0 else _flow(u, si, "spectral"))
    return WaveFunction(u.grid, acc)


def functional_calculus_A(f: Union[BnFunction, Multiplier, Callable], u: WaveFunction,
                          method: str = "log", n_nodes: Optional[int] = None) -> WaveFunction:
    """f(A) u for the dilation generator A.

    ``method='log'`` diagonalizes A in log coordinates; ``'quadrature'``
    integrates fhat(s) e^{iAs} u over the dilation flow and needs a
    ``BnFunction`` (integrable fhat).
    """
    if method == "quadrature":
        if not isinstance(f, BnFunction):
            raise OperatorError(
                "quadrature route needs an integrable Fourier transform (BnFunction); "
                "use method='log' for tanh-type profiles")
        return _quadrature_calculus(f, u, n_nodes)
    if method != "log":
        raise OperatorError(f"unknown method {method!r}")
    # log coordinates need u = o(r^{1/2}) at the origin
    r = u.grid.nodes[:4]
    if np.max(np.abs(u.values[:4]) / np.sqrt(r)) > 10 * max(u.norm(), 1e-300):
        raise OperatorError("u does not vanish fast enough at r = 0 for log coordinates")
    return log_multiplier(f, u)


def smooth_projection_pm(sign: int, M: float, R: float, u: WaveFunction) -> WaveFunction:
    """P^+_{M,R}(A) u (sign > 0) or P^-_{M,R}(A) u (sign < 0)."""
    if R <= TANH_R_MIN:
        raise OperatorError(f"tanh(A/R) needs R > 2/pi, got R={R}")
    return log_multiplier(tanh_projection(1 if sign > 0 else -1, M, R), u)


# ---------------------------------------------------------------------------
# Littlewood-Paley
# ---------------------------------------------------------------------------

def _lp_low(xi):
    """1 on [0, 1], 0 beyond 2, smooth monotone in between."""
    return 1.0 - smooth_step(np.asarray(xi, dtype=float) - 1.0)


def lp_symbol(xi) -> np.ndarray:
    """Annular symbol chi(xi) - chi(2 xi), supported in (1/2, 2), equal to 1 at 1."""
    return _lp_low(xi) - _lp_low(2.0 * np.asarray(xi, dtype=float))


def lp_band(grid: RadialGrid):
    return 2 * np.pi / grid.r_max, np.pi / grid.spacing


def littlewood_paley(M: float, u: WaveFunction) -> WaveFunction:
    """P_M u: sine-spectrum multiplier lp_symbol(k / M)."""
    lo, hi = lp_band(u.grid)
    if not lo <= M <= hi:
        raise OperatorError(f"frequency {M} outside resolvable band [{lo:.4g}, {hi:.4g}]")
    c = sine_coefficients(u.values, u.grid.spacing)
    mult = lp_symbol(u.grid.wavenumbers / M)
    return WaveFunction(u.grid, sine_synthesis(mult * c, u.grid.spacing))


def dyadic_frequencies(grid: RadialGrid, M0: Optional[float] = None) -> np.ndarray:
    """Dyadic family M0 2^j covering the resolvable band."""
    lo, hi = lp_band(grid)
    M0 = lo if M0 is None else M0
    count = int(np.floor(np.log2(hi / M0))) + 1
    return M0 * 2.0 ** np.arange(count)


def littlewood_paley_sum(u: WaveFunction, M0: Optional[float] = None) -> WaveFunction:
    acc = np.zeros(u.grid.n_points, dtype=complex)
    for M in dyadic_frequencies(u.grid, M0):
        acc = acc + littlewood_paley(M, u).values
    return WaveFunction(u.grid, acc)


# ---------------------------------------------------------------------------
# Dense algebraic verifiers
# ---------------------------------------------------------------------------

DENSE_ALGEBRA_CAP = 256


@dataclass(frozen=True)
class CommutatorReport:
    order: int
    exact: np.ndarray = field(repr=False)
    expansion: np.ndarray = field(repr=False)
    adjoint_expansion: np.ndarray = field(repr=False)
    remainder_norm: float
    ad_norm: float
    moment: float
    bound: float
    measured_c: float

    @property
    def remainder(self) -> np.ndarray:
        return self.exact - self.expansion

    @property
    def within_bound(self) -> bool:
        return self.remainder_norm <= self.bound * (1 + 1e-9) + 1e-13


def _fn_of(A, g):
    w, U = np.linalg.eigh(A)
    return (U * g(w)) @ U.conj().T


def commutator_expand_verify(B: np.ndarray, A: np.ndarray, f: BnFunction, n: int) -> CommutatorReport:
    """Compare [B, f(A)] with its order-n commutator expansion.

    expansion = sum_{k<n} f^{(k)}(A) ad_A^k(B) / k!, ad_A(B) = [B, A]; the
    remainder is checked against ||ad_A^n(B)|| * int |fhat| |s|^n ds.
    """
    A = np.asarray(A)
    B = np.asarray(B)
    if A.shape[0] > DENSE_ALGEBRA_CAP:
        raise OperatorError(f"dimension {A.shape[0]} exceeds {DENSE_ALGEBRA_CAP}")
    moment = f.moment(n)
    fA = _fn_of(A, f)
    exact = B @ fA - fA @ B
    ads = [B]
    for _ in range(n):
        ads.append(ads[-1] @ A - A @ ads[-1])
    expansion = np.zeros_like(exact, dtype=complex)
    adjoint = np.zeros_like(exact, dtype=complex)
    for k in range(1, n):
        dk = _fn_of(A, lambda w: f.derivative(w, k))
        expansion += dk @ ads[k] / factorial(k)
        adjoint += (-1) ** (k - 1) * ads[k] @ dk / factorial(k)
    rem = np.linalg.norm(exact - expansion, 2)
    ad_norm = np.linalg.norm(ads[n], 2)
    bound = ad_norm * moment
    c = rem / bound if bound > 0 else 0.0
    return CommutatorReport(n, exact, expansion, adjoint, float(rem), float(ad_norm),
                            float(moment), float(bound), float(c))


@dataclass(frozen=True)
class SymmetrizationReport:
    residual: float
    scale: float

    @property
    def relative(self) -> float:
        return self.residual / self.scale if self.scale > 0 else self.residual


def symmetrization_check(F: np.ndarray, G: np.ndarray) -> SymmetrizationReport:
    """Residual of F^2 G + G F^2 = 2 F G F + [F, [F, G]]."""
    F = np.asarray(F)
    G = np.asarray(G)
    if F.shape[0] > DENSE_ALGEBRA_CAP:
        raise OperatorError(f"dimension {F.shape[0]} exceeds {DENSE_ALGEBRA_CAP}")
    FG = F @ G - G @ F
    lhs = F @ F @ G + G @ F @ F
    rhs = 2 * F @ G @ F + (F @ FG - FG @ F)
    scale = np.linalg.norm(F, 2) ** 2 * np.linalg.norm(G, 2)
    return SymmetrizationReport(float(np.linalg.norm(lhs - rhs, 2)), float(scale))


def tanh_kernel_literal(a, R):
    """Weight 1/(R cosh^2(a/R)) sandwiched between momenta."""
    x = np.clip(np.asarray(a) / R, -350, 350)
    return 1.0 / (R * np.cosh(x) ** 2)


def tanh_kernel_exact(a, R):
    """Weight making i[p^2, tanh(A/R)] = p K(A) p exact.

    From p f(A) = f(A - i) p: K(a) = sin(2/R) / (sinh^2(a/R) + cos^2(1/R)),
    which tends to 2/(R cosh^2(a/R)) for large R.
    """
    x = np.clip(np.asarray(a) / R, -350, 350)
    return np.sin(2.0 / R) / (np.sinh(x) ** 2 + np.cos(1.0 / R) ** 2)


@dataclass(frozen=True)
class TanhCommutatorReport:
    R: float
    dimension: int
    norm_lhs: float
    residual_literal: float
    residual_exact: float


def tanh_commutator_check(R: float, grid: RadialGrid, test_vector: Optional[WaveFunction] = None
                          ) -> TanhCommutatorReport:
    """Dense check of [-i Delta, tanh(A/R)] = p K(A) p for both kernels.

    Relative residuals are reported for the 1/(R ch^2) kernel and for the
    exact kernel ``tanh_kernel_exact``.
    """
    if R <= TANH_R_MIN:
        raise OperatorError(f"tanh(A/R) needs R > 2/pi, got R={R}")
    if not oracle.within_cap(grid):
        raise OperatorError(f"dense dimension capped at {oracle.DENSE_CAP}")
    if test_vector is None:
        test_vector = grid.from_function(lambda r: r * np.exp(-0.5 * r ** 2))
    v = test_vector.values[:-1]
    lap = oracle.dense_laplacian(grid).matrix
    Ao = oracle.dense_dilation(grid)
    Ae = oracle.dense_dilation_even(grid)
    Peo, Poe = oracle.dense_momentum_blocks(grid)
    T = oracle.exact_function(Ao, lambda a: np.tanh(a / R)).matrix
    lhs = 1j * (lap @ (T @ v) - T @ (lap @ v))
    pv = Peo @ v
    nl = np.linalg.norm(lhs)

    def resid(kernel):
        K = oracle.exact_function(Ae, lambda a: kernel(a, R)).matrix
        rhs = Poe @ (K @ pv)
        return float(np.linalg.norm(lhs - rhs) / nl) if nl > 0 else float(np.linalg.norm(rhs))

    return TanhCommutatorReport(R, grid.n_points - 1, float(nl * np.sqrt(grid.spacing)),
                                resid(tanh_kernel_literal), resid(tanh_kernel_exact))


@dataclass(frozen=True)
class EnvelopeReport:
    M: float
    R: float
    sup_negative_region: float
    sup_far_region: float
    envelope: float

    @property
    def holds(self) -> bool:
        return self.sup_negative_region <= self.envelope


def sech2_envelope_check(M: float, R: Optional[float] = None, samples=None,
                         factor: float = 1.1) -> EnvelopeReport:
    """sup of |a| / (R ch^2((a - M)/R)) where that term is negative (a <= 0).

    The envelope is factor * sqrt(M) e^{-2 sqrt(M)}; the sup over the whole
    far region |a - M| >= M (which includes a >= 2M, where the term is
    positive) is reported alongside.
    """
    R = np.sqrt(M) if R is None else R
    if R <= TANH_R_MIN:
        raise OperatorError(f"R must exceed 2/pi, got {R}")
    a = np.linspace(-50 * M, 50 * M, 200001) if samples is None else np.asarray(samples, float)
    w = np.abs(a) * tanh_kernel_literal(a - M, R)
    neg = a <= 0
    far = np.abs(a - M) >= M
    env = factor * np.sqrt(M) * np.exp(-2 * np.sqrt(M))
    sup_neg = float(np.max(w[neg])) if neg.any() else 0.0
    sup_far = float(np.max(w[far])) if far.any() else 0.0
    return EnvelopeReport(M, R, sup_neg, sup_far, env)
