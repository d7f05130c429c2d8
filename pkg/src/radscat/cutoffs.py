"""Smooth characteristic functions and the B_n function class."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermeval
from numpy.polynomial.legendre import leggauss


_GL_X, _GL_W = leggauss(64)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


def _bump(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    # exp(-1/q) is exactly 0 in double precision for q below 1e-3
    m = (t > 0) & (t < 1) & (t * (1.0 - t) > 1e-3)
    tm = t[m]
    out[m] = np.exp(-1.0 / (tm * (1.0 - tm)))
    return out


def _bump_derivatives(t, order):
    """Derivatives of exp(-1/(t(1-t))) up to ``order`` (0..2)."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    # exp(-1/q) underflows to 0 long before q reaches 1e-3
    m = (t > 0) & (t < 1) & (t * (1.0 - t) > 1e-3)
    tm = t[m]
    q = tm * (1.0 - tm)
    b = np.exp(-1.0 / q)
    dq = 1.0 - 2.0 * tm
    # phi = -1/q, phi' = dq/q^2, phi'' = (-2 q^2 - 2 q dq^2)/q^4
    p1 = dq / q ** 2
    if order == 0:
        out[m] = b
    elif order == 1:
        out[m] = b * p1
    elif order == 2:
        p2 = (-2.0 * q - 2.0 * dq ** 2) / q ** 3
        out[m] = b * (p1 ** 2 + p2)
    else:
        raise ValueError("bump derivatives implemented up to order 2")
    return out


_BUMP_MASS = float(np.sum(_GL_W * _bump(_GL_X)))


def _step_half(x):
    # integral over [0, x] for 0 <= x <= 1/2 by Gauss-Legendre on the subinterval
    return x * (_bump(np.multiply.outer(x, _GL_X)) @ _GL_W) / _BUMP_MASS


def smooth_step(x) -> np.ndarray:
    """Integrated bump: 0 for x <= 0, 1 for x >= 1, C^infinity and monotone."""
    x = np.asarray(x, dtype=float)
    out = np.where(x >= 1.0, 1.0, 0.0).astype(float)
    lo = (x > 0) & (x <= 0.5)
    hi = (x > 0.5) & (x < 1.0)
    if lo.any():
        out[lo] = _step_half(x[lo])
    if hi.any():
        out[hi] = 1.0 - _step_half(1.0 - x[hi])
    return out


def smooth_step_derivative(x, order: int = 1) -> np.ndarray:
    if order == 0:
        return smooth_step(x)
    return _bump_derivatives(x, order - 1) / _BUMP_MASS


class CutoffError(ValueError):
    pass


@dataclass(frozen=True)
class SmoothCutoff:
    """Smoothed indicator F(lambda in [lower, upper]) with transition width eps.

    F = 1 at points of the interval at distance >= eps from its boundary and
    F = 0 outside it.  Either end may be infinite.
    """

    lower: float
    upper: float
    eps: float

    def _pieces(self, lam):
        lam = np.asarray(lam, dtype=float)
        pieces = []
        if np.isfinite(self.lower):
            pieces.append(((lam - self.lower) / self.eps, 1.0 / self.eps))
        if np.isfinite(self.upper):
            pieces.append(((self.upper - lam) / self.eps, -1.0 / self.eps))
        return lam, pieces

    def __call__(self, lam) -> np.ndarray:
        lam, pieces = self._pieces(lam)
        out = np.ones_like(lam)
        for arg, _ in pieces:
            out = out * smooth_step(arg)
        return out

    def derivative(self, lam, order: int = 1) -> np.ndarray:
        """Analytic derivative of the profile, orders 0..3."""
        if not 0 <= order <= 3:
            raise ValueError("derivatives are available up to order 3")
        lam, pieces = self._pieces(lam)
        if not pieces:
            return np.ones_like(lam) if order == 0 else np.zeros_like(lam)
        if len(pieces) == 1:
            arg, scale = pieces[0]
            return scale ** order * smooth_step_derivative(arg, order)
        (a1, s1), (a2, s2) = pieces
        total = np.zeros_like(lam)
        for k in range(order + 1):
            c = factorial(order) / (factorial(k) * factorial(order - k))
            total = total + c * (s1 ** k * smooth_step_derivative(a1, k)) * (
                s2 ** (order - k) * smooth_step_derivative(a2, order - k))
        return total

    def complement(self) -> "SmoothCutoff":
        """Profile 1 - F for half-infinite intervals, as a cutoff object."""
        if np.isinf(self.upper) and np.isfinite(self.lower):
            return SmoothCutoff(-np.inf, self.lower + self.eps, self.eps)
        if np.isinf(self.lower) and np.isfinite(self.upper):
            return SmoothCutoff(self.upper - self.eps, np.inf, self.eps)
        raise CutoffError("complement is defined for half-infinite intervals only")

    def export(self, lam) -> np.ndarray:
        """Two-column (argument, value) table for plotting."""
        lam = np.asarray(lam, dtype=float)
        return np.column_stack([lam, self(lam)])


def make_cutoff(lower: float, upper: float = np.inf, eps: float = 0.1) -> SmoothCutoff:
    """F(lambda in [lower, upper]); ``eps`` must be below half the length."""
    if not eps > 0:
        raise CutoffError("eps must be positive")
    if lower >= upper:
        raise CutoffError(f"empty interval [{lower}, {upper}]")
    if np.isfinite(lower) and np.isfinite(upper) and eps >= 0.5 * (upper - lower):
        raise CutoffError(
            f"eps={eps} too large for interval of length {upper - lower}")
    return SmoothCutoff(float(lower), float(upper), float(eps))


# ---------------------------------------------------------------------------
# B_n functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BnFunction:
    """Bounded smooth f with Fourier transform fhat and tabulated moments.

    ``fhat`` follows f(A) = int fhat(s) e^{iAs} ds, i.e.
    fhat(s) = (1/2pi) int f(lam) e^{-i lam s} d lam.  ``moments[k]`` holds
    int |fhat(s)| |s|^k ds for k = 0..order.
    """

    f: Callable
    derivative: Callable  # derivative(lam, k)
    fhat: Callable
    order: int
    s_support: float
    moments: tuple = field(default=())
    name: str = "f"

    def __call__(self, lam):
        return self.f(np.asarray(lam, dtype=float))

    def moment(self, k: int) -> float:
        if k >= len(self.moments):
            raise ValueError(f"moment of order {k} not tabulated (order {self.order})")
        return self.moments[k]


def _tabulate_moments(fhat, s_support, order, n=20001):
    s = np.linspace(-s_support, s_support, n)
    a = np.abs(fhat(s))
    return tuple(float(np.trapezoid(a * np.abs(s) ** k, s)) for k in range(order + 1))


def gaussian_mixture(terms: Sequence[tuple], order: int = 6, name: str = "gaussian") -> BnFunction:
    """Sum of a * exp(-(lam - c)^2 / (2 w^2)) over ``terms`` of (a, c, w).

    Complex amplitudes are allowed (for modulated profiles); the moments are
    tabulated numerically.
    """
    terms = tuple((complex(a), float(c), float(w)) for a, c, w in terms)

    def f(lam):
        lam = np.asarray(lam, dtype=float)
        out = np.zeros(lam.shape, dtype=complex)
        for a, c, w in terms:
            out += a * np.exp(-0.5 * ((lam - c) / w) ** 2)
        return out.real if all(a.imag == 0 for a, _, _ in terms) else out

    def deriv(lam, k):
        lam = np.asarray(lam, dtype=float)
        out = np.zeros(lam.shape, dtype=complex)
        coeffs = np.zeros(k + 1)
        coeffs[k] = 1.0
        for a, c, w in terms:
            x = (lam - c) / w
            out += a * (-1) ** k * w ** (-k) * hermeval(x, coeffs) * np.exp(-0.5 * x ** 2)
        return out.real if all(a.imag == 0 for a, _, _ in terms) else out

    def fhat(s):
        s = np.asarray(s, dtype=float)
        out = np.zeros(s.shape, dtype=complex)
        for a, c, w in terms:
            out += a * w / np.sqrt(2 * np.pi) * np.exp(-0.5 * (w * s) ** 2 - 1j * c * s)
        return out

    s_support = max(9.0 / w for _, _, w in terms)
    moments = _tabulate_moments(fhat, s_support, order)
    return BnFunction(f, deriv, fhat, order, s_support, moments, name)


def gaussian(center: float = 0.0, width: float = 1.0, amplitude: float = 1.0,
             order: int = 6) -> BnFunction:
    return gaussian_mixture([(amplitude, center, width)], order=order,
                            name=f"gaussian(c={center}, w={width})")


@dataclass(frozen=True)
class Multiplier:
    """A bounded real profile usable only through spectral routes (no fhat)."""

    f: Callable
    name: str = "multiplier"

    def __call__(self, lam):
        return self.f(np.asarray(lam, dtype=float))


def tanh_projection(sign: int, M: float, R: float) -> Multiplier:
    """P^+ = (1 + tanh((a - M)/R))/2 or P^- = (1 - tanh((a + M)/R))/2."""
    if sign > 0:
        return Multiplier(lambda a: 0.5 * (1.0 + np.tanh((a - M) / R)), f"P+(M={M},R={R})")
    return Multiplier(lambda a: 0.5 * (1.0 - np.tanh((a + M) / R)), f"P-(M={M},R={R})")
