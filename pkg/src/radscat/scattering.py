"""
Channel wave operators, energy windows, bound-cluster projection and the
asymptotic split of a solution into a free wave plus a localized remainder.

Conventions: ``free_propagate(u, t)`` is e^{it Delta}; the backward free
flow e^{-it Delta} used by the wave-operator sequence is
``free_propagate(u, -t)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np
import scipy.fft as sfft

from . import oracle
from .cutoffs import make_cutoff
from .evolution import Eigenstates, Potential, Trajectory
from .grid import (RadialGrid, WaveFunction, free_propagate, inner_product, save_wavefunction,
                   sine_coefficients, sine_synthesis)
from .observables import (FAIL, INCONCLUSIVE, PASS, EstimateReport, ProbeError, _loglog_slope,
                          _norm, exterior_cutoff, second_moment)
from .operators import _symmetrized_first_order


class WindowError(ValueError):
    pass


class DecompositionError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Energy windows
# ---------------------------------------------------------------------------

DENSE = "dense"
CHEBYSHEV = "chebyshev"


@dataclass(frozen=True)
class EnergyWindow:
    """Smooth window F(eta <= H <= cap) with transition width ``eps``."""

    eta: float
    cap: float
    method: str = "auto"
    eps: float = 0.1

    def __post_init__(self):
        if not self.eta > 0:
            raise WindowError("window floor eta must be positive")
        if not self.cap > self.eta:
            raise WindowError(f"empty window ({self.eta}, {self.cap})")
        if self.method not in ("auto", DENSE, CHEBYSHEV):
            raise WindowError(f"unknown window method {self.method!r}")
        make_cutoff(self.eta, self.cap, self.eps)

    @property
    def profile(self):
        return make_cutoff(self.eta, self.cap, self.eps)

    def resolve_method(self, grid: RadialGrid) -> str:
        if self.method == "auto":
            return DENSE if oracle.within_cap(grid) else CHEBYSHEV
        if self.method == DENSE and not oracle.within_cap(grid):
            raise WindowError(f"dense window limited to {oracle.DENSE_CAP} points")
        return self.method


def _apply_h(values: np.ndarray, grid: RadialGrid, v: np.ndarray) -> np.ndarray:
    h = grid.spacing
    return sine_synthesis(grid.wavenumbers ** 2 * sine_coefficients(values, h), h) + v * values


def chebyshev_coefficients(f: Callable, lo: float, hi: float, tol: float = 1e-10,
                           max_degree: int = 2 ** 16) -> np.ndarray:
    """Chebyshev series of f on [lo, hi], doubling the degree until the tail is below tol."""
    deg = 256
    while True:
        j = np.arange(deg + 1)
        x = np.cos(np.pi * j / deg)
        vals = f(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
        c = sfft.dct(vals, type=1) / deg
        c[0] *= 0.5
        c[-1] *= 0.5
        scale = max(np.max(np.abs(c)), 1e-300)
        if np.max(np.abs(c[-deg // 8:])) < tol * scale or deg >= max_degree:
            nz = np.nonzero(np.abs(c) > 0.1 * tol * scale)[0]
            return c[:nz[-1] + 1] if nz.size else c[:1]
        deg *= 2


def _chebyshev_apply(coeffs, values, grid, v, lo, hi):
    a = 2.0 / (hi - lo)
    b = -(hi + lo) / (hi - lo)
    op = lambda x: a * _apply_h(x, grid, v) + b * x
    t0 = values
    acc = coeffs[0] * t0
    if coeffs.size == 1:
        return acc
    t1 = op(t0)
    acc = acc + coeffs[1] * t1
    for c in coeffs[2:]:
        t0, t1 = t1, 2.0 * op(t1) - t0
        acc = acc + c * t1
    return acc


def spectral_bounds(V: Callable, grid: RadialGrid):
    """Interval containing the spectrum of -Delta_r + V on the grid."""
    v = np.asarray(V(grid.nodes[:-1]), dtype=float)
    return float(np.min(v)) - 1e-9, float(grid.wavenumbers[-1] ** 2 + max(np.max(v), 0.0)) + 1e-9


def energy_window(u: WaveFunction, window: EnergyWindow, V: Callable) -> WaveFunction:
    """F(eta <= H <= cap) u for H = -Delta_r + V."""
    grid = u.grid
    F = window.profile
    method = window.resolve_method(grid)
    if method == DENSE:
        H = oracle.dense_hamiltonian(V, grid)
        w = H.spectral.eigenvalues
        if not np.any(F(w) > 0):
            raise WindowError("window contains no spectrum of H on this grid")
        return oracle.exact_function(H, F).apply(u)
    lo, hi = spectral_bounds(V, grid)
    if window.cap <= lo or window.eta >= hi:
        raise WindowError("window lies outside the spectral interval of H")
    coeffs = chebyshev_coefficients(F, lo, hi)
    v = np.zeros(grid.n_points)
    v[:-1] = V(grid.nodes[:-1])
    out = _chebyshev_apply(coeffs, u.values.astype(complex), grid, v, lo, hi)
    return WaveFunction(grid, out)


# ---------------------------------------------------------------------------
# Bound cluster
# ---------------------------------------------------------------------------

def bound_projection(u: WaveFunction, eigenstates) -> tuple:
    """Coefficients a_j = <psi_j, u> and P_b u = sum a_j psi_j."""
    states = eigenstates.states if isinstance(eigenstates, Eigenstates) else \
        [s for s in (e[1] if isinstance(e, tuple) else e for e in eigenstates)]
    a = np.array([inner_product(u, s) for s in states], dtype=complex)
    pb = np.zeros(u.grid.n_points, dtype=complex)
    for aj, s in zip(a, states):
        pb += aj * s.values
    return a, WaveFunction(u.grid, pb)


# ---------------------------------------------------------------------------
# Cook's method
# ---------------------------------------------------------------------------

def _odd_weight(grid: RadialGrid, profile: np.ndarray) -> np.ndarray:
    """Odd periodic extension of a node profile (profile at r_1..r_n)."""
    n = grid.n_points
    ext = np.zeros(2 * n)
    ext[1:n + 1] = profile
    ext[n + 1:] = -profile[:n - 1][::-1]
    ext[n] = 0.0
    return ext


def cook_pieces(u: WaveFunction, t: float, alpha: float, V: Callable, eps: float = 0.1):
    """Vectors of the Cook derivative at time t.

    Returns (flux, potential, remainder) with
      flux       = t^-alpha [F_1'(p) + (p)F_1' - alpha (r/t) F_1'] psi
                 = (i[-Delta, F_1] + dF_1/dt) psi,
      potential  = F_1 V psi,
      remainder  = t^-2alpha F_1'' psi (a size proxy, contained in flux).
    """
    grid = u.grid
    F = exterior_cutoff(eps)
    s = grid.nodes / t ** alpha
    d1 = F.derivative(s, 1)
    d2 = F.derivative(s, 2)
    weight = _odd_weight(grid, d1) / t ** alpha
    flux = 2.0 * _symmetrized_first_order(weight, u).values
    flux = flux - alpha * (grid.nodes / t) * d1 / t ** alpha * u.values
    pot = F(s) * np.asarray(V(grid.nodes, t) if _takes_time(V) else V(grid.nodes)) * u.values
    rem = d2 / t ** (2 * alpha) * u.values
    return flux, pot, rem


def _takes_time(V) -> bool:
    return isinstance(V, Potential)


def cook_integrand(traj: Trajectory, alpha: float, sigma: Optional[float] = None,
                   eps: float = 0.1, slope_tol: float = 0.2, fit_from: Optional[float] = None,
                   t_min: float = 1.0, require_window: bool = True) -> EstimateReport:
    """Norm of the Cook derivative of e^{-i Delta t} F_1 e^{-iHt} psi and its pieces.

    The F_1 V piece is fitted on [fit_from, T] (default T/4) against the
    slope -sigma * alpha.
    """
    if not 1.0 / 3.0 < alpha < 1.0:
        raise ProbeError(f"alpha must lie in (1/3, 1), got {alpha}")
    if require_window and "energy_window" not in traj.metadata:
        raise ProbeError("trajectory carries no energy-window metadata")
    V = traj.model.potential
    if sigma is None and V.kind in ("power", "breathing"):
        sigma = V.params[1]
    h = traj.grid.spacing
    sel = np.nonzero(traj.times >= t_min - 1e-12)[0]
    t = traj.times[sel]
    total, flux_n, pot_n, rem_n = [], [], [], []
    for i, ti in zip(sel, t):
        u = traj.snapshot(i)
        f, p, r = cook_pieces(u, ti, alpha, V, eps)
        total.append(_norm(f - 1j * p, h))
        flux_n.append(_norm(f, h))
        pot_n.append(_norm(p, h))
        rem_n.append(_norm(r, h))
    pot_n = np.array(pot_n)
    series = {"t": t, "total": np.array(total), "flux": np.array(flux_n), "F1V": pot_n,
              "remainder": np.array(rem_n)}
    values = {}
    rep = EstimateReport("cook_integrand", {"alpha": alpha, "sigma": sigma, "eps": eps,
                                            "slope_tol": slope_tol}, series, values)
    if np.all(pot_n == 0):
        rep.notes.append("F1 V piece identically zero")
        rep.verdict, rep.margin = PASS, 0.0
        return rep
    start = t[-1] / 4 if fit_from is None else fit_from
    fit = (t >= start) & (pot_n > 0)
    slope, half = _loglog_slope(t[fit], pot_n[fit])
    values["F1V_slope"] = slope
    values["F1V_slope_halfwidth"] = half
    if sigma is not None:
        target = -sigma * alpha
        values["predicted_slope"] = target
        rep.margin = slope_tol - abs(slope - target)
        rep.verdict = PASS if rep.margin >= 0 else FAIL
    return rep


def default_test_bank(grid: RadialGrid, count: int = 5) -> List[WaveFunction]:
    """Smooth compactly supported test functions r * bump(r - c), c = 2, 4, ..."""
    from .cutoffs import smooth_step
    bank = []
    for j in range(count):
        c = 2.0 * (j + 1)
        r = grid.nodes
        prof = smooth_step(r - (c - 1.0)) * smooth_step((c + 1.0) - r)
        w = WaveFunction(grid, r * prof)
        nrm = w.norm()
        bank.append(w * (1.0 / nrm) if nrm > 0 else w)
    return bank


def geometric_times(t_first: float, t_last: float) -> np.ndarray:
    k = int(np.floor(np.log2(t_last / t_first) + 1e-9))
    return t_first * 2.0 ** np.arange(k + 1)


def _snapshot_at(traj: Trajectory, t: float) -> WaveFunction:
    i = int(np.argmin(np.abs(traj.times - t)))
    if abs(traj.times[i] - t) > 0.5 * abs(traj.dt) + 1e-9:
        raise DecompositionError(f"no snapshot at t = {t}")
    return traj.snapshot(i)


@dataclass
class WaveOperatorResult:
    phi_plus: WaveFunction
    sample_times: np.ndarray
    iterates: List[WaveFunction] = field(repr=False)
    cauchy: np.ndarray
    error_bar: float
    weak_limit: np.ndarray
    verdict: str

    @property
    def ratios(self) -> np.ndarray:
        c = self.cauchy
        return c[1:] / c[:-1] if c.size > 1 else np.empty(0)


def channel_wave_operator(traj: Trajectory, alpha: float, sample_times: Sequence[float],
                          eps: float = 0.1, test_bank: Optional[List[WaveFunction]] = None
                          ) -> WaveOperatorResult:
    """v_k = e^{-i Delta t_k} F_1(|x|/t_k^alpha) psi(t_k) at geometric sample times."""
    ts = np.asarray(sample_times, dtype=float)
    if ts.size < 2:
        raise DecompositionError("need at least two sample times")
    q = ts[1:] / ts[:-1]
    if not np.allclose(q, q[0], rtol=1e-9):
        raise DecompositionError("sample times must be geometric")
    F = exterior_cutoff(eps)
    bank = default_test_bank(traj.grid) if test_bank is None else test_bank
    iterates, weak = [], []
    for tk in ts:
        u = _snapshot_at(traj, tk)
        f1 = F(u.grid.nodes / tk ** alpha)
        iterates.append(free_propagate(WaveFunction(u.grid, f1 * u.values), -tk))
        rest = free_propagate(WaveFunction(u.grid, (1 - f1) * u.values), -tk)
        weak.append([abs(inner_product(w, rest)) for w in bank])
    cauchy = np.array([(iterates[k + 1] - iterates[k]).norm() for k in range(ts.size - 1)])
    if cauchy.size >= 2:
        ratio = cauchy[-1] / cauchy[-2] if cauchy[-2] > 0 else 0.0
        decreasing = bool(np.all(np.diff(cauchy) <= 0))
    else:
        ratio, decreasing = 0.5, True
    err = cauchy[-1] * ratio / (1 - ratio) if ratio < 1 else float("inf")
    # a sequence already at round-off (no free channel) has converged to zero
    negligible = float(np.max(cauchy)) <= 1e-8 * max(_snapshot_at(traj, ts[0]).norm(), 1e-300)
    if negligible:
        err = float(np.max(cauchy))
    verdict = PASS if decreasing or negligible else INCONCLUSIVE
    return WaveOperatorResult(iterates[-1], ts, iterates, cauchy, float(err), np.array(weak), verdict)


def cauchy_rate_report(result: WaveOperatorResult, factor: float = 2.0) -> EstimateReport:
    """Cauchy differences must shrink by at least ``factor`` per time doubling."""
    per_doubling = result.ratios ** (1.0 / np.log2(result.sample_times[1] / result.sample_times[0]))
    worst = float(np.max(per_doubling)) if per_doubling.size else float("nan")
    margin = 1.0 / factor - worst
    return EstimateReport("cauchy_rate", {"factor": factor},
                          {"t": result.sample_times[1:], "cauchy": result.cauchy},
                          {"worst_ratio": worst, "error_bar": result.error_bar},
                          PASS if margin >= 0 else FAIL, margin)


# ---------------------------------------------------------------------------
# Decomposition
# ---------------------------------------------------------------------------

@dataclass
class DecompositionResult:
    phi_plus: WaveFunction
    localized: WaveFunction
    T: float
    coefficients: np.ndarray
    energies: np.ndarray
    residual: float
    cross_term: float
    mass_total: float
    mass_free: float
    mass_localized: float
    localization: float
    cauchy: np.ndarray
    error_bar: float
    verdict: str
    reconstruction_residual: float = float("nan")
    notes: List[str] = field(default_factory=list)

    def summary(self) -> dict:
        f = lambda x: float(x) if np.isfinite(x) else str(float(x))
        return {"T": f(self.T), "mass_total": f(self.mass_total), "mass_free": f(self.mass_free),
                "mass_localized": f(self.mass_localized), "cross_term": f(self.cross_term),
                "residual": f(self.residual), "localization": f(self.localization),
                "error_bar": f(self.error_bar), "reconstruction_residual": f(self.reconstruction_residual),
                "cauchy": [f(c) for c in self.cauchy],
                "coefficients_abs": [f(abs(a)) for a in self.coefficients],
                "energies": [f(e) for e in self.energies], "verdict": self.verdict,
                "notes": list(self.notes)}

    def export(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        save_wavefunction(self.phi_plus, d / "phi_plus.dat")
        save_wavefunction(self.localized, d / "localized.dat")
        lines = [f"{k} = {v}" for k, v in self.summary().items() if not isinstance(v, list)]
        lines.append("cauchy = " + " ".join(f"{c:.17e}" for c in self.cauchy))
        (d / "decomposition.txt").write_text("\n".join(lines) + "\n")
        (d / "decomposition.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


def asymptotic_decompose(traj: Trajectory, alpha: float = 0.8,
                         sample_times: Optional[Sequence[float]] = None,
                         eigenstates: Optional[Eigenstates] = None, eps: float = 0.1,
                         localization_tol: float = 1e-2) -> DecompositionResult:
    """psi(T) = e^{i Delta T} phi_+ + psi_wb(T) with phi_+ from the wave-operator sequence.

    With ``eigenstates`` (linear models) psi_wb(T) is compared with the
    bound-cluster reconstruction sum a_j e^{-i E_j T} psi_j, a_j = <psi_j, psi(0)>.
    """
    T = float(traj.times[-1])
    if sample_times is None:
        sample_times = geometric_times(max(T / 8, traj.times[1] if len(traj) > 1 else T), T)
    wo = channel_wave_operator(traj, alpha, sample_times, eps)
    if wo.verdict != PASS:
        raise DecompositionError("wave-operator sequence not converging; run longer")
    T = float(wo.sample_times[-1])
    uT = _snapshot_at(traj, T)
    free_T = free_propagate(wo.phi_plus, T)
    loc = uT - free_T
    cross = 2.0 * inner_product(free_T, loc).real
    mass_total = uT.mass()
    F = exterior_cutoff(eps)
    localization = _norm(F(uT.grid.nodes / T ** alpha) * loc.values, uT.grid.spacing)
    coeffs = np.empty(0, dtype=complex)
    energies = np.empty(0)
    recon = float("nan")
    if eigenstates is not None and len(eigenstates) > 0:
        coeffs, _ = bound_projection(traj.snapshot(0), eigenstates)
        energies = np.asarray(eigenstates.energies)
        cluster = np.zeros_like(loc.values)
        for a, E, s in zip(coeffs, energies, eigenstates.states):
            cluster += a * np.exp(-1j * E * T) * s.values
        recon = _norm(loc.values - cluster, uT.grid.spacing)
    verdict = PASS if localization <= localization_tol else FAIL
    return DecompositionResult(wo.phi_plus, loc, T, coeffs, energies, abs(cross), float(cross),
                               mass_total, wo.phi_plus.mass(), loc.mass(), localization,
                               wo.cauchy, wo.error_bar, verdict, recon)


def ac_reconstruction_residuals(traj: Trajectory, phi_plus: WaveFunction, eigenstates: Eigenstates,
                                times: Sequence[float]) -> np.ndarray:
    """||psi(T) - e^{i Delta T} phi_+ - sum a_j e^{-i E_j T} psi_j|| at each T."""
    coeffs, _ = bound_projection(traj.snapshot(0), eigenstates)
    out = []
    for T in times:
        uT = _snapshot_at(traj, T)
        r = uT.values - free_propagate(phi_plus, T).values
        for a, E, s in zip(coeffs, eigenstates.energies, eigenstates.states):
            r = r - a * np.exp(-1j * E * T) * s.values
        out.append(_norm(r, uT.grid.spacing))
    return np.array(out)


def wls_exclusion_check(traj: Trajectory, tolerance: float = 0.05) -> EstimateReport:
    """Ballistic spreading of continuum data: <x^2>/t^2 -> 4 <H>.

    Energy conservation turns all of <H> into kinetic energy only when no
    mass stays localized, so the fitted t^2 coefficient of <x^2> on [T/2, T]
    must match 4 <H>(0) to ``tolerance`` and exceed 4 eta ||psi||^2.
    """
    if not traj.model.is_linear:
        raise ProbeError("WLS exclusion check needs a linear model")
    x2 = np.array([second_moment(u) for _, u in traj])
    if x2[-1] < 10 * x2[0]:
        raise ProbeError("ballistic regime not reached: <x^2>(T) < 10 <x^2>(0)")
    from .evolution import energy
    u0 = traj.snapshot(0)
    H0 = energy(traj.model, u0, 0.0)
    t = traj.times
    late = t >= 0.5 * t[-1]
    c = float(np.polyfit(t[late], x2[late], 2)[0])
    predicted = 4.0 * H0
    eta = traj.metadata.get("energy_window", (0.0, 0.0))[0]
    rel = abs(c - predicted) / max(abs(predicted), 1e-300)
    floor_ok = c >= 4.0 * eta * u0.mass() * (1 - tolerance)
    margin = tolerance - rel
    verdict = PASS if (margin >= 0 and floor_ok and predicted > 0) else FAIL
    return EstimateReport("wls_exclusion", {"tolerance": tolerance, "eta": eta},
                          {"t": t, "x2": x2, "x2_over_t2": np.where(t > 0, x2 / np.where(t > 0, t, 1.0) ** 2, np.nan)},
                          {"t2_coefficient": c, "predicted": predicted, "relative_error": rel,
                           "floor": 4.0 * eta * u0.mass()}, verdict, margin)
