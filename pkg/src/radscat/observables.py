"""
Expectation tracking and propagation-estimate diagnostics.

Every probe reads a ``Trajectory`` (or a single snapshot) and returns an
``EstimateReport``: a time series, derived scalars, and a verdict against a
pinned, configurable threshold.  Probes never modify their input.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import scipy.fft as sfft
from scipy.interpolate import CubicSpline

from .cutoffs import SmoothCutoff, make_cutoff, smooth_step
from .evolution import EquationModel, Trajectory
from .grid import (RadialGrid, WaveFunction, derivative, extended_wavenumbers,
                   free_propagate, kinetic_energy, momentum_ext, odd_extension, resolution_fraction,
                   restrict, sine_coefficients, sine_synthesis)
from .operators import (DilationSpec, TANH_R_MIN, _symmetrized_first_order,
                        dilation_apply, gamma_apply, littlewood_paley, lp_band, log_multiplier)
from .operators import sech2_envelope_check

PASS = "PASS"
FAIL = "FAIL"
INCONCLUSIVE = "INCONCLUSIVE"
VERDICTS = (PASS, FAIL, INCONCLUSIVE)

# pinned thresholds; every probe echoes the values it used
DEFAULT_THRESHOLDS = {
    "bounded_factor": 2.0,
    "gamma_spread": 0.05,
    "gamma_se_factor": 3.0,
    "zero_floor": 1e-8,
    "envelope_factor": 1.1,
    "morawetz_band": 0.10,
    "cutoff_eps": 0.1,
    "increment_ratio": 0.5,
}


class ProbeError(ValueError):
    pass


@dataclass
class EstimateReport:
    """Outcome of one diagnostic: series, derived values, verdict and margin.

    ``margin`` is signed so that positive means the declared bound holds
    with room to spare (in the units of the quantity compared).
    """

    name: str
    params: Dict[str, object]
    series: Dict[str, np.ndarray] = field(default_factory=dict)
    values: Dict[str, float] = field(default_factory=dict)
    verdict: str = INCONCLUSIVE
    margin: float = float("nan")
    notes: List[str] = field(default_factory=list)

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"verdict must be one of {VERDICTS}")

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def series_csv(self) -> str:
        if not self.series:
            return ""
        keys = list(self.series)
        length = max(len(np.atleast_1d(self.series[k])) for k in keys)
        cols = []
        for k in keys:
            col = np.full(length, np.nan, dtype=complex)
            v = np.atleast_1d(self.series[k])
            col[:len(v)] = v
            cols.append(col)
        buf = io.StringIO()
        buf.write(",".join(keys) + "\n")
        for row in zip(*cols):
            buf.write(",".join(_fmt(x) for x in row) + "\n")
        return buf.getvalue()

    def to_record(self) -> str:
        """Self-describing text record: header block, values, CSV series."""
        lines = [f"[report {self.name}]", f"verdict = {self.verdict}",
                 f"margin = {_fmt(self.margin)}"]
        for k in sorted(self.params):
            lines.append(f"param.{k} = {_fmt(self.params[k])}")
        for k in sorted(self.values):
            lines.append(f"value.{k} = {_fmt(self.values[k])}")
        for n in self.notes:
            lines.append(f"note = {n}")
        lines.append("[series]")
        return "\n".join(lines) + "\n" + self.series_csv()

    def summary(self) -> dict:
        return {"name": self.name, "verdict": self.verdict, "margin": _jsonable(self.margin),
                "params": {k: _jsonable(v) for k, v in self.params.items()},
                "values": {k: _jsonable(v) for k, v in self.values.items()},
                "notes": list(self.notes)}


def _fmt(x) -> str:
    if isinstance(x, (complex, np.complexfloating)):
        if x.imag == 0:
            return f"{x.real:.17e}"
        return f"{x.real:.17e}{x.imag:+.17e}j"
    if isinstance(x, (float, np.floating, int, np.integer)) and not isinstance(x, bool):
        return f"{float(x):.17e}"
    return str(x)


def _jsonable(x):
    if isinstance(x, (np.floating, float)):
        return float(x) if np.isfinite(x) else str(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (tuple, list, np.ndarray)):
        return [_jsonable(v) for v in x]
    return x


@dataclass(frozen=True)
class ObservableProbe:
    """Scalar observer (t, WaveFunction) -> number evaluated every ``cadence`` time units."""

    name: str
    evaluator: Callable[[float, WaveFunction], complex]
    cadence: float = 0.0
    params: Dict[str, object] = field(default_factory=dict)

    def __call__(self, t: float, u: WaveFunction):
        value = self.evaluator(t, u)
        if not np.all(np.isfinite(value)):
            return float("nan")
        return value


# ---------------------------------------------------------------------------
# Small helpers
# ---------------------------------------------------------------------------

def _dot(u: np.ndarray, v: np.ndarray, h: float) -> complex:
    return complex(np.sum(np.conj(u) * v) * h)


def _expect(u: WaveFunction, Au) -> float:
    vals = Au.values if isinstance(Au, WaveFunction) else Au
    return _dot(u.values, vals, u.grid.spacing).real


def _norm(values: np.ndarray, h: float) -> float:
    return float(np.sqrt(np.sum(np.abs(values) ** 2) * h))


def _times(traj: Trajectory, t_min: float = 1.0):
    idx = np.nonzero(traj.times >= t_min - 1e-12)[0]
    return idx, traj.times[idx]


def _lap(values: np.ndarray, grid: RadialGrid) -> np.ndarray:
    h = grid.spacing
    return sine_synthesis(grid.wavenumbers ** 2 * sine_coefficients(values, h), h)


def _loglog_slope(x, y):
    """Least-squares slope of log y against log x with a 95% half-width."""
    x = np.log(np.asarray(x, dtype=float))
    y = np.log(np.asarray(y, dtype=float))
    if x.size < 2:
        return float("nan"), float("nan")
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    if x.size > 2:
        resid = y - A @ coef
        s2 = np.sum(resid ** 2) / (x.size - 2)
        se = math.sqrt(s2 / np.sum((x - x.mean()) ** 2))
    else:
        se = 0.0
    return float(coef[0]), 1.96 * se


def log_time_median(t, y) -> float:
    """Median of y with respect to the measure dt/t."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    lt = np.log(t)
    w = np.gradient(lt) if lt.size > 1 else np.ones(1)
    order = np.argsort(y)
    cw = np.cumsum(w[order])
    return float(y[order][np.searchsorted(cw, 0.5 * cw[-1])])


def bounded_verdict(t, y, factor: float = 2.0, floor: float = 0.0):
    """Boundedness of a positive series on [t_0, T].

    The late-time supremum (over [T/2, T]) is compared with ``factor``
    times the log-time median.  Growth like t^a gives a late/median ratio of
    about (T/t_0)^(a/2), which exceeds 2 for a = 1/2 once T/t_0 >= 16;
    bounded or decaying series give a ratio near or below 1.
    Returns (verdict, margin, late_sup, median).
    """
    t = np.asarray(t, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    if t.size < 4:
        return INCONCLUSIVE, float("nan"), float("nan"), float("nan")
    med = log_time_median(t, y)
    late = float(np.max(y[t >= 0.5 * t[-1]]))
    limit = max(factor * med, floor)
    return (PASS if late <= limit else FAIL), limit - late, late, med


def centered_derivative(t, y):
    """Centered differences at interior samples (uniform cadence required)."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y)
    dt = np.diff(t)
    if t.size < 3:
        raise ProbeError("need at least three samples for a centered difference")
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=1e-12):
        raise ProbeError("centered differences need a uniform snapshot cadence")
    return t[1:-1], (y[2:] - y[:-2]) / (2 * dt[0])


def second_difference(t, y):
    t = np.asarray(t, dtype=float)
    y = np.asarray(y)
    dt = np.diff(t)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=1e-12):
        raise ProbeError("second differences need a uniform snapshot cadence")
    return t[1:-1], (y[2:] - 2 * y[1:-1] + y[:-2]) / dt[0] ** 2


def exterior_cutoff(eps: float = 0.1) -> SmoothCutoff:
    """F_1(s >= 1) as a profile of s = r / scale."""
    return make_cutoff(1.0, np.inf, eps)


def _cutoff_values(F: SmoothCutoff, grid: RadialGrid, scale: float) -> np.ndarray:
    # scale 0 (t = 0) sends every node to infinity
    with np.errstate(divide="ignore"):
        return F(grid.nodes / scale)


def _cutoff_derivative(F: SmoothCutoff, grid: RadialGrid, scale: float) -> np.ndarray:
    return F.derivative(grid.nodes / scale, 1)


def transition_profile(F: SmoothCutoff, grid: RadialGrid, scale: float) -> np.ndarray:
    """F~_1 ~ F_1 F_1' on the transition shell, normalized to unit maximum."""
    p = F(grid.nodes / scale) * F.derivative(grid.nodes / scale, 1)
    m = np.max(np.abs(p))
    return p / m if m > 0 else p


# ---------------------------------------------------------------------------
# Observables for the Heisenberg identity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Observable:
    """Self-adjoint A with optional analytic i[-Delta + V, A] and dA/dt.

    ``apply(t, u)`` returns A u; ``commutator(t, u, model)`` returns
    i[-Delta + V, A] u.  Without a commutator the expectation is formed as
    -2 Im <H u, A u>, which is the same quantity evaluated weakly.
    """

    name: str
    apply: Callable[[float, WaveFunction], WaveFunction]
    commutator: Optional[Callable] = None
    time_derivative: Optional[Callable] = None
    commutes_with_potential: bool = False


def _first_order_weight(grid: RadialGrid, dphi: Callable) -> np.ndarray:
    """Odd extension of phi' on the periodic grid (phi even)."""
    n = grid.n_points
    x = np.arange(2 * n) * grid.spacing
    x = np.where(np.arange(2 * n) <= n, x, x - 2 * n * grid.spacing)
    return np.sign(x) * dphi(np.abs(x))


def multiplication_observable(phi: Callable, dphi: Callable, name: str = "phi(r)",
                              d2phi: Optional[Callable] = None) -> Observable:
    """A = phi(r); i[-Delta, phi] = phi' p + p phi'."""

    def apply(t, u):
        return WaveFunction(u.grid, phi(u.grid.nodes) * u.values)

    def commutator(t, u, model):
        w = _first_order_weight(u.grid, dphi)
        return WaveFunction(u.grid, 2.0 * _symmetrized_first_order(w, u).values)

    return Observable(name, apply, commutator, commutes_with_potential=True)


def radius_squared_observable() -> Observable:
    """A = |x|^2 with i[-Delta + V, x^2] = 4 A_dilation."""

    def apply(t, u):
        return WaveFunction(u.grid, u.grid.nodes ** 2 * u.values)

    def commutator(t, u, model):
        return WaveFunction(u.grid, 4.0 * dilation_apply(u).values)

    return Observable("x^2", apply, commutator, commutes_with_potential=True)


def dilation_observable() -> Observable:
    """A = (x.p + p.x)/2.

    The commutator is left to the generic -2 Im<H psi, A psi>, which is exact
    for the discrete operators (i[-Delta, A] = -2 Delta holds only up to
    the grid's spatial error).
    """

    def apply(t, u):
        return dilation_apply(u)

    return Observable("A", apply)


def kinetic_observable() -> Observable:
    def apply(t, u):
        return WaveFunction(u.grid, _lap(u.values, u.grid))

    return Observable("-Delta", apply)


def exterior_observable(scale: float = 10.0, eps: float = 0.1) -> Observable:
    F = exterior_cutoff(eps)
    return multiplication_observable(lambda r: F(r / scale),
                                     lambda r: F.derivative(r / scale, 1) / scale,
                                     name=f"F1(|x|/{scale})")


def _hamiltonian_linear(model: EquationModel, u: WaveFunction, t: float) -> np.ndarray:
    out = _lap(u.values, u.grid)
    if model.potential.kind != "zero":
        out = out + model.potential(u.grid.nodes, t) * u.values
    return out


def heisenberg_terms(model: EquationModel, observable: Observable, t: float, u: WaveFunction):
    """(<A>, <i[H_lin, A]> + <dA/dt>, -2 Im(A psi, N(psi)))."""
    h = u.grid.spacing
    Au = observable.apply(t, u)
    a = _expect(u, Au)
    if observable.commutator is not None:
        lin = _expect(u, observable.commutator(t, u, model))
        if model.potential.kind != "zero" and not observable.commutes_with_potential:
            lin += -2.0 * _dot(model.potential(u.grid.nodes, t) * u.values, Au.values, h).imag
    else:
        lin = -2.0 * _dot(_hamiltonian_linear(model, u, t), Au.values, h).imag
    if observable.time_derivative is not None:
        lin += _expect(u, observable.time_derivative(t, u))
    nl = 0.0
    if not model.is_linear:
        amp = np.abs(u.values) / u.grid.nodes
        Nu = model.nonlinear_only(amp) * u.values
        nl = -2.0 * _dot(Nu, Au.values, h).imag
    return a, lin, nl


def heisenberg_identity_check(traj: Trajectory, observable: Observable,
                              include_nonlinear: bool = True,
                              tolerance: Optional[float] = None) -> EstimateReport:
    """Compare the centered difference of <A>_t with the Heisenberg derivative.

    The residual is O(cadence^2) + O(dt^2); its scaling is checked by
    ``heisenberg_order_check`` on a pair of trajectories.
    """
    traj = traj.uniform()
    vals, lin, nl = [], [], []
    for t, u in traj:
        a, l_, n_ = heisenberg_terms(traj.model, observable, t, u)
        vals.append(a)
        lin.append(l_)
        nl.append(n_)
    vals, lin, nl = map(np.asarray, (vals, lin, nl))
    tc, lhs = centered_derivative(traj.times, vals)
    rhs = lin[1:-1] + (nl[1:-1] if include_nonlinear else 0.0)
    resid = np.abs(lhs - rhs)
    without_nl = np.abs(lhs - lin[1:-1])
    scale = max(np.max(np.abs(lhs)), np.max(np.abs(rhs)), 1e-300)
    report = EstimateReport(
        "heisenberg_identity", {"observable": observable.name, "dt": traj.dt,
                                "include_nonlinear": include_nonlinear},
        {"t": tc, "lhs": lhs, "commutator": lin[1:-1], "nonlinear": nl[1:-1], "residual": resid},
        {"max_residual": float(np.max(resid)), "scale": float(scale),
         "max_residual_without_nonlinear": float(np.max(without_nl)),
         "max_nonlinear_term": float(np.max(np.abs(nl)))})
    if tolerance is not None:
        report.margin = tolerance - report.values["max_residual"]
        report.verdict = PASS if report.margin >= 0 else FAIL
    return report


def order_ratio_report(name: str, coarse: float, fine: float, params: dict,
                       band=(3.6, 4.4), floor: float = 0.0) -> EstimateReport:
    """Verdict on an error ratio for a halved step (second order: ratio 4)."""
    ratio = coarse / fine if fine > 0 else float("inf")
    lo, hi = band
    if coarse <= floor:
        verdict, margin = INCONCLUSIVE, float("nan")
    else:
        margin = min(ratio - lo, hi - ratio)
        verdict = PASS if margin >= 0 else FAIL
    return EstimateReport(name, dict(params, band=band),
                          values={"coarse": coarse, "fine": fine, "ratio": ratio},
                          verdict=verdict, margin=margin)


def heisenberg_order_check(coarse: Trajectory, fine: Trajectory, observable: Observable,
                           band=(3.6, 4.4)) -> EstimateReport:
    """Halving-dt ratio of the maximal Heisenberg residual on common times."""
    rc = heisenberg_identity_check(coarse, observable)
    rf = heisenberg_identity_check(fine, observable)
    common = np.isin(np.round(rf.series["t"], 9), np.round(rc.series["t"], 9))
    ec = float(np.max(rc.series["residual"]))
    ef = float(np.max(rf.series["residual"][common]))
    rep = order_ratio_report("heisenberg_order", ec, ef,
                             {"observable": observable.name, "dt": coarse.dt})
    rep.values["max_residual_without_nonlinear"] = rc.values["max_residual_without_nonlinear"]
    return rep


# ---------------------------------------------------------------------------
# Propagation observables
# ---------------------------------------------------------------------------

def gamma_expectation(u: WaveFunction, F_values: np.ndarray, spec: Optional[DilationSpec] = None,
                      symmetric: bool = True) -> float:
    """<(F gamma + gamma F)/2> (symmetric) or <F gamma F>."""
    spec = spec or DilationSpec(u.grid)
    if symmetric:
        Fu = F_values * u.values
        gu = gamma_apply(spec, u).values
        return _dot(Fu, gu, u.grid.spacing).real
    Fu = WaveFunction(u.grid, F_values * u.values)
    return _dot(Fu.values, gamma_apply(spec, Fu).values, u.grid.spacing).real


def _check_alpha(alpha: float):
    if not 1.0 / 3.0 < alpha < 1.0:
        raise ProbeError(f"alpha must lie in (1/3, 1), got {alpha}")


def prob_gamma_series(traj: Trajectory, alpha: float, eps: float = 0.1,
                      t_min: float = 1.0) -> EstimateReport:
    """<(F_1 gamma + gamma F_1)/2> with F_1 = F_1(|x|/t^alpha >= 1).

    The angular-momentum term F_1 L^2/r^3 vanishes on radial data and is
    logged as an exact zero.
    """
    _check_alpha(alpha)
    F = exterior_cutoff(eps)
    spec = DilationSpec(traj.grid)
    idx, t = _times(traj, t_min)
    series = np.array([gamma_expectation(traj.snapshot(i), _cutoff_values(F, traj.grid, ti ** alpha),
                                         spec) for i, ti in zip(idx, t)])
    inc = np.diff(series)
    defect = float(-np.sum(inc[inc < 0]))
    scale = max(float(np.max(np.abs(series))) if series.size else 0.0, 1e-300)
    rep = EstimateReport("prob_gamma", {"alpha": alpha, "eps": eps},
                         {"t": t, "prob_gamma": series, "angular_term": np.zeros_like(t)},
                         {"monotonicity_defect": defect, "relative_defect": defect / scale,
                          "initial": float(series[0]) if series.size else float("nan"),
                          "final": float(series[-1]) if series.size else float("nan")})
    rep.notes.append("F1 L^2/r^3 term is identically zero for radial data")
    rep.verdict = PASS if defect <= 0.05 * scale else FAIL
    rep.margin = 0.05 * scale - defect
    return rep


def h_half_norm_sq(u: WaveFunction) -> float:
    """||u||^2_{H^{1/2}} = sum (1 + k) |c_k|^2."""
    c = sine_coefficients(u.values, u.grid.spacing)
    return float(np.sum((1.0 + u.grid.wavenumbers) * np.abs(c) ** 2))


def _window_meta(traj: Trajectory):
    w = traj.metadata.get("energy_window")
    if w is None:
        raise ProbeError("trajectory carries no energy-window metadata")
    return tuple(float(x) for x in w)


def pres1_integral(traj: Trajectory, alpha: float, eta: Optional[float] = None,
                   eps: float = 0.1, t_min: float = 1.0, m: int = 2) -> EstimateReport:
    """int_1^T t^-alpha ||sqrt(-Delta_r) F~_1 psi||^2 dt and its eta-weighted companion.

    The partial integral is sampled at T/4, T/2, T; convergence requires the
    later increment to be below half the earlier one.  Both normalizations
    of the companion bound's constant, eta^(-m+1) and eta^(-m-1), are
    recorded without choosing between them.
    """
    _check_alpha(alpha)
    lo, hi = _window_meta(traj)
    eta = lo if eta is None else eta
    F = exterior_cutoff(eps)
    idx, t = _times(traj, t_min)
    h = traj.grid.spacing
    k = traj.grid.wavenumbers
    integrand, integrand2 = [], []
    for i, ti in zip(idx, t):
        u = traj.snapshot(i)
        w = transition_profile(F, traj.grid, ti ** alpha) * u.values
        c = sine_coefficients(w, h)
        integrand.append(float(np.sum(k * np.abs(c) ** 2)) / ti ** alpha)
        integrand2.append(eta ** 2 * float(np.sum(np.abs(w) ** 2) * h) / ti ** alpha)
    integrand = np.array(integrand)
    integrand2 = np.array(integrand2)
    partial = np.concatenate([[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(t))])
    partial2 = np.concatenate([[0.0], np.cumsum(0.5 * (integrand2[1:] + integrand2[:-1]) * np.diff(t))])
    T = t[-1]
    at = lambda s: float(np.interp(s, t, partial))
    i1 = at(T / 2) - at(T / 4)
    i2 = at(T) - at(T / 2)
    u0 = traj.snapshot(0)
    h12 = h_half_norm_sq(u0)
    rep = EstimateReport("pres1", {"alpha": alpha, "eta": eta, "window": (lo, hi), "eps": eps, "m": m},
                         {"t": t, "integrand": integrand, "partial": partial,
                          "eta_integrand": integrand2, "eta_partial": partial2},
                         {"integral": float(partial[-1]), "h_half_norm_sq": h12,
                          "constant": float(partial[-1]) / h12 if h12 > 0 else 0.0,
                          "increment_ratio": i2 / i1 if i1 > 0 else 0.0,
                          "eta_integral": float(partial2[-1]),
                          "constant_eta_pow_1_minus_m": eta ** (1 - m),
                          "constant_eta_pow_minus_1_minus_m": eta ** (-1 - m)})
    total = float(partial[-1])
    if total <= DEFAULT_THRESHOLDS["zero_floor"] * max(u0.mass(), 1e-300):
        rep.verdict, rep.margin = PASS, 0.0
        rep.notes.append("integral at numerical zero")
    else:
        ratio = rep.values["increment_ratio"]
        rep.margin = DEFAULT_THRESHOLDS["increment_ratio"] - ratio
        rep.verdict = PASS if rep.margin > 0 else FAIL
    return rep


def _plateau(t, y, floor):
    q = t >= t[0] + 0.75 * (t[-1] - t[0])
    yq = y[q]
    mean = float(np.mean(yq))
    se = float(np.std(yq, ddof=1) / np.sqrt(yq.size)) if yq.size > 1 else 0.0
    drift = float(yq[-1] - yq[0])
    return mean, se, drift


def gamma_limit(traj: Trajectory, alphas: Sequence[float] = (0.5, 0.7, 0.9), eps: float = 0.1,
                spread_tol: float = 0.05, se_factor: float = 3.0, support_radius: Optional[float] = None,
                t_min: float = 1.0) -> EstimateReport:
    """Plateau of <F_1 gamma F_1> per alpha, the spread across alpha and a Gamma classification.

    Gamma counts as zero when |plateau| <= max(se_factor * standard error,
    zero_floor * mass); the floor absorbs round-off on exactly stationary
    states.  A plateau whose final-quarter drift exceeds spread_tol of its
    mean (and the zero threshold) is not reached and gives INCONCLUSIVE.
    """
    for a in alphas:
        _check_alpha(a)
    F = exterior_cutoff(eps)
    spec = DilationSpec(traj.grid)
    idx, t = _times(traj, t_min)
    mass0 = traj.snapshot(0).mass()
    floor = DEFAULT_THRESHOLDS["zero_floor"] * max(mass0, 1e-300)
    series, plateaus, ses, drifts = {"t": t}, [], [], []
    for a in alphas:
        y = np.array([gamma_expectation(traj.snapshot(i), _cutoff_values(F, traj.grid, ti ** a),
                                        spec, symmetric=False) for i, ti in zip(idx, t)])
        series[f"alpha={a}"] = y
        m, se, d = _plateau(t, y, floor)
        plateaus.append(m)
        ses.append(se)
        drifts.append(d)
    plateaus = np.array(plateaus)
    gamma = float(np.mean(plateaus))
    zero_tol = max(se_factor * max(ses), floor)
    spread = float(np.max(plateaus) - np.min(plateaus))
    rel_spread = spread / abs(gamma) if gamma != 0 else float("inf")
    values = {"gamma": gamma, "spread": spread, "relative_spread": rel_spread,
              "zero_threshold": zero_tol}
    for a, m, se, d in zip(alphas, plateaus, ses, drifts):
        values[f"plateau[{a}]"] = float(m)
        values[f"stderr[{a}]"] = float(se)
        values[f"drift[{a}]"] = float(d)
    rep = EstimateReport("gamma_limit", {"alphas": tuple(alphas), "eps": eps,
                                         "spread_tol": spread_tol, "se_factor": se_factor},
                         series, values)
    if support_radius is not None:
        needed = 5.0 * support_radius
        tq = t[0] + 0.75 * (t[-1] - t[0])
        if tq ** min(alphas) < needed:
            rep.notes.append(f"t^alpha at final quarter below 5x support radius ({needed})")
            rep.verdict = INCONCLUSIVE
            return rep
    if abs(gamma) <= zero_tol:
        rep.values["classification"] = 0.0
        rep.notes.append("Gamma = 0 within threshold")
        rep.verdict, rep.margin = PASS, zero_tol - abs(gamma)
        return rep
    if max(abs(d) for d in drifts) > spread_tol * abs(gamma):
        rep.notes.append("plateau not reached in the final quarter")
        rep.verdict = INCONCLUSIVE
        rep.values["classification"] = float(np.sign(gamma))
        return rep
    rep.values["classification"] = float(np.sign(gamma))
    rep.notes.append("Gamma > 0: free wave present" if gamma > 0 else "Gamma < 0")
    rep.margin = spread_tol - rel_spread
    rep.verdict = PASS if rep.margin >= 0 and gamma > 0 else FAIL
    return rep


def mean_radius(u: WaveFunction) -> float:
    return float(np.sum(u.grid.nodes * np.abs(u.values) ** 2) * u.grid.spacing) / max(u.mass(), 1e-300)


def second_moment(u: WaveFunction) -> float:
    return float(np.sum(u.grid.nodes ** 2 * np.abs(u.values) ** 2) * u.grid.spacing)


def weak_localization_diag(traj: Trajectory, factor: float = 2.0, t_min: float = 1.0) -> EstimateReport:
    """<|x|>_t / t^(1/2) on [1, T] with the bounded_verdict rule.

    The literal "sup over [1, T] against the median" comparison is reported
    as ``literal_ratio`` (it flags decaying ratios and accepts growing ones
    on uniform sampling, so it is not used for the verdict).
    """
    idx, t = _times(traj, t_min)
    r = np.array([mean_radius(traj.snapshot(i)) for i in idx])
    ratio = r / np.sqrt(t)
    verdict, margin, late, med = bounded_verdict(t, ratio, factor)
    lit = float(np.max(ratio) / np.median(ratio)) if ratio.size else float("nan")
    return EstimateReport("weak_localization", {"factor": factor},
                          {"t": t, "mean_radius": r, "ratio": ratio},
                          {"late_sup": late, "log_time_median": med, "late_over_median": late / med,
                           "literal_ratio": lit}, verdict, margin)


def scaling_derivative_norms(u: WaveFunction, k_max: int, resolution_tol: float = 0.01) -> List[float]:
    """||(x . grad)^k psi|| for k = 0..k_max.

    With psi = u / r, (x . grad) psi corresponds to (r d/dr - 1) u = (iA - 3/2) u.
    """
    out = [u.norm()]
    w = u
    for k in range(1, k_max + 1):
        if resolution_fraction(w) > resolution_tol:
            raise ProbeError(f"(x . grad)^{k} not resolved on this grid")
        Aw = dilation_apply(w)
        w = WaveFunction(u.grid, 1j * Aw.values - 1.5 * w.values)
        out.append(w.norm())
    return out


def maximal_velocity_diag(traj: Trajectory, M: float, E: Optional[float] = None,
                          tolerance: float = 1e-3, t_min: float = 1.0, eps: float = 0.1) -> EstimateReport:
    """||F(|x|/t >= 2M) psi(t)|| for energy-capped data.

    PASS when the series is non-increasing after its maximum and ends below
    ``tolerance``.
    """
    if E is None:
        cap = traj.metadata.get("energy_cap")
        if cap is None:
            win = traj.metadata.get("energy_window")
            if win is None:
                raise ProbeError("trajectory carries no energy metadata")
            cap = win[1]
        E = float(cap)
    notes = []
    if M ** 2 < 4 * E:
        notes.append(f"M^2 = {M ** 2} below 4E = {4 * E}: classical speed not exceeded")
    F = exterior_cutoff(eps)
    idx, t = _times(traj, t_min)
    h = traj.grid.spacing
    tail = np.array([_norm(_cutoff_values(F, traj.grid, 2 * M * ti) * traj.states[i], h)
                     for i, ti in zip(idx, t)])
    peak = int(np.argmax(tail))
    rises = np.diff(tail[peak:])
    increasing = float(np.max(rises)) if rises.size else 0.0
    ok = tail[-1] <= tolerance and increasing <= 1e-3 * max(tolerance, float(tail[peak]))
    return EstimateReport("maximal_velocity", {"M": M, "E": E, "tolerance": tolerance},
                          {"t": t, "tail_norm": tail},
                          {"final": float(tail[-1]), "max_rise_after_peak": increasing},
                          PASS if ok else FAIL, tolerance - float(tail[-1]), notes)


def _gradient_values(u: WaveFunction) -> np.ndarray:
    """r |grad psi| in the u-representation: u' - u/r."""
    return derivative(u) - u.values / u.grid.nodes


def regularity_probe(u0: WaveFunction, M_list: Sequence[float], K: float,
                     model: Optional[EquationModel] = None, slope_bound: float = -0.4,
                     alpha_norm: float = 0.25, tail_tol: float = 1e-8) -> EstimateReport:
    """Dyadic pieces P_M grad psi(0), freely evolved to t = M^-1/2 and split at K + M^1/2.

    The verdict compares the log-log slope of ||P_M grad psi(0)|| with
    ``slope_bound`` = -1/2 + 0.1.
    """
    grid = u0.grid
    r = grid.nodes
    outside = np.abs(u0.values[r > K]) ** 2
    tail = float(np.sum(outside) * grid.spacing) / max(u0.mass(), 1e-300)
    if tail > tail_tol:
        raise ProbeError(f"data not supported in B_K: tail fraction {tail:.3e} beyond K={K}")
    if model is not None and not model.is_linear:
        amp = np.abs(u0.values) / r
        if not np.all(np.isfinite(model.nonlinear_only(amp))):
            raise ProbeError("nonlinear coefficient unbounded on the data")
    lo, hi = lp_band(grid)
    for M in M_list:
        if not lo <= M <= hi / 2:
            raise ProbeError(f"M = {M} outside resolvable band [{lo:.4g}, {hi / 2:.4g}]")
    h = grid.spacing
    full, inner, outer = [], [], []
    for M in M_list:
        piece = littlewood_paley(M, u0)
        full.append(_norm(_gradient_values(piece), h))
        moved = free_propagate(piece, M ** -0.5)
        g = _gradient_values(moved)
        chi = smooth_step(r - (K + np.sqrt(M)))
        outer.append(_norm(chi * g, h))
        inner.append(_norm((1 - chi) * g, h))
    full = np.array(full)
    slope, half = _loglog_slope(M_list, full)
    implied = float(np.sqrt(np.sum(np.asarray(M_list) ** (2 * alpha_norm) * full ** 2)))
    return EstimateReport("regularity", {"K": K, "M_list": tuple(M_list), "slope_bound": slope_bound},
                          {"M": np.asarray(M_list, float), "band_norm": full,
                           "inside_piece": np.array(inner), "outside_piece": np.array(outer)},
                          {"slope": slope, "slope_halfwidth": half, "implied_D_norm": implied},
                            PASS if slope <= slope_bound else FAIL, slope_bound - slope)


def _morawetz_terms(u: WaveFunction, M_list, eps, spec):
    F = exterior_cutoff(eps)
    h = u.grid.spacing
    vals = []
    for M in M_list:
        s = u.grid.nodes / M
        w = np.sqrt(np.maximum(F(s) * F.derivative(s, 1), 0.0))
        g = gamma_apply(spec, WaveFunction(u.grid, w * u.values))
        vals.append(float(np.sum(np.abs(g.values) ** 2) * h))
    return np.array(vals)


def morawetz_scan(traj: Trajectory, M_list: Sequence[float], eps: float = 0.1,
                  compare_at: Optional[float] = None, band: float = 0.10) -> EstimateReport:
    """Exterior Morawetz proxy at representative times of the final quarter.

    Representative times t_n are final-quarter samples whose dyadic
    integrand lies below its running median.  The proxy for ||A psi(t_n)||
    is sqrt(||A_int psi||^2 + sum_M M^2 ||gamma sqrt(F_1 F_1') psi||^2)
    where A_int is the dilation part inside the smallest scale; the direct
    ||A psi(t_n)|| is reported next to it.  Boundedness compares the value on
    [0, T/2] with the one on [0, T] (``band`` relative change).
    """
    M_list = np.asarray(M_list, dtype=float)
    T = traj.times[-1]
    if np.sqrt(T) < 4 * M_list.min():
        raise ProbeError("trajectory too short: sqrt(T) < 4 M_min")
    spec = DilationSpec(traj.grid)
    F = exterior_cutoff(eps)

    def evaluate(t_end):
        sel = np.nonzero((traj.times >= 0.75 * t_end) & (traj.times <= t_end + 1e-12))[0]
        terms = np.array([_morawetz_terms(traj.snapshot(i), M_list, eps, spec) for i in sel])
        integrand = terms @ (M_list ** 2)
        running = np.array([np.median(integrand[:j + 1]) for j in range(integrand.size)])
        chosen = np.nonzero(integrand <= running)[0]
        proxies, direct = [], []
        for j in chosen:
            u = traj.snapshot(sel[j])
            inner = WaveFunction(u.grid, (1 - F(u.grid.nodes / M_list.min())) * u.values)
            a_in = dilation_apply(inner).norm() ** 2
            proxies.append(np.sqrt(a_in + integrand[j]))
            direct.append(dilation_apply(u).norm())
        return (traj.times[sel[chosen]], np.array(proxies), np.array(direct),
                terms[chosen].mean(axis=0))

    t_half, p_half, d_half, per_m_half = evaluate(T / 2)
    t_full, p_full, d_full, per_m = evaluate(T)
    ph, pf = float(np.median(p_half)), float(np.median(p_full))
    change = abs(pf - ph) / max(ph, 1e-300)
    rep = EstimateReport("morawetz", {"M_list": tuple(M_list), "eps": eps, "band": band},
                         {"t_n": t_full, "proxy": p_full, "direct_A_norm": d_full,
                          "M": M_list, "per_M": per_m},
                         {"proxy_half": ph, "proxy_full": pf, "relative_change": change,
                          "direct_half": float(np.median(d_half)),
                          "direct_full": float(np.median(d_full))},
                         PASS if change <= band else FAIL, band - change)
    return rep


def _half_line_multiplier(f: Callable, values0: np.ndarray, grid: RadialGrid, lg) -> np.ndarray:
    """f(A) on a node array with a value at r = 0 (no parity), via splines.

    Returns values on the interior nodes r_1..r_n.
    """
    r = np.concatenate([[0.0], grid.nodes])
    re = CubicSpline(r, values0.real)
    im = CubicSpline(r, values0.imag)
    x = np.exp(lg.y)
    inside = x < grid.r_max
    v = np.zeros(lg.y.size, dtype=complex)
    v[inside] = np.exp(0.5 * lg.y[inside]) * (re(x[inside]) + 1j * im(x[inside]))
    out = sfft.ifft(np.asarray(f(lg.lam)) * sfft.fft(v))
    sre = CubicSpline(lg.y, out.real)
    sim = CubicSpline(lg.y, out.imag)
    yr = np.log(grid.nodes)
    return (sre(yr) + 1j * sim(yr)) * grid.nodes ** -0.5


def _momentum_with_origin(u: WaveFunction) -> np.ndarray:
    k = extended_wavenumbers(u.grid)
    n = u.grid.n_points
    return momentum_ext(odd_extension(u.values), k)[..., :n + 1]


def ap_plus_series(traj: Trajectory, M: float, R: Optional[float] = None,
                   factor: float = 1.1) -> EstimateReport:
    """<A P+_{M,R}(A)>_t, its increments split into kinetic, sech^2 and interaction terms.

    The time averages of <P+> over T/4, T/2, T are fitted by tail + C/T
    (verdict needs C >= 0 up to round-off), and the
    sech^2 envelope is checked on the sampled spectrum.  The decomposition
    is reported with the literal coefficients; the measured derivative is
    reported beside it without a verdict on their agreement.
    """
    from .operators import log_grid
    R = np.sqrt(M) if R is None else R
    if R <= TANH_R_MIN:
        raise ProbeError(f"R must exceed 2/pi, got {R}")
    if M < 4:
        raise ProbeError("M must be at least 4")
    P = lambda a: 0.5 * (1.0 + np.tanh((a - M) / R))
    B = lambda a: a * P(a)
    sech_term = lambda a: a / (R * np.cosh(np.clip((a - M) / R, -350, 350)) ** 2)
    h = traj.grid.spacing
    b_series, p_series, kin, sech, inter = [], [], [], [], []
    model = traj.model
    for t, u in traj:
        lg = log_grid(u)
        Bu = log_multiplier(B, u, lg)
        Pu = log_multiplier(P, u, lg)
        b_series.append(_expect(u, Bu))
        p_series.append(_expect(u, Pu))
        pu = _momentum_with_origin(u)
        kin.append(_dot(pu[1:], _half_line_multiplier(P, pu, u.grid, lg), h).real)
        sech.append(_dot(pu[1:], _half_line_multiplier(sech_term, pu, u.grid, lg), h).real)
        amp = np.abs(u.values) / u.grid.nodes
        W = model.interaction(u.grid.nodes, t, amp)
        inter.append(-2.0 * _dot(W * u.values, Bu.values, h).imag)
    t = traj.times
    b_series, p_series = np.array(b_series), np.array(p_series)
    tc, db = centered_derivative(t, b_series)
    kin, sech, inter = map(np.array, (kin, sech, inter))
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (p_series[1:] + p_series[:-1]) * np.diff(t))])
    T = t[-1]
    avgs = {}
    for frac in (0.25, 0.5, 1.0):
        Ti = frac * T
        avgs[frac] = float(np.interp(Ti, t, cum) / Ti) if Ti > 0 else float("nan")
    env = sech2_envelope_check(M, R, factor=factor)
    # averages against tail + C / T; growing averages (C < 0) fail
    Ts = np.array([0.25, 0.5, 1.0]) * T
    tail, C = np.linalg.lstsq(np.column_stack([np.ones(3), 1.0 / Ts]),
                              np.array([avgs[0.25], avgs[0.5], avgs[1.0]]), rcond=None)[0]
    avg_ok = bool(C >= -1e-6 * max(abs(tail), 1e-12) * T)
    values = {"time_average_P_quarter": avgs[0.25], "time_average_P_half": avgs[0.5],
              "time_average_P": avgs[1.0], "tail_fit": float(tail), "C_fit": float(C),
              "envelope_ok": float(env.holds),
              "envelope_sup_negative": env.sup_negative_region,
              "envelope_sup_far": env.sup_far_region, "envelope_bound": env.envelope,
              "increasing": float(np.all(np.diff(b_series) >= -1e-12))}
    rep = EstimateReport("ap_plus", {"M": M, "R": R, "factor": factor},
                         {"t": t, "B": b_series, "P_plus": p_series, "kinetic_literal": kin,
                          "sech2_literal": sech, "interaction": inter,
                          "dB_dt": np.concatenate([[np.nan], db, [np.nan]])}, values)
    rep.verdict = PASS if (env.holds and avg_ok) else FAIL
    rep.margin = env.envelope - env.sup_negative_region
    return rep


def _momentum_multiplier(f: Callable, u: WaveFunction) -> WaveFunction:
    k = extended_wavenumbers(u.grid)
    U = odd_extension(u.values)
    return WaveFunction(u.grid, restrict(sfft.ifft(f(k) * sfft.fft(U))))


def second_microlocal_series(traj: Trajectory, alpha: float, beta: float, direction: str = ">=",
                             eps: float = 0.1, t_min: float = 1.0) -> EstimateReport:
    """<F_1 F_2(t^beta gamma >< 1) F_1> with F_1 = F_1(|x|/t^alpha >= 1).

    On the support of F_1 (r >= t^alpha >= 2) gamma coincides with p, so
    F_2(t^beta gamma) is realized as the multiplier F_2(t^beta k) on the odd
    periodic extension.
    """
    _check_alpha(alpha)
    if beta >= alpha:
        raise ProbeError(f"beta must be below alpha (got beta={beta}, alpha={alpha})")
    if direction not in (">=", "<="):
        raise ProbeError("direction must be '>=' or '<='")
    F1 = exterior_cutoff(eps)
    F2 = make_cutoff(1.0, np.inf, eps) if direction == ">=" else make_cutoff(-np.inf, 1.0, eps)
    idx, t = _times(traj, t_min)
    out = []
    for i, ti in zip(idx, t):
        u = traj.snapshot(i)
        f1 = _cutoff_values(F1, traj.grid, ti ** alpha)
        w = WaveFunction(traj.grid, f1 * u.values)
        v = _momentum_multiplier(lambda k: F2(ti ** beta * k), w)
        out.append(_dot(w.values, v.values, traj.grid.spacing).real)
    out = np.array(out)
    proxy = t ** (beta - alpha)
    verdict, margin, late, med = bounded_verdict(t, np.abs(out) + 1e-300,
                                                 DEFAULT_THRESHOLDS["bounded_factor"],
                                                 floor=DEFAULT_THRESHOLDS["zero_floor"])
    drift = float(out[-1] - out[len(out) // 2]) if out.size else float("nan")
    return EstimateReport("second_microlocal", {"alpha": alpha, "beta": beta, "direction": direction},
                          {"t": t, "value": out, "commutator_proxy": proxy},
                          {"final": float(out[-1]), "late_drift": drift, "late_sup": late},
                          verdict, margin)


def virial_check(traj: Trajectory, tolerance: Optional[float] = None) -> EstimateReport:
    """Second difference of <x^2> against <8(-Delta) - 4 x . grad V>."""
    if not traj.model.is_linear:
        raise ProbeError("virial identity probe needs a linear model")
    traj = traj.uniform()
    x2, rhs = [], []
    pot = traj.model.potential
    h = traj.grid.spacing
    flags = []
    layer = 0.9 * traj.grid.r_max
    for t, u in traj:
        x2.append(second_moment(u))
        val = 8.0 * kinetic_energy(u)
        if pot.kind != "zero":
            val -= 4.0 * float(np.sum(pot.radial_derivative(u.grid.nodes, t) * np.abs(u.values) ** 2) * h)
        rhs.append(val)
        if np.sum(np.abs(u.values[u.grid.nodes > layer]) ** 2) * h > 1e-10 * max(u.mass(), 1e-300):
            flags.append(t)
    x2, rhs = np.array(x2), np.array(rhs)
    tc, d2 = second_difference(traj.times, x2)
    resid = np.abs(d2 - rhs[1:-1])
    scale = max(float(np.max(np.abs(rhs))), 1e-300)
    values = {"max_residual": float(np.max(resid)), "relative_residual": float(np.max(resid)) / scale}
    if traj.model.kind == "free" and traj.times.size >= 3:
        coeff = np.polyfit(traj.times - traj.times[0], x2, 2)
        curvature = 2 * coeff[0]
        values["fit_curvature"] = float(curvature)
        values["curvature_relative_error"] = abs(curvature - rhs[0]) / max(abs(rhs[0]), 1e-300)
    rep = EstimateReport("virial", {"tolerance": tolerance},
                         {"t": traj.times, "x2": x2, "rhs": rhs,
                          "second_difference": np.concatenate([[np.nan], d2, [np.nan]])}, values)
    if flags:
        rep.notes.append(f"mass near the absorbing layer from t = {flags[0]}")
    if tolerance is not None:
        rep.margin = tolerance - values["relative_residual"]
        rep.verdict = PASS if rep.margin >= 0 and not flags else FAIL
    return rep


def exterior_decay_check(traj: Trajectory, alpha: Optional[float] = None,
                         beta0: Optional[float] = None, eps: float = 0.1,
                         t_min: float = 1.0) -> EstimateReport:
    """sup_r |F_1(|x|/t^alpha) V(|x|, t, |psi|)| t^beta0 along the run."""
    alpha = traj.model.alpha if alpha is None else alpha
    beta0 = traj.model.beta0 if beta0 is None else beta0
    _check_alpha(alpha)
    F = exterior_cutoff(eps)
    idx, t = _times(traj, t_min)
    r = traj.grid.nodes
    vals = []
    for i, ti in zip(idx, t):
        amp = np.abs(traj.states[i]) / r
        W = traj.model.interaction(r, ti, amp)
        vals.append(float(np.max(np.abs(F(r / ti ** alpha) * W))) * ti ** beta0)
    vals = np.array(vals)
    if np.all(vals == 0):
        return EstimateReport("exterior_decay", {"alpha": alpha, "beta0": beta0},
                              {"t": t, "weighted_sup": vals}, {"max": 0.0}, PASS, 0.0,
                              ["interaction identically zero"])
    verdict, margin, late, med = bounded_verdict(t, vals, DEFAULT_THRESHOLDS["bounded_factor"])
    return EstimateReport("exterior_decay", {"alpha": alpha, "beta0": beta0},
                          {"t": t, "weighted_sup": vals},
                          {"max": float(np.max(vals)), "late_sup": late, "log_time_median": med},
                          verdict, margin)


def low_frequency_series(traj: Trajectory, beta: float, eps: float = 0.1,
                         t_min: float = 1.0) -> EstimateReport:
    """||F_p(t^beta |p| <= 1) psi(t)||; diagnostic only (no inequality to check)."""
    if beta <= 1.0 / 3.0:
        raise ProbeError("beta must exceed 1/3")
    F = make_cutoff(-np.inf, 1.0, eps)
    idx, t = _times(traj, t_min)
    k = traj.grid.wavenumbers
    h = traj.grid.spacing
    out = np.array([float(np.sqrt(np.sum(np.abs(F(ti ** beta * k) *
                                                sine_coefficients(traj.states[i], h)) ** 2)))
                    for i, ti in zip(idx, t)])
    rep = EstimateReport("low_frequency", {"beta": beta}, {"t": t, "norm": out},
                         {"final": float(out[-1]) if out.size else float("nan")})
    rep.notes.append("diagnostic series only; no bound is asserted")
    return rep


# ---------------------------------------------------------------------------
# Scalar observers for use during evolution
# ---------------------------------------------------------------------------

def mass_probe() -> ObservableProbe:
    return ObservableProbe("mass", lambda t, u: u.mass())


def second_moment_probe() -> ObservableProbe:
    return ObservableProbe("x2", lambda t, u: second_moment(u))


def dilation_probe() -> ObservableProbe:
    return ObservableProbe("A", lambda t, u: _expect(u, dilation_apply(u)))


def prob_gamma_probe(alpha: float, eps: float = 0.1) -> ObservableProbe:
    _check_alpha(alpha)
    F = exterior_cutoff(eps)

    def ev(t, u):
        if t <= 0:
            return float("nan")
        return gamma_expectation(u, _cutoff_values(F, u.grid, t ** alpha))

    return ObservableProbe(f"prob_gamma[{alpha}]", ev, params={"alpha": alpha, "eps": eps})
