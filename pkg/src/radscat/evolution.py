"""
Time evolution for i d_t psi + Delta psi = N(psi) on radial data.

Writing N(psi) = W(r, t, |psi|) psi with W real, one Strang step is

    half kinetic (exact sine-spectrum phase)
    full phase exp(-i dt W) sampled at the step midpoint, with absorption
    half kinetic

which is unitary apart from the absorbing layer, whose removed mass is
logged.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla
from scipy.optimize import newton_krylov
from scipy.special import hyp2f1

from . import oracle
from .grid import (RadialGrid, WaveFunction, absorbing_mask, kinetic_energy,
                   sine_coefficients, sine_synthesis)

log = logging.getLogger(__name__)

FREE = "free"
STATIC = "static_potential"
TIME_DEPENDENT = "time_dependent_potential"
DEFOCUSING = "defocusing_power_plus_potential"
SATURATED = "saturated"
MODEL_KINDS = (FREE, STATIC, TIME_DEPENDENT, DEFOCUSING, SATURATED)


class ModelError(ValueError):
    pass


class StepError(RuntimeError):
    pass


class NoBoundStateError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Potentials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Potential:
    """Named radial potential profile V(r) or V(t, r).

    Kinds
    -----
    zero                          V = 0
    exp_well(depth, length)       -depth exp(-r / length)
    gaussian_well(depth, width)   -depth exp(-(r / width)^2)
    power(strength, q)            strength <r>^{-q}
    breathing(strength, q, omega, modulation)
                                  strength (1 + modulation sin(omega t)) <r>^{-q}
    """

    kind: str = "zero"
    params: tuple = ()

    KINDS = {"zero": 0, "exp_well": 2, "gaussian_well": 2, "power": 2, "breathing": 4}

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ModelError(f"unknown potential kind {self.kind!r}")
        if len(self.params) != self.KINDS[self.kind]:
            raise ModelError(f"{self.kind} takes {self.KINDS[self.kind]} parameters")

    @property
    def time_dependent(self) -> bool:
        return self.kind == "breathing"

    def __call__(self, r, t: float = 0.0) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        p = self.params
        if self.kind == "zero":
            return np.zeros_like(r)
        if self.kind == "exp_well":
            return -p[0] * np.exp(-r / p[1])
        if self.kind == "gaussian_well":
            return -p[0] * np.exp(-(r / p[1]) ** 2)
        if self.kind == "power":
            return p[0] * (1.0 + r ** 2) ** (-p[1] / 2)
        strength, q, omega, mod = p
        return strength * (1.0 + mod * np.sin(omega * t)) * (1.0 + r ** 2) ** (-q / 2)

    def radial_derivative(self, r, t: float = 0.0) -> np.ndarray:
        """r dV/dr (the x . grad V of the virial identity)."""
        r = np.asarray(r, dtype=float)
        p = self.params
        if self.kind == "zero":
            return np.zeros_like(r)
        if self.kind == "exp_well":
            return p[0] * r / p[1] * np.exp(-r / p[1])
        if self.kind == "gaussian_well":
            return 2 * p[0] * (r / p[1]) ** 2 * np.exp(-(r / p[1]) ** 2)
        q = p[1]
        return -q * r ** 2 / (1.0 + r ** 2) * self(r, t)

    def describe(self) -> str:
        return f"{self.kind}(" + ", ".join(repr(x) for x in self.params) + ")"


ZERO_POTENTIAL = Potential()


# ---------------------------------------------------------------------------
# Equation models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EquationModel:
    """Description of N(psi) = W(r, t, |psi|) psi.

    ``power`` is p of the defocusing term +|psi|^{p-1} psi; ``m``, ``n``
    are the saturated exponents of -|psi|^{m-1} psi / (1 + |psi|^{m-n}).
    ``potential`` is added linearly in every kind.  ``alpha`` and ``beta0``
    declare the exterior decay certificate checked at run time.
    """

    kind: str = FREE
    potential: Potential = ZERO_POTENTIAL
    power: Optional[float] = None
    m: Optional[float] = None
    n: Optional[float] = None
    q: Optional[float] = None
    envelope: Optional[float] = None
    alpha: float = 0.8
    beta0: float = 1.2

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ModelError(f"unknown model kind {self.kind!r}")
        if not 1.0 / 3.0 < self.alpha < 1.0:
            raise ModelError(f"alpha must lie in (1/3, 1), got {self.alpha}")
        if self.beta0 <= 1:
            raise ModelError(f"beta0 must exceed 1, got {self.beta0}")
        if self.kind == FREE and self.potential.kind != "zero":
            raise ModelError("free model carries no potential")
        if self.kind in (STATIC, DEFOCUSING) and self.potential.time_dependent:
            raise ModelError(f"{self.kind} needs a static potential")
        if self.kind == STATIC and self.potential.kind == "zero":
            raise ModelError("static_potential model needs a potential")
        if self.kind == DEFOCUSING:
            if self.power is None or not 7.0 / 3.0 < self.power < 5.0:
                raise ModelError(f"power must lie in (7/3, 5), got {self.power}")
        if self.kind == SATURATED:
            if self.m is None or self.m <= 7.0 / 3.0:
                raise ModelError(f"saturated m must exceed 7/3, got {self.m}")
            if self.n is None or not 1.0 < self.n < 7.0 / 3.0:
                raise ModelError(f"saturated n must lie in (1, 7/3), got {self.n}")
        if self.kind == TIME_DEPENDENT:
            if self.q is None or self.envelope is None:
                raise ModelError("time-dependent potential needs decay q and envelope C")
            self.check_envelope()

    def check_envelope(self, t_samples=None, r_samples=None):
        """Verify |V(t, r)| <= C (1 + r)^{-q} on a test lattice."""
        t = np.linspace(0.0, 50.0, 101) if t_samples is None else np.asarray(t_samples)
        r = np.linspace(0.0, 200.0, 801) if r_samples is None else np.asarray(r_samples)
        bound = self.envelope * (1.0 + r) ** (-self.q)
        for ti in t:
            if np.any(np.abs(self.potential(r, ti)) > bound * (1 + 1e-12)):
                raise ModelError(f"potential exceeds envelope C(1+r)^-q at t={ti}")

    @property
    def is_linear(self) -> bool:
        return self.kind in (FREE, STATIC, TIME_DEPENDENT)

    def interaction(self, r: np.ndarray, t: float, amplitude: np.ndarray) -> np.ndarray:
        """W(r, t, |psi|) so that N(psi) = W psi; ``amplitude`` is |psi|."""
        w = self.potential(r, t) if self.potential.kind != "zero" else np.zeros_like(r)
        if self.kind == DEFOCUSING:
            w = w + amplitude ** (self.power - 1)
        elif self.kind == SATURATED:
            w = w - amplitude ** (self.m - 1) / (1.0 + amplitude ** (self.m - self.n))
        return w

    def nonlinear_only(self, amplitude: np.ndarray) -> np.ndarray:
        if self.kind == DEFOCUSING:
            return amplitude ** (self.power - 1)
        if self.kind == SATURATED:
            return -amplitude ** (self.m - 1) / (1.0 + amplitude ** (self.m - self.n))
        return np.zeros_like(amplitude)

    def potential_energy_density(self, amplitude: np.ndarray) -> np.ndarray:
        """Phi(|psi|^2) with Phi' = W_nl, so the energy is <-Delta> + <V> + int Phi."""
        rho = amplitude ** 2
        if self.kind == DEFOCUSING:
            a = (self.power + 1) / 2
            return rho ** a / a
        if self.kind == SATURATED:
            a = (self.m - 1) / 2
            b = (self.m - self.n) / 2
            return -rho ** (a + 1) / (a + 1) * hyp2f1(1.0, (a + 1) / b, (a + 1) / b + 1.0, -rho ** b)
        return np.zeros_like(rho)


def free_model(**kw) -> EquationModel:
    return EquationModel(FREE, **kw)


def static_model(potential: Potential, **kw) -> EquationModel:
    return EquationModel(STATIC, potential, **kw)


def saturated_model(m: float = 3.0, n: float = 2.0, potential: Potential = ZERO_POTENTIAL,
                    **kw) -> EquationModel:
    return EquationModel(SATURATED, potential, m=m, n=n, **kw)


def defocusing_model(power: float, potential: Potential = ZERO_POTENTIAL, **kw) -> EquationModel:
    return EquationModel(DEFOCUSING, potential, power=power, **kw)


def time_dependent_model(potential: Potential, q: float, envelope: float, **kw) -> EquationModel:
    return EquationModel(TIME_DEPENDENT, potential, q=q, envelope=envelope, **kw)


def nonlinearity_eval(model: EquationModel, u: WaveFunction, t: float = 0.0) -> WaveFunction:
    """r N(psi) on the grid, with psi = u / r."""
    r = u.grid.nodes
    amp = np.abs(u.values) / r
    return WaveFunction(u.grid, model.interaction(r, t, amp) * u.values)


def energy(model: EquationModel, u: WaveFunction, t: float = 0.0) -> float:
    r = u.grid.nodes
    h = u.grid.spacing
    amp = np.abs(u.values) / r
    e = kinetic_energy(u)
    if model.potential.kind != "zero":
        e += float(np.sum(model.potential(r, t) * np.abs(u.values) ** 2) * h)
    if not model.is_linear:
        e += float(np.sum(model.potential_energy_density(amp) * r ** 2) * h)
    return e


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------

PHASE_WRAP_SAFETY = 0.25


def dt_max(model: EquationModel, u: WaveFunction, t: float = 0.0) -> float:
    """Largest admissible step: the interaction phase per step stays below
    ``PHASE_WRAP_SAFETY * pi``."""
    w = np.max(np.abs(model.interaction(u.grid.nodes, t, np.abs(u.values) / u.grid.nodes)))
    return np.inf if w == 0 else PHASE_WRAP_SAFETY * np.pi / w


@dataclass
class Stepper:
    """Strang splitting with cached kinetic phases."""

    grid: RadialGrid
    dt: float
    model: EquationModel
    absorb: Optional[np.ndarray] = None

    def __post_init__(self):
        k2 = self.grid.wavenumbers ** 2
        self.half_kinetic = np.exp(-0.5j * k2 * self.dt)
        self.r = self.grid.nodes
        self.h = self.grid.spacing
        self.damp = None if self.absorb is None else np.exp(-self.absorb * abs(self.dt))

    def kinetic(self, values):
        return sine_synthesis(self.half_kinetic * sine_coefficients(values, self.h), self.h)

    def step(self, values: np.ndarray, t: float):
        """Advance one step; returns (new values, mass absorbed)."""
        v = self.kinetic(values)
        mid = t + 0.5 * self.dt
        if self.model.kind != FREE:
            w = self.model.interaction(self.r, mid, np.abs(v) / self.r)
            if np.max(np.abs(w)) * abs(self.dt) > np.pi:
                raise StepError(f"interaction phase wraps at t={t}: reduce dt")
            v = v * np.exp(-1j * self.dt * w)
        absorbed = 0.0
        if self.damp is not None:
            before = np.sum(np.abs(v) ** 2)
            v = v * self.damp
            absorbed = float((before - np.sum(np.abs(v) ** 2)) * self.h)
        v = self.kinetic(v)
        if not np.all(np.isfinite(v)):
            raise StepError(f"non-finite values after step at t={t}")
        return v, absorbed


def step(u: WaveFunction, t: float, dt: float, model: EquationModel) -> WaveFunction:
    """One Strang step of size ``dt`` from time ``t`` (no absorption)."""
    limit = dt_max(model, u, t)
    if abs(dt) > limit:
        raise StepError(f"dt={dt} exceeds dt_max={limit:.4g}")
    v, _ = Stepper(u.grid, dt, model).step(u.values, t)
    return WaveFunction(u.grid, v)


@dataclass
class Trajectory:
    """Snapshots of a run at observer times plus conserved-quantity logs."""

    grid: RadialGrid
    model: EquationModel
    dt: float
    times: np.ndarray
    states: np.ndarray = field(repr=False)
    mass: np.ndarray = field(repr=False)
    energy: np.ndarray = field(repr=False)
    h1norm: np.ndarray = field(repr=False)
    absorbed: np.ndarray = field(repr=False)
    observations: Dict[str, list] = field(default_factory=dict, repr=False)
    failures: Dict[str, str] = field(default_factory=dict)
    metadata: Dict[str, object] = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    def snapshot(self, i: int) -> WaveFunction:
        return WaveFunction(self.grid, self.states[i])

    def at(self, t: float) -> WaveFunction:
        i = int(np.argmin(np.abs(self.times - t)))
        return self.snapshot(i)

    def __iter__(self):
        for i, t in enumerate(self.times):
            yield float(t), self.snapshot(i)

    def slice(self, t_max: float) -> "Trajectory":
        keep = self.times <= t_max + 1e-12
        return Trajectory(self.grid, self.model, self.dt, self.times[keep], self.states[keep],
                          self.mass[keep], self.energy[keep], self.h1norm[keep],
                          self.absorbed[keep], {}, {}, dict(self.metadata))

    def uniform(self) -> "Trajectory":
        """Samples on the dominant save cadence (drops extra snapshot times)."""
        if len(self.times) < 3:
            return self
        steps = np.round(np.diff(self.times) / abs(self.dt)).astype(int)
        vals, counts = np.unique(steps, return_counts=True)
        every = int(vals[np.argmax(counts)])
        k = np.round((self.times - self.times[0]) / abs(self.dt)).astype(int)
        keep = k % every == 0
        if keep.all():
            return self
        return Trajectory(self.grid, self.model, self.dt, self.times[keep], self.states[keep],
                          self.mass[keep], self.energy[keep], self.h1norm[keep],
                          self.absorbed[keep], {}, {}, dict(self.metadata))

    def conserved_csv(self) -> str:
        rows = ["t,mass,energy,h1norm,absorbed"]
        for row in zip(self.times, self.mass, self.energy, self.h1norm, self.absorbed):
            rows.append(",".join(f"{x:.17e}" for x in row))
        return "\n".join(rows) + "\n"


def evolve(u0: WaveFunction, t0: float, t1: float, dt: float, model: EquationModel,
           observers: Optional[Dict[str, Callable]] = None, save_every: float = None,
           snapshot_times: Optional[Sequence[float]] = None, absorb: bool = True,
           absorb_strength: float = 1.0, metadata: Optional[dict] = None) -> Trajectory:
    """Integrate from t0 to t1 with fixed step ``dt`` (negative for backward runs).

    Snapshots are stored every ``save_every`` time units (default: every
    step) and at the nearest steps to ``snapshot_times``.  Observers map
    (t, WaveFunction) to a scalar; a failing observer is recorded in
    ``failures`` and the run continues.
    """
    if dt == 0 or np.sign(t1 - t0) != np.sign(dt):
        raise StepError("dt must be nonzero and point from t0 to t1")
    n_steps = int(round((t1 - t0) / dt))
    if not np.isclose(n_steps * dt, t1 - t0, rtol=1e-9, atol=1e-12):
        raise StepError(f"(t1 - t0) = {t1 - t0} is not a multiple of dt = {dt}")
    limit = dt_max(model, u0, t0)
    if abs(dt) > limit:
        raise StepError(f"dt={dt} exceeds dt_max={limit:.4g}")
    every = 1 if save_every is None else max(1, int(round(save_every / abs(dt))))
    save_steps = set(range(0, n_steps + 1, every)) | {n_steps}
    if snapshot_times is not None:
        for ts in snapshot_times:
            save_steps.add(int(np.clip(round((ts - t0) / dt), 0, n_steps)))
    mask = absorbing_mask(u0.grid, strength=absorb_strength) if absorb else None
    stepper = Stepper(u0.grid, dt, model, mask)
    observers = observers or {}
    traj = Trajectory(u0.grid, model, dt, np.empty(0), np.empty((0, u0.grid.n_points), complex),
                      np.empty(0), np.empty(0), np.empty(0), np.empty(0),
                      {name: [] for name in observers}, {}, dict(metadata or {}))
    times, states, masses, energies, h1s, absorbed_log = [], [], [], [], [], []
    values = np.array(u0.values)
    absorbed = 0.0
    # without absorption the free scheme is the exact sine-spectrum phase,
    # so the steps between snapshots collapse into one propagation
    exact_free = model.kind == FREE and mask is None
    coeffs0 = sine_coefficients(values, u0.grid.spacing) if exact_free else None
    k2 = u0.grid.wavenumbers ** 2
    for i in range(n_steps + 1):
        t = t0 + i * dt
        if exact_free and i not in save_steps:
            continue
        if exact_free:
            values = sine_synthesis(np.exp(-1j * k2 * (i * dt)) * coeffs0, u0.grid.spacing)
        if i in save_steps:
            wf = WaveFunction(u0.grid, values)
            times.append(t)
            states.append(wf.values)
            m = wf.mass()
            kin = kinetic_energy(wf)
            masses.append(m)
            energies.append(energy(model, wf, t))
            h1s.append(np.sqrt(m + kin))
            absorbed_log.append(absorbed)
            for name, fn in observers.items():
                if name in traj.failures:
                    continue
                try:
                    traj.observations[name].append((t, fn(t, wf)))
                except Exception as exc:  # observer failure must not stop the run
                    traj.failures[name] = f"t={t}: {exc!r}"
                    log.warning("observer %s failed at t=%s: %s", name, t, exc)
        if i == n_steps or exact_free:
            continue
        values, a = stepper.step(values, t)
        absorbed += a
    traj.times = np.array(times)
    traj.states = np.array(states)
    traj.mass = np.array(masses)
    traj.energy = np.array(energies)
    traj.h1norm = np.array(h1s)
    traj.absorbed = np.array(absorbed_log)
    return traj


# ---------------------------------------------------------------------------
# Bound states
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Eigenstates:
    energies: np.ndarray
    states: List[WaveFunction]
    complete: bool

    def __len__(self):
        return len(self.states)

    def __iter__(self):
        return iter(zip(self.energies, self.states))


def _hamiltonian_operator(V: Potential, grid: RadialGrid):
    h = grid.spacing
    k2 = grid.wavenumbers ** 2
    v = V(grid.nodes[:-1])

    def mv(x):
        x = np.asarray(x).ravel()
        c = sine_coefficients(np.concatenate([x, [0.0]]), h)
        return sine_synthesis(k2 * c, h)[:-1].real + v * x

    n = grid.n_points - 1
    return spla.LinearOperator((n, n), matvec=mv, dtype=float)


def _fix_phase(vec):
    i = np.argmax(np.abs(vec))
    return vec * (np.abs(vec[i]) / vec[i])


EIGH_CAP = 4096


def eigenstates_linear(V: Potential, grid: RadialGrid, count: int = 1) -> Eigenstates:
    """Negative-energy eigenpairs of -Delta_r + V, lowest first.

    Dense diagonalization up to EIGH_CAP points (negative part only above
    the oracle cap), Lanczos beyond.  Returns
    fewer states (``complete=False``) when fewer bound states exist.
    """
    if count < 1:
        raise ValueError("count must be positive")
    h = grid.spacing
    if oracle.within_cap(grid):
        sd = oracle.dense_hamiltonian(V, grid).spectral
        w, U = sd.eigenvalues, sd.eigenvectors
    elif grid.n_points <= EIGH_CAP:
        # real symmetric sine-spectral matrix; only the negative part is computed
        n = grid.n_points
        j = np.arange(1, n)
        S = np.sqrt(2.0 / n) * np.sin(np.pi * np.outer(j, j) / n)
        Hm = (S * grid.wavenumbers ** 2) @ S
        del S
        Hm[np.diag_indices_from(Hm)] += V(grid.nodes[:-1])
        lo = float(np.min(V(grid.nodes[:-1]))) - 1.0
        w, U = sla.eigh(Hm, subset_by_value=(lo, 0.0), overwrite_a=True, check_finite=False)
    else:
        op = _hamiltonian_operator(V, grid)
        k = min(count + 2, grid.n_points - 3)
        w, U = spla.eigsh(op, k=k, which="SA", tol=1e-13, maxiter=20000, ncv=max(64, 4 * k))
        order = np.argsort(w)
        w, U = w[order], U[:, order]
    bound = np.nonzero(w < 0)[0][:count]
    states = []
    for j in bound:
        vec = np.concatenate([_fix_phase(U[:, j].astype(complex)), [0.0]]) / np.sqrt(h)
        states.append(WaveFunction(grid, vec))
    complete = len(states) == count
    if not complete:
        warnings.warn(f"requested {count} bound states, found {len(states)}", RuntimeWarning)
    return Eigenstates(w[bound], states, complete)


def _stationary_residual(model: EquationModel, u: WaveFunction):
    """(H(u) u - mu u, mu) with mu the Rayleigh quotient."""
    Hu = _apply_h(model, u.values, u.grid)
    mu = float(np.real(np.sum(Hu * np.conj(u.values))) / np.sum(np.abs(u.values) ** 2))
    return Hu - mu * u.values, mu


def _apply_h(model: EquationModel, values: np.ndarray, grid: RadialGrid) -> np.ndarray:
    h = grid.spacing
    r = grid.nodes
    lap = sine_synthesis(grid.wavenumbers ** 2 * sine_coefficients(values, h), h)
    return lap + model.interaction(r, 0.0, np.abs(values) / r) * values


def _imaginary_time_flow(model: EquationModel, grid: RadialGrid, u: np.ndarray, mass: float,
                         max_iter: int) -> np.ndarray:
    """Normalized split-step imaginary-time flow with a shrinking step."""
    r = grid.nodes
    h = grid.spacing
    k2 = grid.wavenumbers ** 2
    u = u * np.sqrt(mass / (np.sum(u ** 2) * h))
    for tau in (0.05, 0.01, 0.002):
        half = np.exp(-0.5 * k2 * tau)
        mu_prev = np.inf
        for it in range(max_iter):
            u = sine_synthesis(half * sine_coefficients(u, h), h).real
            u = u * np.exp(-tau * model.interaction(r, 0.0, np.abs(u) / r))
            u = sine_synthesis(half * sine_coefficients(u, h), h).real
            u = u * np.sqrt(mass / (np.sum(u ** 2) * h))
            if it % 50 == 0:
                _, mu = _stationary_residual(model, WaveFunction(grid, u))
                if abs(mu - mu_prev) < 1e-10 * max(1.0, abs(mu)):
                    break
                mu_prev = mu
    return u


def ground_state(model: EquationModel, mass: float, grid: RadialGrid,
                 initial: Optional[WaveFunction] = None, tol: float = 1e-8,
                 max_iter: int = 20000) -> WaveFunction:
    """Positive ground state with ||u||^2 = mass.

    Normalized imaginary-time flow (split-step, shrinking step) followed by
    a Newton-Krylov polish of -u'' + W(u) u = mu u, ||u||^2 = mass.
    Raises ``NoBoundStateError`` when the flow settles on an energy at or
    above the continuum threshold.
    """
    if model.potential.time_dependent:
        raise ModelError("ground states need a static model")
    r = grid.nodes
    h = grid.spacing
    k2 = grid.wavenumbers ** 2
    if initial is None:
        # the bound state's scale does not grow with the box; a box-sized
        # seed is nearly free and the flow can stall above threshold
        seeds = [r * np.exp(-(r / w) ** 2) for w in dict.fromkeys((2.0, max(2.0, 0.02 * grid.r_max)))]
    else:
        seeds = [np.abs(initial.values)]
    for u in seeds:
        u = _imaginary_time_flow(model, grid, u, mass, max_iter)
        res, mu = _stationary_residual(model, WaveFunction(grid, u))
        if mu < 0:
            break
    else:
        raise NoBoundStateError(f"flow settled at mu={mu:.4g} >= 0: no bound state")

    n = grid.n_points - 1
    shift = abs(mu)
    precond_diag = 1.0 / (k2 + shift)

    def F(x):
        v = np.concatenate([x[:n], [0.0]])
        m = x[n]
        out = np.empty(n + 1)
        out[:n] = (_apply_h(model, v, grid).real - m * v)[:n]
        out[n] = (np.sum(v ** 2) * h - mass) / mass
        return out

    def precond(x):
        y = np.empty_like(x)
        c = sine_coefficients(np.concatenate([x[:n], [0.0]]), h)
        y[:n] = sine_synthesis(precond_diag * c, h)[:n].real
        y[n] = x[n]
        return y

    M = spla.LinearOperator((n + 1, n + 1), matvec=precond)
    x0 = np.concatenate([u[:n], [mu]])
    scale = np.sqrt(mass / h)
    try:
        sol = newton_krylov(F, x0, inner_M=M, f_tol=tol * 1e-2 * scale, maxiter=200,
                            method="gmres")
    except Exception as exc:
        raise NoBoundStateError(f"Newton polish failed: {exc}") from exc
    u = np.concatenate([sol[:n], [0.0]])
    if u[np.argmax(np.abs(u))] < 0:
        u = -u
    out = WaveFunction(grid, u)
    res, mu = _stationary_residual(model, out)
    rel = np.sqrt(np.sum(np.abs(res) ** 2) * h) / out.norm()
    if rel > tol or mu >= 0:
        raise NoBoundStateError(f"stationary residual {rel:.3e} (mu={mu:.4g}) after polish")
    return out


def chemical_potential(model: EquationModel, u: WaveFunction) -> float:
    return _stationary_residual(model, u)[1]


def stationary_residual(model: EquationModel, u: WaveFunction) -> float:
    res, _ = _stationary_residual(model, u)
    return float(np.sqrt(np.sum(np.abs(res) ** 2) * u.grid.spacing) / u.norm())
