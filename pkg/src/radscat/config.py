"""Scenario configuration: sectioned key-value files, validation and presets.

A scenario file has the sections ``[grid]``, ``[model]``, ``[initial]``,
``[run]``, ``[observers]`` and ``[output]`` plus one ``[probe <name>]``
section per probe that needs parameters.  Values are plain numbers, words
or comma-separated lists.  ``ScenarioConfig.to_text`` writes a canonical
form that ``parse_config`` reads back to an equal object.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .evolution import (EquationModel, ModelError, Potential, eigenstates_linear, ground_state,
                        MODEL_KINDS)
from .grid import GridError, RadialGrid, WaveFunction, make_grid
from .scattering import EnergyWindow, WindowError

__all__ = ["ConfigError", "ScenarioConfig", "PRESETS", "parse_config", "load_config",
           "build_initial", "probe_names"]

PRESETS = ("gaussian", "outgoing_packet", "bound_state", "soliton", "mixture")

SECTIONS = ("grid", "model", "initial", "run", "observers", "output")

# keys accepted per fixed section ([initial] keys are preset parameters)
SECTION_KEYS: Dict[str, Tuple[str, ...]] = {
    "grid": ("n_points", "r_max"),
    "model": ("kind", "potential", "potential_params", "power", "m", "n", "q", "envelope",
              "alpha", "beta0"),
    "run": ("t0", "t1", "dt", "save_every", "snapshot_times", "absorb"),
    "observers": ("probes",),
    "output": ("directory",),
}

# probe name -> allowed parameter keys (all optional)
PROBE_PARAMS: Dict[str, Tuple[str, ...]] = {
    "gamma_limit": ("alphas", "eps", "spread_tol", "se_factor", "support_radius"),
    "prob_gamma": ("alpha", "eps"),
    "pres1": ("alpha", "eta"),
    "weak_localization": ("factor",),
    "morawetz": ("m_list", "eps", "band"),
    "virial": ("tolerance",),
    "heisenberg": ("observable", "tolerance"),
    "exterior_decay": ("alpha", "beta0"),
    "low_frequency": ("beta", "eps"),
    "second_microlocal": ("alpha", "beta"),
    "ap_plus": ("m", "r"),
    "maximal_velocity": ("m",),
    "cook": ("alpha", "sigma"),
    "wave_operator": ("alpha", "sample_times", "eps", "factor"),
    "wls_exclusion": ("tolerance",),
}


def probe_names() -> Tuple[str, ...]:
    return tuple(sorted(PROBE_PARAMS))


class ConfigError(ValueError):
    """Malformed or inconsistent scenario configuration."""


def _floats(text: str) -> Tuple[float, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(float(x) for x in text.split(","))


def _words(text: str) -> Tuple[str, ...]:
    return tuple(w.strip() for w in text.split(",") if w.strip())


def _num(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (tuple, list)):
        return ", ".join(_num(v) for v in x)
    return str(x)


def _value(text: str):
    """Number, list of numbers, boolean or word."""
    t = text.strip()
    low = t.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if "," in t:
        parts = _words(t)
        try:
            return tuple(float(p) for p in parts)
        except ValueError:
            return parts
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        return t


@dataclass(frozen=True)
class GridBlock:
    n_points: int
    r_max: float


@dataclass(frozen=True)
class ModelBlock:
    kind: str
    potential: str = "zero"
    potential_params: Tuple[float, ...] = ()
    power: float = 0.0
    m: float = 3.0
    n: float = 2.0
    q: float = 0.0
    envelope: float = 0.0
    alpha: float = 0.8
    beta0: float = 1.2


@dataclass(frozen=True)
class RunBlock:
    t0: float
    t1: float
    dt: float
    save_every: float
    snapshot_times: Tuple[float, ...] = ()
    absorb: bool = True


@dataclass(frozen=True)
class ScenarioConfig:
    """Parsed scenario.  ``initial`` and ``probes`` keep their raw parameter maps."""

    grid: GridBlock
    model: ModelBlock
    preset: str
    initial: Dict[str, object]
    run: RunBlock
    probes: Tuple[str, ...]
    probe_params: Dict[str, Dict[str, object]] = field(default_factory=dict)
    output: str = ""

    # -- construction of runtime objects ----------------------------------

    def make_grid(self) -> RadialGrid:
        return make_grid(self.grid.n_points, self.grid.r_max)

    def make_potential(self) -> Potential:
        return Potential(self.model.potential, tuple(self.model.potential_params))

    def make_model(self) -> EquationModel:
        b = self.model
        return EquationModel(b.kind, self.make_potential(), b.power, b.m, b.n, b.q, b.envelope,
                             b.alpha, b.beta0)

    # -- serialization ------------------------------------------------------

    def to_text(self) -> str:
        g, m, r = self.grid, self.model, self.run
        lines = ["[grid]", f"n_points = {g.n_points}", f"r_max = {_num(g.r_max)}", ""]
        lines += ["[model]", f"kind = {m.kind}", f"potential = {m.potential}"]
        if m.potential_params:
            lines.append(f"potential_params = {_num(m.potential_params)}")
        for key in ("power", "m", "n", "q", "envelope", "alpha", "beta0"):
            lines.append(f"{key} = {_num(getattr(m, key))}")
        lines += ["", "[initial]", f"preset = {self.preset}"]
        for k in sorted(self.initial):
            lines.append(f"{k} = {_num(self.initial[k])}")
        lines += ["", "[run]", f"t0 = {_num(r.t0)}", f"t1 = {_num(r.t1)}", f"dt = {_num(r.dt)}",
                  f"save_every = {_num(r.save_every)}"]
        if r.snapshot_times:
            lines.append(f"snapshot_times = {_num(r.snapshot_times)}")
        lines.append(f"absorb = {_num(r.absorb)}")
        lines += ["", "[observers]", f"probes = {', '.join(self.probes)}", ""]
        lines += ["[output]", f"directory = {self.output}", ""]
        for name in self.probes:
            params = self.probe_params.get(name, {})
            if params:
                lines.append(f"[probe {name}]")
                for k in sorted(params):
                    lines.append(f"{k} = {_num(params[k])}")
                lines.append("")
        return "\n".join(lines)

    def validate(self) -> None:
        """Re-run the constructors' own checks on every block."""
        try:
            grid = self.make_grid()
            self.make_model()
            if self.preset == "outgoing_packet" and "window" in self.initial:
                w = self.initial["window"]
                EnergyWindow(float(w[0]), float(w[1]), eps=float(self.initial.get("window_eps", 0.1)))
        except (GridError, ModelError, WindowError) as exc:
            raise ConfigError(str(exc)) from exc
        r = self.run
        if not r.dt > 0 or not r.t1 > r.t0:
            raise ConfigError("run needs dt > 0 and t1 > t0")
        if not r.save_every > 0:
            raise ConfigError("save_every must be positive")
        steps = (r.t1 - r.t0) / r.dt
        if abs(steps - round(steps)) > 1e-6 * max(1.0, steps):
            raise ConfigError(f"(t1 - t0) = {r.t1 - r.t0} is not a multiple of dt = {r.dt}")
        for t in r.snapshot_times:
            if not r.t0 <= t <= r.t1:
                raise ConfigError(f"snapshot time {t} outside [{r.t0}, {r.t1}]")
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown initial preset {self.preset!r}; choose from {PRESETS}")
        if self.preset == "mixture":
            comps = self.initial.get("components", ())
            comps = (comps,) if isinstance(comps, str) else tuple(comps)
            weights = self.initial.get("weights", ())
            weights = (weights,) if isinstance(weights, (int, float)) else tuple(weights)
            if not comps or len(comps) != len(weights):
                raise ConfigError("mixture needs matching 'components' and 'weights'")
            for c in comps:
                if c not in PRESETS or c == "mixture":
                    raise ConfigError(f"unknown mixture component {c!r}")
        for name in self.probes:
            if name not in PROBE_PARAMS:
                raise ConfigError(f"unknown probe {name!r}; known probes: {', '.join(probe_names())}")
            for k in self.probe_params.get(name, {}):
                if k not in PROBE_PARAMS[name]:
                    raise ConfigError(f"probe {name!r} has no parameter {k!r}")
        del grid


def _get(section, key, conv, default=None, required=False):
    if key not in section:
        if required:
            raise ConfigError(f"[{section.name}] missing key {key!r}")
        return default
    try:
        return conv(section[key])
    except ValueError as exc:
        raise ConfigError(f"[{section.name}] {key}: {exc}") from exc


def _bool(text: str) -> bool:
    v = _value(text)
    if not isinstance(v, bool):
        raise ValueError(f"expected a boolean, got {text!r}")
    return v


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate a scenario; raises ConfigError on any defect."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"parse error: {exc}") from exc
    for s in ("grid", "model", "initial", "run"):
        if not cp.has_section(s):
            raise ConfigError(f"missing section [{s}]")
    known = set(SECTIONS)
    for s in cp.sections():
        if s not in known and not s.startswith("probe "):
            raise ConfigError(f"unknown section [{s}]")
    for s, keys in SECTION_KEYS.items():
        if cp.has_section(s):
            extra = sorted(set(cp[s]) - set(keys))
            if extra:
                raise ConfigError(f"[{s}] unknown key(s): {', '.join(extra)}")
    g = cp["grid"]
    grid = GridBlock(_get(g, "n_points", int, required=True), _get(g, "r_max", float, required=True))
    m = cp["model"]
    kind = _get(m, "kind", str.strip, required=True)
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; choose from {MODEL_KINDS}")
    model = ModelBlock(kind, _get(m, "potential", str.strip, "zero"),
                       _get(m, "potential_params", _floats, ()),
                       _get(m, "power", float, 0.0), _get(m, "m", float, 3.0),
                       _get(m, "n", float, 2.0), _get(m, "q", float, 0.0),
                       _get(m, "envelope", float, 0.0), _get(m, "alpha", float, 0.8),
                       _get(m, "beta0", float, 1.2))
    ini = cp["initial"]
    preset = _get(ini, "preset", str.strip, required=True)
    initial = {k: _value(v) for k, v in ini.items() if k != "preset"}
    r = cp["run"]
    run = RunBlock(_get(r, "t0", float, 0.0), _get(r, "t1", float, required=True),
                   _get(r, "dt", float, required=True), _get(r, "save_every", float, 1.0),
                   _get(r, "snapshot_times", _floats, ()), _get(r, "absorb", _bool, True))
    probes: Tuple[str, ...] = ()
    if cp.has_section("observers"):
        probes = _get(cp["observers"], "probes", _words, ())
    params: Dict[str, Dict[str, object]] = {}
    for s in cp.sections():
        if s.startswith("probe "):
            name = s[len("probe "):].strip()
            if name not in probes:
                raise ConfigError(f"[{s}] configures a probe not listed in [observers]")
            params[name] = {k: _value(v) for k, v in cp[s].items()}
    output = cp["output"].get("directory", "").strip() if cp.has_section("output") else ""
    cfg = ScenarioConfig(grid, model, preset, initial, run, probes, params, output)
    cfg.validate()
    return cfg


def load_config(path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text)


# ---------------------------------------------------------------------------
# Initial data
# ---------------------------------------------------------------------------

def _packet(grid: RadialGrid, p: Dict[str, object]) -> WaveFunction:
    """r exp(-(r - center)^2 / (2 width^2)) exp(i momentum r)."""
    c = float(p.get("center", 0.0))
    w = float(p.get("width", 1.0))
    k = float(p.get("momentum", 0.0))
    r = grid.nodes
    return WaveFunction(grid, r * np.exp(-(r - c) ** 2 / (2 * w * w)) * np.exp(1j * k * r))


def _scaled(u: WaveFunction, mass: float) -> WaveFunction:
    norm = u.norm()
    if norm == 0:
        raise ConfigError("initial data vanishes on the grid")
    return u * (np.sqrt(mass) / norm)


def _component(cfg: ScenarioConfig, preset: str, p: Dict[str, object], grid: RadialGrid,
               model: EquationModel) -> WaveFunction:
    mass = float(p.get("mass", 1.0))
    if preset == "gaussian":
        return _scaled(_packet(grid, p), mass)
    if preset == "outgoing_packet":
        from .scattering import energy_window
        u = _packet(grid, dict(p, momentum=p.get("momentum", 1.0), center=p.get("center", 10.0)))
        if "window" in p:
            lo, hi = (float(x) for x in p["window"])
            win = EnergyWindow(lo, hi, eps=float(p.get("window_eps", 0.1)))
            u = energy_window(u, win, cfg.make_potential())
        return _scaled(u, mass)
    if preset == "bound_state":
        index = int(p.get("index", 0))
        es = eigenstates_linear(cfg.make_potential(), grid, index + 1)
        if len(es) <= index:
            raise ConfigError(f"potential has no bound state with index {index}")
        return es.states[index] * np.sqrt(mass)
    if preset == "soliton":
        return ground_state(model, mass, grid)
    raise ConfigError(f"unknown preset {preset!r}")


def build_initial(cfg: ScenarioConfig, grid: Optional[RadialGrid] = None,
                  model: Optional[EquationModel] = None) -> WaveFunction:
    """Initial wave function for the configured preset.

    A mixture takes ``components`` and ``weights``; keys prefixed with a
    component name and a dot (``outgoing_packet.center``) go to that
    component, other keys are shared.
    """
    grid = grid or cfg.make_grid()
    model = model or cfg.make_model()
    if cfg.preset != "mixture":
        return _component(cfg, cfg.preset, cfg.initial, grid, model)
    comps = cfg.initial["components"]
    comps = (comps,) if isinstance(comps, str) else tuple(comps)
    weights = cfg.initial["weights"]
    weights = (weights,) if isinstance(weights, (int, float)) else tuple(weights)
    shared = {k: v for k, v in cfg.initial.items()
              if "." not in k and k not in ("components", "weights")}
    total = WaveFunction(grid, np.zeros(grid.n_points, dtype=complex))
    for name, wgt in zip(comps, weights):
        own = {k.split(".", 1)[1]: v for k, v in cfg.initial.items() if k.startswith(name + ".")}
        part = _component(cfg, name, dict(shared, **own), grid, model)
        total = total + part * float(wgt)
    return total
