"""Command-line scenario runner.

Subcommands::

    radscat run <config> [--out DIR]
    radscat verify {algebra,oracle,estimates,scattering,all}
    radscat decompose <run dir> --alpha A [--eps E]
    radscat oracle-compare <config> [--out DIR]

Exit status: 0 all verdicts PASS (or INCONCLUSIVE), 1 some verdict FAIL,
2 usage or configuration error, 3 runtime failure.  Run directories live
under ``$RADSCAT_OUTPUT_ROOT`` (default ``./radscat-runs``) unless ``--out``
or the config's ``[output] directory`` says otherwise.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import warnings
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__, oracle
from .config import ConfigError, ScenarioConfig, build_initial, load_config, parse_config
from .evolution import (Eigenstates, ModelError, NoBoundStateError, StepError, Trajectory,
                        eigenstates_linear, energy, evolve)
from .grid import GridError, kinetic_energy, load_wavefunction, save_wavefunction
from .observables import (FAIL, INCONCLUSIVE, PASS, EstimateReport, ProbeError, ap_plus_series,
                          dilation_observable, exterior_decay_check, exterior_observable,
                          gamma_limit, heisenberg_identity_check, low_frequency_series,
                          maximal_velocity_diag, morawetz_scan, order_ratio_report,
                          pres1_integral, prob_gamma_series, radius_squared_observable,
                          second_microlocal_series, virial_check, weak_localization_diag)
from .scattering import (DecompositionError, WindowError, asymptotic_decompose,
                         cauchy_rate_report, channel_wave_operator, cook_integrand,
                         wls_exclusion_check)

log = logging.getLogger("radscat")

OUTPUT_ENV = "RADSCAT_OUTPUT_ROOT"
DEFAULT_ROOT = "radscat-runs"

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3

ERROR = "ERROR"


class UsageError(Exception):
    """Bad command-line input detected after argument parsing."""


# ---------------------------------------------------------------------------
# Probe dispatch
# ---------------------------------------------------------------------------

_OBSERVABLES = {"A": dilation_observable, "x2": radius_squared_observable,
                "exterior": exterior_observable}


def _tuple(v) -> tuple:
    return tuple(v) if isinstance(v, (tuple, list)) else (v,)


def _run_probe(name: str, traj: Trajectory, p: Dict[str, object]) -> EstimateReport:
    if name == "gamma_limit":
        kw = {k: p[k] for k in ("eps", "spread_tol", "se_factor", "support_radius") if k in p}
        if "alphas" in p:
            kw["alphas"] = tuple(float(a) for a in _tuple(p["alphas"]))
        return gamma_limit(traj, **kw)
    if name == "prob_gamma":
        return prob_gamma_series(traj, float(p.get("alpha", traj.model.alpha)), float(p.get("eps", 0.1)))
    if name == "pres1":
        return pres1_integral(traj, float(p.get("alpha", traj.model.alpha)), p.get("eta"))
    if name == "weak_localization":
        return weak_localization_diag(traj, float(p.get("factor", 2.0)))
    if name == "morawetz":
        m_list = tuple(float(m) for m in _tuple(p.get("m_list", (1.0, 2.0, 4.0, 8.0))))
        return morawetz_scan(traj, m_list, float(p.get("eps", 0.1)), band=float(p.get("band", 0.1)))
    if name == "virial":
        return virial_check(traj, p.get("tolerance"))
    if name == "heisenberg":
        key = str(p.get("observable", "A"))
        if key not in _OBSERVABLES:
            raise ProbeError(f"unknown observable {key!r}; choose from {sorted(_OBSERVABLES)}")
        return heisenberg_identity_check(traj, _OBSERVABLES[key](), tolerance=p.get("tolerance"))
    if name == "exterior_decay":
        return exterior_decay_check(traj, p.get("alpha"), p.get("beta0"))
    if name == "low_frequency":
        return low_frequency_series(traj, float(p.get("beta", 0.5)), float(p.get("eps", 0.1)))
    if name == "second_microlocal":
        return second_microlocal_series(traj, float(p.get("alpha", traj.model.alpha)),
                                        float(p.get("beta", 0.5)))
    if name == "ap_plus":
        return ap_plus_series(traj, float(p.get("m", 16.0)), p.get("r"))
    if name == "maximal_velocity":
        return maximal_velocity_diag(traj, float(p.get("m", 4.0)))
    if name == "cook":
        return cook_integrand(traj, float(p.get("alpha", 0.9)), p.get("sigma"))
    if name == "wave_operator":
        alpha = float(p.get("alpha", traj.model.alpha))
        times = p.get("sample_times")
        if times is None:
            times = _geometric_subset(traj.times)
        wo = channel_wave_operator(traj, alpha, [float(t) for t in _tuple(times)],
                                   float(p.get("eps", 0.1)))
        return cauchy_rate_report(wo, float(p.get("factor", 2.0)))
    if name == "wls_exclusion":
        return wls_exclusion_check(traj, float(p.get("tolerance", 0.05)))
    raise ProbeError(f"unknown probe {name!r}")


def _geometric_subset(times: np.ndarray) -> List[float]:
    """Largest chain T, T/2, T/4, ... present among ``times`` (at least two entries)."""
    times = np.asarray(times, dtype=float)
    T = float(times[-1])
    chain = [T]
    while True:
        nxt = chain[-1] / 2
        hit = np.nonzero(np.abs(times - nxt) <= 1e-9 * max(1.0, nxt))[0]
        if nxt <= 0 or hit.size == 0:
            break
        chain.append(float(times[hit[0]]))
    if len(chain) < 2:
        raise DecompositionError("run directory has no geometric snapshot times (T, T/2, ...)")
    return sorted(chain)


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def _output_dir(cfg: ScenarioConfig, config_path: Path, override: Optional[str]) -> Path:
    if override:
        return Path(override)
    if cfg.output:
        out = Path(cfg.output)
        return out if out.is_absolute() else Path(os.environ.get(OUTPUT_ENV, DEFAULT_ROOT)) / out
    return Path(os.environ.get(OUTPUT_ENV, DEFAULT_ROOT)) / config_path.stem


def _snapshot_indices(cfg: ScenarioConfig, traj: Trajectory) -> List[int]:
    if not cfg.run.snapshot_times:
        return list(range(len(traj)))
    wanted = set(cfg.run.snapshot_times) | {cfg.run.t0, cfg.run.t1}
    keep = {int(np.argmin(np.abs(traj.times - t))) for t in wanted}
    return sorted(keep)


def write_trajectory(traj: Trajectory, directory: Path, indices: Sequence[int]) -> None:
    snap = directory / "snapshots"
    snap.mkdir(parents=True, exist_ok=True)
    for old in snap.glob("snap_*.dat"):
        old.unlink()
    rows = []
    for j, i in enumerate(indices):
        name = f"snap_{j:05d}.dat"
        save_wavefunction(traj.snapshot(i), snap / name)
        rows.append((j, f"{traj.times[i]:.17e}", name))
    with (snap / "index.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("index", "t", "file"))
        w.writerows(rows)
    (directory / "conserved.csv").write_text(traj.conserved_csv())


def read_trajectory(directory: Path, cfg: ScenarioConfig) -> Trajectory:
    """Rebuild a trajectory (snapshots only) from a run directory."""
    index = directory / "snapshots" / "index.csv"
    if not index.is_file():
        raise DecompositionError(f"{directory} has no snapshots/index.csv")
    with index.open() as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DecompositionError(f"{index} lists no snapshots")
    states = [load_wavefunction(directory / "snapshots" / r["file"]) for r in rows]
    grid = states[0].grid
    model = cfg.make_model()
    times = np.array([float(r["t"]) for r in rows])
    masses = np.array([u.mass() for u in states])
    energies = np.array([energy(model, u, t) for u, t in zip(states, times)])
    h1 = np.array([np.sqrt(u.mass() + kinetic_energy(u)) for u in states])
    return Trajectory(grid, model, cfg.run.dt, times, np.array([u.values for u in states]),
                      masses, energies, h1, np.zeros_like(times), {}, {},
                      _metadata(cfg))


def _metadata(cfg: ScenarioConfig) -> dict:
    meta = {}
    for key, val in cfg.initial.items():
        if key == "window" or key.endswith(".window"):
            meta["energy_window"] = tuple(float(x) for x in val)
    return meta


def _write_reports(reports: Dict[str, object], directory: Path) -> Dict[str, str]:
    rep_dir = directory / "reports"
    rep_dir.mkdir(parents=True, exist_ok=True)
    verdicts = {}
    for name, rep in reports.items():
        if isinstance(rep, EstimateReport):
            (rep_dir / f"{name}.txt").write_text(rep.to_record())
            (rep_dir / f"{name}.csv").write_text(rep.series_csv())
            verdicts[name] = rep.verdict
        else:
            (rep_dir / f"{name}.txt").write_text(f"[report {name}]\nverdict = {ERROR}\nerror = {rep}\n")
            verdicts[name] = ERROR
    return verdicts


def _write_summary(directory: Path, verdicts: Dict[str, str], reports: Dict[str, object]) -> None:
    summary = {"verdicts": verdicts,
               "reports": {n: (r.summary() if isinstance(r, EstimateReport) else {"error": str(r)})
                           for n, r in reports.items()}}
    (directory / "verdicts.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def _write_manifest(directory: Path, cfg: ScenarioConfig, command: str, extra: dict = None) -> None:
    (directory / "config.ini").write_text(cfg.to_text())
    manifest = {"command": command, "code_version": __version__, "config": cfg.to_text(),
                "numpy": np.__version__}
    manifest.update(extra or {})
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _exit_status(verdicts: Dict[str, str]) -> int:
    if any(v == ERROR for v in verdicts.values()):
        return EXIT_RUNTIME
    if any(v == FAIL for v in verdicts.values()):
        return EXIT_FAIL
    return EXIT_PASS


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _simulate(cfg: ScenarioConfig):
    grid = cfg.make_grid()
    model = cfg.make_model()
    u0 = build_initial(cfg, grid, model)
    r = cfg.run
    traj = evolve(u0, r.t0, r.t1, r.dt, model, save_every=r.save_every,
                  snapshot_times=r.snapshot_times or None, absorb=r.absorb,
                  metadata=_metadata(cfg))
    return grid, model, u0, traj


def _probe_all(cfg: ScenarioConfig, traj: Trajectory) -> Dict[str, object]:
    reports: Dict[str, object] = {}
    for name in cfg.probes:
        try:
            reports[name] = _run_probe(name, traj, cfg.probe_params.get(name, {}))
        except (ProbeError, DecompositionError, WindowError, ValueError) as exc:
            log.error("probe %s failed: %s", name, exc)
            reports[name] = f"{type(exc).__name__}: {exc}"
    return reports


def cmd_run(args) -> int:
    path = Path(args.config)
    cfg = load_config(path)
    out = _output_dir(cfg, path, args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, _, _, traj = _simulate(cfg)
    write_trajectory(traj, out, _snapshot_indices(cfg, traj))
    reports = _probe_all(cfg, traj)
    verdicts = _write_reports(reports, out)
    _write_summary(out, verdicts, reports)
    _write_manifest(out, cfg, "run", {"snapshots": len(_snapshot_indices(cfg, traj)),
                                      "observer_failures": dict(traj.failures)})
    for name, v in verdicts.items():
        print(f"{name}: {v}")
    print(f"run directory: {out}")
    return _exit_status(verdicts)


def cmd_verify(args) -> int:
    from .suites import run_suite
    checks = run_suite(args.suite, echo=print)
    failed = [c.criterion for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed"
          + (f"; failing: {', '.join(failed)}" if failed else ""))
    return EXIT_FAIL if failed else EXIT_PASS


def cmd_decompose(args) -> int:
    directory = Path(args.directory)
    manifest = directory / "manifest.json"
    if not manifest.is_file():
        raise UsageError(f"{directory} is not a run directory (no manifest.json)")
    cfg = parse_config(json.loads(manifest.read_text())["config"])
    traj = read_trajectory(directory, cfg)
    sample = _geometric_subset(traj.times)
    eig: Optional[Eigenstates] = None
    model = traj.model
    if model.is_linear and model.potential.kind != "zero":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            eig = eigenstates_linear(model.potential, traj.grid, args.bound_states)
    result = asymptotic_decompose(traj, args.alpha, sample, eig, args.eps)
    result.export(directory / "decomposition")
    print(json.dumps(result.summary(), indent=2, sort_keys=True))
    return EXIT_PASS if result.verdict == PASS else EXIT_FAIL


def cmd_oracle_compare(args) -> int:
    path = Path(args.config)
    cfg = load_config(path)
    model = cfg.make_model()
    grid = cfg.make_grid()
    if not model.is_linear or model.potential.time_dependent:
        raise UsageError("oracle-compare needs a linear, time-independent model")
    if not oracle.within_cap(grid):
        raise UsageError(f"oracle-compare needs a grid of dense dimension <= {oracle.DENSE_CAP}")
    out = _output_dir(cfg, path, args.out)
    out.mkdir(parents=True, exist_ok=True)
    u0 = build_initial(cfg, grid, model)
    r = cfg.run
    H = oracle.dense_hamiltonian(model.potential, grid)
    errors = []
    for dt in (r.dt, r.dt / 2):
        tr = evolve(u0, r.t0, r.t1, dt, model, save_every=r.save_every, absorb=False)
        errors.append([(tr.snapshot(i) - oracle.exact_propagate(H, u0, t - r.t0)).norm()
                       for i, t in enumerate(tr.times)])
    coarse = np.array(errors[0])
    fine = np.array(errors[1])[: coarse.size]
    times = tr.times[: coarse.size]
    rows = ["t,error_dt,error_half_dt"] + [f"{t:.17e},{a:.17e},{b:.17e}"
                                           for t, a, b in zip(times, coarse, fine)]
    (out / "oracle_compare.csv").write_text("\n".join(rows) + "\n")
    floor = 1e-11 * max(u0.norm(), 1e-300)
    rep = order_ratio_report("oracle_order", float(coarse[-1]), float(fine[-1]),
                             {"dt": r.dt, "T": r.t1 - r.t0}, floor=floor)
    if rep.verdict == INCONCLUSIVE:
        # split-step is exact here (free model): agreement at round-off
        rep.verdict, rep.margin = PASS, floor - float(coarse[-1])
        rep.notes.append("split-step agrees with the oracle at round-off")
    reports = {"oracle_order": rep}
    verdicts = _write_reports(reports, out)
    _write_summary(out, verdicts, reports)
    _write_manifest(out, cfg, "oracle-compare")
    print(f"oracle_order: {rep.verdict} (error {coarse[-1]:.3e} -> {fine[-1]:.3e})")
    return _exit_status(verdicts)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="radscat", description="Radial NLS scattering scenarios")
    p.add_argument("--version", action="version", version=f"radscat {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario config")
    r.add_argument("config")
    r.add_argument("--out", help="run directory (overrides config and $" + OUTPUT_ENV + ")")
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("verify", help="run an acceptance sub-suite")
    v.add_argument("suite", choices=("algebra", "oracle", "estimates", "scattering", "all"))
    v.set_defaults(func=cmd_verify)
    d = sub.add_parser("decompose", help="asymptotic decomposition of a finished run")
    d.add_argument("directory")
    d.add_argument("--alpha", type=float, required=True)
    d.add_argument("--eps", type=float, default=0.1)
    d.add_argument("--bound-states", type=int, default=4)
    d.set_defaults(func=cmd_decompose)
    o = sub.add_parser("oracle-compare", help="split-step against the dense propagator")
    o.add_argument("config")
    o.add_argument("--out")
    o.set_defaults(func=cmd_oracle_compare)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"radscat: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DecompositionError as exc:
        print(f"radscat: error: {exc}", file=sys.stderr)
        return EXIT_USAGE if "snapshot" in str(exc) or "run directory" in str(exc) else EXIT_RUNTIME
    except (StepError, NoBoundStateError, ModelError, GridError, WindowError, ProbeError,
            FloatingPointError, np.linalg.LinAlgError, OSError) as exc:
        print(f"radscat: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
