"""Experiment presets, runs, convergence studies and CSV output.

Configs are flat ``key = value`` text (``#`` starts a comment).  Every key is
a field of :class:`ExperimentConfig`; lists are comma separated.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .cnls import (CNLS_SCHEMES, CnlsIntegrator, CnlsParams, CnlsState, cnls_exact_solution,
                   cnls_invariants, soliton_train)
from .crk import ConvergenceError, build_crk_tableau, gauss_legendre_rule
from .glbox import (GlBoxStepper, box_state_from_profile, gl_ecl_residual, gl_global_energy,
                    gl_space_tableau, nls_box_system)
from .nls2d import NLS2D_SCHEMES, Nls2dIntegrator, nls2d_case, nls2d_exact_solution, nls2d_invariants
from .records import CSV_COLUMNS, ConservationRecord, Invariants, format_cell
from .spectral import build_grid_1d

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunSummary",
    "PRESETS",
    "OUTPUT_DIR_ENV",
    "load_config",
    "parse_config",
    "preset_config",
    "run",
    "converge",
    "compare",
]

log = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "CRKPDE_OUTPUT_DIR"
EQUATIONS = ("cnls", "nls2d", "glbox")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    equation: str = "cnls"
    scheme: str = "et4"
    initial: str = "exact"
    preset: Optional[str] = None
    alpha: float = 0.0
    beta: float = 0.0
    x0: float = -30.0
    length: float = 60.0
    n: int = 300
    m: Optional[int] = None
    dt: float = 0.4
    t_end: float = 120.0
    t_end_full: Optional[float] = None
    tol: float = 1e-14
    max_iter: int = 200
    r: int = 1
    s: int = 1
    amplitudes: tuple = ()
    velocities: tuple = ()
    centers: tuple = ()
    out: Optional[str] = None
    snapshots: tuple = ()
    record_ecl: bool = True

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def validate(self) -> "ExperimentConfig":
        if self.equation not in EQUATIONS:
            raise ConfigError(f"unknown equation {self.equation!r}; choose from {EQUATIONS}")
        allowed = {"cnls": CNLS_SCHEMES, "nls2d": NLS2D_SCHEMES, "glbox": ("gl-box",)}[self.equation]
        if self.scheme not in allowed:
            raise ConfigError(f"scheme {self.scheme!r} is not available for {self.equation}; choose from {allowed}")
        for name in ("dt", "t_end", "tol", "length"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be positive, got {value!r}")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")
        if abs(self.n_steps * self.dt - self.t_end) > 1e-9 * max(1.0, self.t_end) or self.n_steps < 1:
            raise ConfigError(f"dt={self.dt} does not divide t_end={self.t_end}")
        if self.equation != "glbox" and (self.n < 4 or self.n % 2):
            raise ConfigError(f"grid count must be an even integer >= 4, got {self.n}")
        if self.equation == "glbox" and self.r not in (1, 2):
            raise ConfigError(f"box scheme supports r = 1 or 2, got {self.r}")
        if self.equation == "cnls" and self.tol > 1e-6:
            raise ConfigError("tol must not exceed 1e-6")
        return self


_FLOAT_LISTS = ("amplitudes", "velocities", "centers", "snapshots")


def _coerce(name: str, raw: str):
    fld = {f.name: f for f in dataclasses.fields(ExperimentConfig)}.get(name)
    if fld is None:
        raise ConfigError(f"unknown config key {name!r}")
    raw = raw.strip()
    try:
        if name in _FLOAT_LISTS:
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if name == "record_ecl":
            if raw.lower() not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("1", "true", "yes")
        if name in ("n", "m", "max_iter", "r", "s"):
            if raw.lower() == "none":
                return None
            return int(raw)
        if name in ("equation", "scheme", "initial", "preset", "out"):
            return raw
        if raw.lower() == "none":
            return None
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def parse_config(text: str) -> dict:
    """Parse flat ``key = value`` lines into a dict of typed overrides."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        out[key] = _coerce(key, value)
    return out


# Parameter tables of the reproduced benchmarks.  Desk horizons are short;
# t_end_full is the original horizon.
PRESETS = {
    "exp-5.1": dict(equation="cnls", scheme="et4", initial="exact", alpha=0.0, beta=0.0, x0=-30.0,
                    length=60.0, n=300, dt=0.4, t_end=120.0, t_end_full=1200.0),
    "exp-5.1-et4-desk": dict(equation="cnls", scheme="et4", initial="exact", alpha=0.0, beta=0.0, x0=-30.0,
                             length=60.0, n=300, dt=0.4, t_end=120.0, t_end_full=1200.0),
    "exp-6.2": dict(equation="cnls", scheme="et4", initial="solitons", alpha=0.5, beta=2.0 / 3.0, x0=0.0,
                    length=100.0, n=450, dt=0.2, t_end=20.0, t_end_full=100.0,
                    amplitudes=(1.0, 0.8), velocities=(1.5, -1.5), centers=(20.0, 80.0)),
    "exp-6.3": dict(equation="cnls", scheme="et4", initial="solitons", alpha=0.5, beta=2.0 / 3.0, x0=0.0,
                    length=80.0, n=360, dt=0.2, t_end=20.0, t_end_full=100.0,
                    amplitudes=(0.75, 1.0, 0.5), velocities=(1.5, 0.1, -1.2), centers=(20.0, 40.0, 60.0)),
    "gp-attractive": dict(equation="nls2d", scheme="et2", initial="gp-attractive", x0=-6.0, length=12.0,
                          n=42, m=42, dt=0.05, t_end=9.0, t_end_full=45.0),
    "gp-repulsive": dict(equation="nls2d", scheme="et2", initial="gp-repulsive", x0=-8.0, length=16.0,
                         n=36, m=36, dt=0.1, t_end=40.0, t_end_full=200.0),
    "quintic": dict(equation="nls2d", scheme="et2", initial="quintic", x0=-4.0, length=8.0,
                    n=42, m=42, dt=0.01, t_end=1.24, t_end_full=124.0),
    "zero": dict(equation="cnls", scheme="et4", initial="zero", x0=0.0, length=2 * math.pi, n=32,
                 dt=0.1, t_end=1.0),
    "gl-nls": dict(equation="glbox", scheme="gl-box", initial="sech", x0=-8.0, length=16.0, n=32,
                   dt=0.01, t_end=1.0, r=1, s=1),
}
PRESET_ALIASES = {"exp-7.1": "gp-attractive", "exp-7.2": "gp-repulsive", "exp-7.3": "quintic"}


def preset_config(name: str, full: bool = False, **overrides) -> ExperimentConfig:
    key = PRESET_ALIASES.get(name, name)
    if key not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS) + sorted(PRESET_ALIASES)}")
    values = dict(PRESETS[key], preset=key)
    if full and values.get("t_end_full"):
        values["t_end"] = values["t_end_full"]
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values).validate()


def load_config(text: str, full: bool = False, **overrides) -> ExperimentConfig:
    """Config from flat text; a ``preset`` key supplies defaults."""
    values = parse_config(text)
    values.update({k: v for k, v in overrides.items() if v is not None})
    preset = values.pop("preset", None)
    if preset is not None:
        return preset_config(preset, full=full, **values)
    return ExperimentConfig(**values).validate()


@dataclass
class RunSummary:
    scheme: str
    preset: Optional[str]
    steps: int = 0
    max_gee: Optional[float] = None
    max_gce_u: Optional[float] = None
    max_gce_v: Optional[float] = None
    max_gie: Optional[float] = None
    max_ecl_residual: Optional[float] = None
    max_sol_err: Optional[float] = None
    max_sol_err_l2: Optional[float] = None
    total_iterations: int = 0
    mean_iterations: float = 0.0
    wall_time: float = 0.0
    csv_path: Optional[str] = None
    records: list = field(default_factory=list, repr=False)

    @classmethod
    def from_records(cls, scheme, preset, records, wall_time=0.0, csv_path=None):
        stepped = [r for r in records if r.step > 0]

        def peak(name):
            vals = [abs(getattr(r, name)) for r in records if getattr(r, name) is not None]
            return max(vals) if vals else None

        iters = sum(r.iterations or 0 for r in stepped)
        return cls(scheme=scheme, preset=preset, steps=len(stepped), max_gee=peak("gee"),
                   max_gce_u=peak("gce_u"), max_gce_v=peak("gce_v"), max_gie=peak("gie"),
                   max_ecl_residual=peak("max_ecl_residual"), max_sol_err=peak("sol_err_inf"),
                   max_sol_err_l2=peak("sol_err_l2"), total_iterations=iters,
                   mean_iterations=iters / len(stepped) if stepped else 0.0, wall_time=wall_time,
                   csv_path=csv_path, records=records)

    def lines(self):
        keys = ("scheme", "preset", "steps", "max_gee", "max_gce_u", "max_gce_v", "max_gie", "max_ecl_residual",
                "max_sol_err", "max_sol_err_l2", "total_iterations", "mean_iterations", "wall_time", "csv_path")
        out = []
        for k in keys:
            v = getattr(self, k)
            out.append(f"{k}={v:.6e}" if isinstance(v, float) else f"{k}={'' if v is None else v}")
        return out


# --- simulation drivers ---------------------------------------------------

class _Simulation:
    """Common interface: ``initial_record()``, ``advance(step)``, ``snapshot()``."""


class _CnlsSimulation(_Simulation):
    def __init__(self, cfg: ExperimentConfig):
        grid = build_grid_1d(cfg.x0, cfg.length, cfg.n)
        self.cfg = cfg
        self.params = CnlsParams(cfg.alpha, cfg.beta, grid, cfg.dt, cfg.tol, cfg.max_iter)
        x = grid.points
        if cfg.initial == "exact":
            if cfg.alpha != 0 or cfg.beta != 0:
                raise ConfigError("the exact-solution initial data needs alpha = beta = 0")
            u, v = cnls_exact_solution(x, 0.0)
        elif cfg.initial == "solitons":
            if not (len(cfg.amplitudes) == len(cfg.velocities) == len(cfg.centers) > 0):
                raise ConfigError("soliton initial data needs equal-length amplitudes, velocities, centers")
            u, v = soliton_train(x, cfg.alpha, cfg.beta, cfg.amplitudes, cfg.velocities, cfg.centers)
        elif cfg.initial == "zero":
            u = v = np.zeros(cfg.n, dtype=complex)
        else:
            raise ConfigError(f"unknown CNLS initial data {cfg.initial!r}")
        self.state = CnlsState.from_complex(u, v, grid)
        self.integrator = CnlsIntegrator(self.params, cfg.scheme, record_ecl=cfg.record_ecl)
        self.reference = cnls_invariants(self.state, self.params)

    def _errors(self, rec, t):
        if self.cfg.initial != "exact":
            return
        u_exact, _ = cnls_exact_solution(self.params.grid.points, t)
        err = np.abs(self.state.u - u_exact)
        rec.sol_err_inf = float(np.max(err))
        rec.sol_err_l2 = float(np.sqrt(np.mean(err ** 2)))

    def initial_record(self):
        rec = ConservationRecord.from_invariants(0, 0.0, self.reference, self.reference)
        self._errors(rec, 0.0)
        return rec

    def advance(self, step):
        t = step * self.cfg.dt
        self.state, rec = self.integrator.step(self.state, self.reference, step, t)
        self._errors(rec, t)
        return rec

    def snapshot(self):
        return ("x", "abs_u", "abs_v"), np.column_stack(
            [self.params.grid.points, np.abs(self.state.u), np.abs(self.state.v)])


class _Nls2dSimulation(_Simulation):
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        m = cfg.n if cfg.m is None else cfg.m
        try:
            self.problem, self.state = nls2d_case(cfg.initial, n=cfg.n, m=m, dt=cfg.dt, tol=cfg.tol,
                                                  max_iter=cfg.max_iter)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        self.integrator = Nls2dIntegrator(self.problem, cfg.scheme, record_ecl=cfg.record_ecl)
        self.reference = nls2d_invariants(self.state, self.problem)
        self.exact = cfg.initial in ("gp-attractive", "quintic")

    def _errors(self, rec, t):
        if not self.exact:
            return
        X, Y = self.problem.grid.mesh
        err = np.abs(self.state.psi - nls2d_exact_solution(self.cfg.initial, X, Y, t))
        rec.sol_err_inf = float(np.max(err))
        rec.sol_err_l2 = float(np.sqrt(np.mean(err ** 2)))

    def initial_record(self):
        rec = ConservationRecord.from_invariants(0, 0.0, self.reference, self.reference)
        self._errors(rec, 0.0)
        return rec

    def advance(self, step):
        t = step * self.cfg.dt
        self.state, rec = self.integrator.step(self.state, self.reference, step, t)
        self._errors(rec, t)
        return rec

    def snapshot(self):
        X, Y = self.problem.grid.mesh
        return ("x", "y", "abs_psi"), np.column_stack([X.ravel(), Y.ravel(), np.abs(self.state.psi).ravel()])


def _sech_profile(k=0.3):
    def z(x):
        u = np.exp(1j * k * x) / np.cosh(x)
        ux = (-np.tanh(x) + 1j * k) * u
        return np.stack([u.real, u.imag, 0.5 * ux.real, 0.5 * ux.imag], axis=-1)

    def zx(x):
        u = np.exp(1j * k * x) / np.cosh(x)
        ux = (-np.tanh(x) + 1j * k) * u
        uxx = -u / np.cosh(x) ** 2 + (-np.tanh(x) + 1j * k) * ux
        return np.stack([ux.real, ux.imag, 0.5 * uxx.real, 0.5 * uxx.imag], axis=-1)
    return z, zx


class _GlBoxSimulation(_Simulation):
    def __init__(self, cfg: ExperimentConfig):
        if cfg.initial != "sech":
            raise ConfigError(f"unknown box-scheme initial data {cfg.initial!r}")
        self.cfg = cfg
        self.system = nls_box_system()
        self.space = gl_space_tableau(cfg.r)
        try:
            self.time_tableau = build_crk_tableau(gauss_legendre_rule(cfg.s))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        self.dx = cfg.length / cfg.n
        self.stepper = GlBoxStepper(self.system, cfg.x0, self.dx, cfg.n, cfg.dt, self.time_tableau, self.space,
                                    cfg.tol, cfg.max_iter)
        z, zx = _sech_profile()
        self.edges, self.slopes = box_state_from_profile(z, zx, cfg.x0, self.dx, cfg.n, self.space)
        self.reference = Invariants(energy=self._energy())

    def _energy(self):
        return gl_global_energy(self.edges, self.slopes, self.system, self.stepper.positions, self.dx, self.space)

    def initial_record(self):
        return ConservationRecord.from_invariants(0, 0.0, self.reference, self.reference)

    def advance(self, step):
        res = self.stepper.step(self.edges, self.slopes)
        self.edges, self.slopes = res.cells.edges[-1], res.cells.slopes[-1]
        ecl = gl_ecl_residual(res.cells, self.system, self.stepper.positions, self.dx, self.cfg.dt,
                              self.time_tableau, self.space)
        return ConservationRecord.from_invariants(step, step * self.cfg.dt, Invariants(energy=self._energy()),
                                                  self.reference, max_ecl_residual=float(np.max(np.abs(ecl))),
                                                  iterations=res.iterations)

    def snapshot(self):
        x = self.cfg.x0 + self.dx * np.arange(self.cfg.n)
        return ("x", "abs_u"), np.column_stack([x, np.hypot(self.edges[:, 0], self.edges[:, 1])])


def _simulation(cfg: ExperimentConfig) -> _Simulation:
    kind = {"cnls": _CnlsSimulation, "nls2d": _Nls2dSimulation, "glbox": _GlBoxSimulation}[cfg.equation]
    try:
        return kind(cfg)
    except ConfigError:
        raise
    except (ValueError, NotImplementedError) as exc:
        raise ConfigError(str(exc)) from exc


def _resolve_out(path: Optional[str]) -> Optional[Path]:
    if path is None:
        return None
    p = Path(path)
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _write_table(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_cell(v) for v in row])


def run(cfg: ExperimentConfig, progress: Optional[Callable] = None) -> RunSummary:
    """Run one simulation, writing per-step rows to ``cfg.out`` when set.

    On non-convergence the rows computed so far are flushed before the
    :class:`ConvergenceError` propagates.
    """
    cfg.validate()
    out = _resolve_out(cfg.out)
    sim = _simulation(cfg)
    records = [sim.initial_record()]
    snap_steps = {int(round(t / cfg.dt)): t for t in cfg.snapshots}
    start = time.perf_counter()
    fh = open(out, "w", newline="") if out else None
    try:
        writer = csv.writer(fh, lineterminator="\n") if fh else None
        if writer:
            writer.writerow(CSV_COLUMNS)
            writer.writerow([format_cell(v) for v in records[0].row().values()])
        if out and 0 in snap_steps:
            _write_snapshot(out, 0, sim)
        for step in range(1, cfg.n_steps + 1):
            rec = sim.advance(step)
            records.append(rec)
            if writer:
                writer.writerow([format_cell(v) for v in rec.row().values()])
            if out and step in snap_steps:
                _write_snapshot(out, step, sim)
            if progress is not None:
                progress(rec)
    except ConvergenceError:
        log.error("non-convergence after %d steps; partial output kept", len(records) - 1)
        raise
    finally:
        if fh:
            fh.close()
    wall = time.perf_counter() - start
    return RunSummary.from_records(cfg.scheme, cfg.preset, records, wall, str(out) if out else None)


def _write_snapshot(out: Path, step: int, sim: _Simulation):
    header, data = sim.snapshot()
    _write_table(out.with_name(f"{out.stem}_snap_{step:06d}.csv"), header, data)


@dataclass
class ConvergenceTable:
    dts: tuple
    errors: tuple
    orders: tuple

    def lines(self):
        out = ["dt,max_error,observed_order"]
        for i, (dt, err) in enumerate(zip(self.dts, self.errors)):
            order = "" if i == 0 else format_cell(self.orders[i - 1])
            out.append(f"{format_cell(dt)},{format_cell(err)},{order}")
        return out


def converge(cfg: ExperimentConfig, dts) -> ConvergenceTable:
    """Max-in-time solution error per step size and the pairwise observed orders."""
    dts = tuple(float(d) for d in dts)
    if len(dts) < 2:
        raise ConfigError("a convergence study needs at least two step sizes")
    errors = []
    for dt in dts:
        sub = dataclasses.replace(cfg, dt=dt, out=None, snapshots=(), record_ecl=False).validate()
        summary = run(sub)
        if summary.max_sol_err is None:
            raise ConfigError(f"no exact solution is known for preset {cfg.preset!r}")
        errors.append(summary.max_sol_err)
    orders = tuple(math.log(errors[i] / errors[i + 1]) / math.log(dts[i] / dts[i + 1])
                   for i in range(len(dts) - 1))
    return ConvergenceTable(dts, tuple(errors), orders)


def compare(cfg: ExperimentConfig, schemes) -> dict:
    """Run each scheme on the same config; one CSV with a leading scheme column."""
    schemes = tuple(schemes)
    if not schemes:
        raise ConfigError("no schemes given")
    summaries = {}
    for scheme in schemes:
        sub = dataclasses.replace(cfg, scheme=scheme, out=None, snapshots=()).validate()
        summaries[scheme] = run(sub)
    out = _resolve_out(cfg.out)
    if out:
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("scheme",) + CSV_COLUMNS)
            for scheme, summary in summaries.items():
                for rec in summary.records:
                    w.writerow([scheme] + [format_cell(v) for v in rec.row().values()])
        for summary in summaries.values():
            summary.csv_path = str(out)
    return summaries
