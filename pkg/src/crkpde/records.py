"""Per-step conservation records shared by the 1D and 2D solvers."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

TINY = 1e-300

CSV_COLUMNS = (
    "step", "time", "energy", "gee", "charge_u", "gce_u", "charge_v", "gce_v",
    "momentum", "gie", "max_ecl_residual", "iterations", "sol_err_inf", "sol_err_l2",
)


def relative_error(value, reference):
    """``(value - reference) / |reference|``; absolute when the reference vanishes.

    Returns ``(error, is_absolute)``.
    """
    if value is None or reference is None:
        return None, False
    if abs(reference) < TINY:
        return value - reference, True
    return (value - reference) / abs(reference), False


@dataclass
class Invariants:
    """Global discrete invariants of one state; unused ones stay ``None``."""

    energy: Optional[float] = None
    charge_u: Optional[float] = None
    charge_v: Optional[float] = None
    momentum: Optional[float] = None


@dataclass
class ConservationRecord:
    step: int
    time: float
    energy: Optional[float] = None
    gee: Optional[float] = None
    charge_u: Optional[float] = None
    gce_u: Optional[float] = None
    charge_v: Optional[float] = None
    gce_v: Optional[float] = None
    momentum: Optional[float] = None
    gie: Optional[float] = None
    max_ecl_residual: Optional[float] = None
    iterations: Optional[int] = None
    sol_err_inf: Optional[float] = None
    sol_err_l2: Optional[float] = None
    absolute_errors: tuple = field(default_factory=tuple)

    @classmethod
    def from_invariants(cls, step, time, current: Invariants, reference: Invariants, **extra):
        rec = cls(step=step, time=time, energy=current.energy, charge_u=current.charge_u,
                  charge_v=current.charge_v, momentum=current.momentum, **extra)
        flagged = []
        for err_name, name in (("gee", "energy"), ("gce_u", "charge_u"), ("gce_v", "charge_v"), ("gie", "momentum")):
            err, absolute = relative_error(getattr(current, name), getattr(reference, name))
            setattr(rec, err_name, err)
            if absolute:
                flagged.append(err_name)
        rec.absolute_errors = tuple(flagged)
        return rec

    def row(self):
        return {name: getattr(self, name) for name in CSV_COLUMNS}


def format_cell(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    return f"{float(value):.16e}"
