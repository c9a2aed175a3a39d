"""Finite-volume simulator for chemotaxis with density-suppressed motility.

Solves ``u_t = Lap(gamma(v) u)``, ``tau v_t = Lap v - v + u`` with no-flux
boundaries on an interval, a radially symmetric disk or a rectangle, and
monitors the energy, the comparison bounds and mass conservation.
"""

from .diagnostics import DiagnosticsRecord, Monitor, Verdict, classify_boundedness, lyapunov
from .grid import DomainKind, DomainSpec, Field, Grid, build_grid, integrate
from .motility import Family, Motility, check_assumptions, choose_anchor
from .solver import RunResult, SimState, helmholtz_solve, run, step

__all__ = [
    "DiagnosticsRecord", "DomainKind", "DomainSpec", "Family", "Field", "Grid", "Monitor", "Motility",
    "RunResult", "SimState", "Verdict", "build_grid", "check_assumptions", "choose_anchor",
    "classify_boundedness", "helmholtz_solve", "integrate", "lyapunov", "run", "step",
]
__version__ = "0.1.0"
