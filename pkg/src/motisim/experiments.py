"""Stationary states, concentrated initial data and the critical-mass sweep."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import cumulative_simpson

from .diagnostics import Verdict, classify_boundedness, lyapunov
from .grid import DomainKind, DomainSpec, Field, Grid, build_grid, integrate, laplacian_values
from .motility import Family, Motility
from .solver import SimState, SolverError, helmholtz_solve, helmholtz_values, run

log = logging.getLogger(__name__)

EIGHT_PI = 8.0 * math.pi
QUANTIZATION_GAP = 1e-3
MIN_CELLS_PER_CORE = 8


class QuantizationError(ValueError):
    """The requested mass lies within ``1e-3`` of a positive multiple of ``4 pi``."""


class ResolutionError(ValueError):
    """The grid does not resolve the concentration scale ``1/lambda``."""


class StationaryNotConverged(RuntimeError):
    def __init__(self, message: str, solution: "StationarySolution"):
        super().__init__(message)
        self.solution = solution


def quantization_guard(mass: float, quantum: float = 4.0 * math.pi) -> None:
    """Reject masses within ``QUANTIZATION_GAP`` of a positive multiple of ``quantum``."""
    k = max(1, round(mass / quantum))
    if abs(mass - quantum * k) < QUANTIZATION_GAP:
        raise QuantizationError(f"mass {mass!r} is within {QUANTIZATION_GAP:g} of {quantum / math.pi:g}*pi*{k}")


def mass_quantum(grid: Grid) -> float:
    """Concentration quantum: radial states can only concentrate at the centre (8 pi)."""
    return EIGHT_PI if grid.domain.kind is DomainKind.DISK_RADIAL else 4.0 * math.pi


# bump function ------------------------------------------------------------------

_STEP_T = np.linspace(0.0, 1.0, 2**14 + 1)


def _make_step_table() -> np.ndarray:
    s = 2.0 * _STEP_T - 1.0
    psi = np.zeros_like(s)
    inside = np.abs(s) < 1
    psi[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    cum = cumulative_simpson(psi, x=_STEP_T, initial=0.0)
    cum = np.maximum.accumulate(cum)
    return cum / cum[-1]


_STEP_TABLE = _make_step_table()


def bump_function(r: float, r1: float, x) -> np.ndarray | float:
    """Radial cut-off: 1 on ``|x| <= r1``, 0 on ``|x| >= r``, smooth and non-increasing between.

    ``x`` may be a radius array, or an array of points with coordinates on the
    last axis. The transition is ``1 - S(t)``, ``t = (|x| - r1)/(r - r1)``, where
    ``S`` is the normalized integral of the mollifier ``exp(-1/(1 - s^2))``
    rescaled to ``t in (0, 1)``.
    """
    if not 0 < r1 < r:
        raise ValueError(f"need 0 < r1 < r, got r1={r1}, r={r}")
    x = np.asarray(x, dtype=float)
    rho = np.abs(x) if x.ndim <= 1 else np.linalg.norm(x, axis=-1)
    t = np.clip((rho - r1) / (r - r1), 0.0, 1.0)
    out = 1.0 - np.interp(t, _STEP_T, _STEP_TABLE)
    out = np.where(rho <= r1, 1.0, np.where(rho >= r, 0.0, out))
    return out if out.ndim else float(out)


# concentrated profiles ---------------------------------------------------------------


def unnormalized_profiles(lam: float) -> tuple[Callable, Callable]:
    """Return ``(u_lam, v_lam)`` as functions of the radius ``|x|``.

    ``u_lam = 8 lam^2 / (1 + lam^2 |x|^2)^2`` and
    ``v_lam = 2 log(lam / (1 + lam^2 |x|^2)) + log 8`` satisfy
    ``exp(v_lam) = u_lam`` and ``Lap v_lam + u_lam = 0`` in the plane.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")

    def u_lam(rho):
        rho = np.asarray(rho, dtype=float)
        return 8.0 * lam**2 / (1.0 + (lam * rho) ** 2) ** 2

    def v_lam(rho):
        rho = np.asarray(rho, dtype=float)
        return 2.0 * np.log(lam / (1.0 + (lam * rho) ** 2)) + math.log(8.0)

    return u_lam, v_lam


def core_mass(lam: float, ell: float) -> float:
    """Closed-form ``int_{B(0, ell)} u_lam = 8 pi (1 - 1/(1 + (lam ell)^2))``."""
    return EIGHT_PI * (1.0 - 1.0 / (1.0 + (lam * ell) ** 2))


@dataclass(frozen=True)
class BlowupDatumParams:
    mass_target: float
    lam: float
    r: float
    r1: float
    center: tuple[float, ...] = (0.0, 0.0)

    def __post_init__(self):
        if not self.mass_target > EIGHT_PI:
            raise ValueError(f"mass_target must exceed 8*pi, got {self.mass_target}")
        quantization_guard(self.mass_target)
        if not self.lam >= 1:
            raise ValueError("lambda must be >= 1")
        if not 0 < self.r < 1:
            raise ValueError("r must lie in (0, 1)")
        if not 0 < self.r1 < self.r:
            raise ValueError("r1 must lie in (0, r)")


@dataclass(frozen=True)
class BlowupDatum:
    u0: Field
    v0: Field
    a: float
    core_integral: float


def _offsets(grid: Grid, center: Sequence[float]) -> np.ndarray:
    kind = grid.domain.kind
    if kind is DomainKind.DISK_RADIAL:
        if any(c != 0 for c in center):
            raise ValueError("radial disk data must be centred at the origin")
        return grid.nodes[:, 0]
    if kind is DomainKind.INTERVAL:
        raise ValueError("the concentrated datum needs a two-dimensional domain")
    return np.linalg.norm(grid.nodes - np.asarray(center, dtype=float)[: grid.nodes.shape[1]], axis=1)


def _boundary_distance(grid: Grid, center: Sequence[float]) -> float:
    dom = grid.domain
    if dom.kind is DomainKind.DISK_RADIAL:
        return dom.extent[0]
    c = np.asarray(center, dtype=float)
    return float(min(c.min(), (np.asarray(dom.extent) - c).min()))


def upper_bracket(p: BlowupDatumParams) -> float:
    """``Lambda / (8 pi f(1))`` with ``f(lam) = 1 - 1/(1 + (lam r1)^2)``."""
    return p.mass_target / (EIGHT_PI * (1.0 - 1.0 / (1.0 + p.r1**2)))


def blowup_datum(p: BlowupDatumParams, grid: Grid) -> BlowupDatum:
    """``u0 = a u_lam phi``, ``v0 = a vbar_{lam,r} phi`` with ``int u0 = mass_target``."""
    if _boundary_distance(grid, p.center) <= 2 * p.r:
        raise ValueError("the ball B(center, 2r) must lie inside the domain")
    cells = (1.0 / p.lam) / max(grid.spacing)
    if cells < MIN_CELLS_PER_CORE:
        raise ResolutionError(
            f"only {cells:.2f} cells inside radius 1/lambda={1 / p.lam:.4g}; need {MIN_CELLS_PER_CORE}"
        )
    rho = _offsets(grid, p.center)
    lam = p.lam
    u_bar = 8.0 * lam**2 / (1.0 + (lam * rho) ** 2) ** 2
    v_bar = 2.0 * np.log((1.0 + (lam * p.r) ** 2) / (1.0 + (lam * rho) ** 2)) + math.log(8.0)
    phi = bump_function(p.r, p.r1, rho)
    core = integrate(u_bar * phi, grid)
    a = p.mass_target / core
    lo, hi = p.mass_target / EIGHT_PI, upper_bracket(p)
    if not (lo * (1 - 0.01) <= a <= hi * (1 + 0.01)):
        raise ValueError(f"normalising factor a={a:.6g} outside [{lo:.6g}, {hi:.6g}]; quadrature failed")
    return BlowupDatum(Field(grid, a * u_bar * phi), Field(grid, a * v_bar * phi), a, core)


def gaussian_bump(mass: float, grid: Grid, width: float, center: Sequence[float] = (0.0, 0.0)) -> tuple[Field, Field]:
    """Gaussian of standard deviation ``width`` scaled to ``mass``, with ``v0 = (I - Lap)^{-1} u0``."""
    rho = _offsets(grid, center) if grid.domain.kind is not DomainKind.INTERVAL else np.abs(
        grid.nodes[:, 0] - center[0]
    )
    shape = np.exp(-0.5 * (rho / width) ** 2)
    u0 = Field(grid, mass * shape / integrate(shape, grid))
    return u0, helmholtz_solve(u0)


# stationary problem ------------------------------------------------------------------


@dataclass(frozen=True)
class StationarySolution:
    v_s: Field
    u_s: Field
    mass: float
    residual: float
    lyapunov_F: float
    iterations: int
    converged: bool


def boltzmann_density(mass: float, v: np.ndarray, grid: Grid) -> np.ndarray:
    """``mass * e^v / int e^v``, shifted by ``max v`` against overflow."""
    e = np.exp(v - v.max())
    return mass * e / integrate(e, grid)


def stationary_residual(v: np.ndarray, mass: float, grid: Grid) -> float:
    return float(np.max(np.abs(v - laplacian_values(grid, v) - boltzmann_density(mass, v, grid))))


def stationary_solve(
    mass: float,
    grid: Grid,
    v_init: Field,
    damping: float = 0.5,
    tol: float = 1e-8,
    max_iter: int = 10_000,
) -> StationarySolution:
    """Damped Picard iteration ``v <- (1 - theta) v + theta (I - Lap)^{-1}[mass e^v / int e^v]``."""
    if not mass > 0:
        raise ValueError("mass must be positive")
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    quantization_guard(mass, mass_quantum(grid))
    v = np.array(v_init.values, dtype=float)
    res = stationary_residual(v, mass, grid)
    it = 0
    while res > tol and it < max_iter:
        v = (1.0 - damping) * v + damping * helmholtz_values(grid, boltzmann_density(mass, v, grid))
        res = stationary_residual(v, mass, grid)
        it += 1
    u = boltzmann_density(mass, v, grid)
    v_f, u_f = Field(grid, v), Field(grid, u)
    sol = StationarySolution(v_f, u_f, mass, res, lyapunov(SimState(u_f, v_f, v_f)), it, res <= tol)
    if not sol.converged:
        raise StationaryNotConverged(f"residual {res:.3e} after {it} iterations", sol)
    return sol


# critical-mass sweep ---------------------------------------------------------------------


@dataclass(frozen=True)
class SweepConfig:
    radius: float = 0.5
    n: int = 512
    dt: float = 1e-3
    t_end: float = 10.0
    cadence: int = 10
    lam: float = 100.0
    r: float = 0.2
    r1: float = 0.1
    ceiling: float = 1e8
    workers: int = 1
    out_dir: str | None = None


@dataclass(frozen=True)
class SweepRow:
    mass: float
    verdict: str
    u_max_final: float
    F_initial: float
    F_final: float
    abort_reason: str

    @property
    def F_trend(self) -> float:
        return self.F_final - self.F_initial


SWEEP_COLUMNS = ["mass", "verdict", "u_max_final", "F_initial", "F_final", "abort_reason"]


def initial_state(mass: float, datum: str, cfg: SweepConfig) -> SimState:
    grid = build_grid(DomainSpec.disk(cfg.radius, cfg.n))
    if datum == "paper-blowup":
        d = blowup_datum(BlowupDatumParams(mass, cfg.lam, cfg.r, cfg.r1), grid)
        u0, v0 = d.u0, d.v0
    elif datum == "gaussian-bump":
        u0, v0 = gaussian_bump(mass, grid, cfg.r / 2)
    else:
        raise ValueError(f"unknown datum {datum!r}")
    return SimState.initial(u0, v0, tau=1.0)


def sweep_row(mass: float, datum: str, cfg: SweepConfig) -> SweepRow:
    """One sweep entry; solver failures are reported in the row, not raised."""
    m = Motility(Family.EXP_DECAY)
    try:
        state0 = initial_state(mass, datum, cfg)
    except ValueError as exc:
        return SweepRow(mass, Verdict.INCONCLUSIVE.value, math.nan, math.nan, math.nan, f"bad datum: {exc}")
    writer = None
    if cfg.out_dir is not None:
        from .runio import RunWriter

        echo = {
            "domain": {"kind": "disk-radial", "extent": [cfg.radius], "resolution": [cfg.n]},
            "motility": {"family": m.family.value, "scale": m.scale},
            "tau": 1.0,
            "sweep": asdict(cfg),
            "mass": mass,
            "datum": datum,
        }
        writer = RunWriter.create(Path(cfg.out_dir) / f"mass_{mass:.6f}", echo)
    try:
        res = run(state0, m, cfg.dt, cfg.t_end, cadence=cfg.cadence, ceiling=cfg.ceiling,
                  on_record=writer.add_record if writer else None,
                  on_snapshot=writer.on_snapshot if writer else None)
    except SolverError as exc:
        res = exc.result
    if writer is not None:
        writer.finish(res)
    try:
        verdict = classify_boundedness(res.records, cfg.t_end).value
    except ValueError:
        verdict = Verdict.INCONCLUSIVE.value
    first, last = res.records[0], res.records[-1]
    return SweepRow(mass, verdict, last.u_max, first.lyapunov_F, last.lyapunov_F, res.abort_reason)


def _row_task(args):
    return sweep_row(*args)


def critical_mass_sweep(masses: Sequence[float], datum: str, config: SweepConfig = SweepConfig()) -> list[SweepRow]:
    """Run one exp-decay simulation per mass on the radial disk and classify each."""
    tasks = [(float(mass), datum, config) for mass in masses]
    if not tasks:
        return []
    if config.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            return list(pool.map(_row_task, tasks))
    return [_row_task(t) for t in tasks]


def write_sweep_csv(path: str | Path, rows: Sequence[SweepRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow([
                f"{row.mass:.17g}", row.verdict, f"{row.u_max_final:.17g}",
                f"{row.F_initial:.17g}", f"{row.F_final:.17g}", row.abort_reason,
            ])
