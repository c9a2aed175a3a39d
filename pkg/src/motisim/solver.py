"""Helmholtz inversion and the mass-conservative time stepper.

One step of size ``dt`` for ``u_t = Lap(gamma(v) u)``, ``tau v_t = Lap v - v + u``:

1. ``(W + dt A G) u_new = W u``, with ``G = diag(gamma(v))`` frozen at the old
   signal. The matrix is a column-diagonally-dominant M-matrix, and since
   ``1^T A = 0`` the total mass is conserved by construction.
2. ``((tau/dt + 1) W + A) v_new = W (tau/dt v + u_new)``.
3. ``w_new = (I - Lap)^{-1} u_new``.

Here ``W`` is the diagonal of cell volumes and ``A`` the stiffness matrix of
:mod:`motisim.grid`, so ``Lap = -W^{-1} A``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy import linalg as sla
from scipy import sparse
from scipy.sparse import linalg as spla

from .grid import DomainKind, Field, Grid, laplacian_values
from .motility import Motility

log = logging.getLogger(__name__)

POSITIVITY_FLOOR = -1e-10
DEFAULT_CEILING = 1e8


class SolverError(RuntimeError):
    """A linear solve failed or returned a non-finite answer."""


class PositivityError(SolverError):
    """The density went negative beyond round-off."""


@dataclass(frozen=True, eq=False)
class SimState:
    u: Field
    v: Field
    w: Field
    t: float = 0.0
    tau: float = 1.0
    step_index: int = 0

    @property
    def grid(self) -> Grid:
        return self.u.grid

    @classmethod
    def initial(cls, u0: Field, v0: Field, tau: float = 1.0) -> "SimState":
        if not tau > 0:
            raise ValueError("tau must be positive")
        if u0.grid is not v0.grid:
            raise ValueError("u0 and v0 must live on the same grid")
        if u0.min() < 0 or v0.min() < 0:
            raise ValueError("initial data must be non-negative")
        return cls(u0, v0, helmholtz_solve(u0), 0.0, float(tau), 0)


# Helmholtz ------------------------------------------------------------------


def _tridiagonal(grid: Grid) -> bool:
    return grid.domain.kind is not DomainKind.RECTANGLE


def _helmholtz_factor(grid: Grid):
    if "helmholtz" not in grid._cache:
        mat = (sparse.diags(grid.weights) + grid.stiffness).tocsc()
        grid._cache["helmholtz"] = spla.splu(mat)
    return grid._cache["helmholtz"]


def helmholtz_residual(w: np.ndarray, f: np.ndarray, grid: Grid) -> float:
    """``max |-Lap w + w - f|`` evaluated node by node."""
    return float(np.max(np.abs(-laplacian_values(grid, w) + w - f)))


def helmholtz_values(grid: Grid, f: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    lu = _helmholtz_factor(grid)
    w = lu.solve(grid.weights * f)
    # one refinement sweep in the weighted form
    r = grid.weights * f - (grid.weights * w + grid.stiffness @ w)
    w = w + lu.solve(r)
    if not np.all(np.isfinite(w)):
        raise SolverError("Helmholtz solve produced non-finite values")
    res = helmholtz_residual(w, f, grid)
    # cancellation in Lap w limits the attainable residual to ~eps * |w| / h^2
    h = min(grid.spacing)
    floor = 64 * np.finfo(float).eps * float(np.max(np.abs(w), initial=0.0)) / h**2
    limit = 1e-11 * float(np.max(np.abs(f), initial=0.0)) + floor
    if res > limit:
        raise SolverError(f"Helmholtz residual {res:.3e} exceeds {limit:.3e}")
    return w


def helmholtz_solve(f: Field) -> Field:
    """Solve ``-Lap w + w = f`` with no-flux boundaries."""
    return Field(f.grid, helmholtz_values(f.grid, f.values))


# stepping -------------------------------------------------------------------


def _solve_u(grid: Grid, u: np.ndarray, g: np.ndarray, dt: float) -> np.ndarray:
    rhs = grid.weights * u
    if _tridiagonal(grid):
        n = grid.size
        t = grid.face_trans
        ab = np.zeros((3, n))
        diag = grid.weights.copy()
        diag[:-1] += dt * t * g[:-1]
        diag[1:] += dt * t * g[1:]
        ab[1] = diag
        ab[0, 1:] = -dt * t * g[1:]
        ab[2, :-1] = -dt * t * g[:-1]
        return sla.solve_banded((1, 1), ab, rhs, overwrite_ab=True, check_finite=False)
    mat = (sparse.diags(grid.weights) + dt * grid.stiffness @ sparse.diags(g)).tocsc()
    return spla.spsolve(mat, rhs)


def _solve_v(grid: Grid, v: np.ndarray, u_new: np.ndarray, tau: float, dt: float) -> np.ndarray:
    c = tau / dt
    rhs = grid.weights * (c * v + u_new)
    key = ("v-operator", c)
    cache = grid._cache
    if _tridiagonal(grid):
        if key not in cache:
            n = grid.size
            t = grid.face_trans
            ab = np.zeros((3, n))
            diag = (c + 1.0) * grid.weights
            diag[:-1] += t
            diag[1:] += t
            ab[0, 1:] = -t
            ab[1] = diag
            cache[key] = ab
        return sla.solveh_banded(cache[key][:2], rhs, check_finite=False)
    if key not in cache:
        cache[key] = spla.splu(((c + 1.0) * sparse.diags(grid.weights) + grid.stiffness).tocsc())
    return cache[key].solve(rhs)


def step(state: SimState, m: Motility, dt: float) -> SimState:
    """Advance ``state`` by one IMEX step of size ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    grid = state.grid
    u, v = state.u.values, state.v.values
    g = np.asarray(m.gamma(v), dtype=float)
    u_new = _solve_u(grid, u, g, dt)
    if not np.all(np.isfinite(u_new)):
        raise SolverError(f"u solve failed at step {state.step_index + 1}")
    if u_new.min() < POSITIVITY_FLOOR:
        i = int(np.argmin(u_new))
        raise PositivityError(
            f"u={u_new[i]:.3e} at node {i} (step {state.step_index + 1}, t={state.t + dt:.6g})"
        )
    v_new = _solve_v(grid, v, u_new, state.tau, dt)
    if not np.all(np.isfinite(v_new)):
        raise SolverError(f"v solve failed at step {state.step_index + 1}")
    if v_new.min() < POSITIVITY_FLOOR:
        raise PositivityError(f"v={v_new.min():.3e} at step {state.step_index + 1}")
    w_new = helmholtz_values(grid, u_new)
    return SimState(
        Field(grid, u_new),
        Field(grid, v_new),
        Field(grid, w_new),
        state.t + dt,
        state.tau,
        state.step_index + 1,
    )


# driver ---------------------------------------------------------------------


@dataclass
class RunResult:
    records: list
    final: SimState
    abort_reason: str = ""
    steps: int = 0
    wall_time: float = 0.0
    error: str = ""

    @property
    def aborted(self) -> bool:
        return bool(self.abort_reason)


def run(
    state0: SimState,
    m: Motility,
    dt: float,
    t_end: float,
    cadence: int = 10,
    ceiling: float = DEFAULT_CEILING,
    on_record: Callable | None = None,
    on_snapshot: Callable[[SimState], None] | None = None,
    snapshot_every: int | None = None,
    monitor=None,
) -> RunResult:
    """Step from ``state0`` to ``t_end`` with diagnostics every ``cadence`` steps.

    The run stops early when ``max u`` exceeds ``ceiling`` or a step fails;
    the reason is stored on the result and on the final record. Step errors
    are re-raised after the final record is written.
    """
    from .diagnostics import Monitor

    if t_end < 0:
        raise ValueError("t_end must be non-negative")
    if not dt > 0:
        raise ValueError("dt must be positive")
    if cadence < 1:
        raise ValueError("cadence must be >= 1")
    monitor = monitor or Monitor.start(state0, m)
    started = time.perf_counter()
    records = []

    def emit(rec):
        records.append(rec)
        if on_record is not None:
            on_record(rec)

    emit(monitor.record(state0))
    if on_snapshot is not None:
        on_snapshot(state0)

    n_steps = int(math.ceil(t_end / dt - 1e-9)) if t_end > 0 else 0
    state, prev = state0, None
    abort, error = "", None
    for k in range(1, n_steps + 1):
        h = dt if k < n_steps else t_end - (n_steps - 1) * dt
        try:
            nxt = step(state, m, h)
        except SolverError as exc:
            abort, error = f"solver error: {exc}", exc
            break
        nxt = replace(nxt, t=state0.t + ((k - 1) * dt + h))
        prev, state = state, nxt
        if state.u.max() > ceiling:
            abort = f"blow-up ceiling {ceiling:g} exceeded"
        if abort or k % cadence == 0 or k == n_steps:
            emit(monitor.record(state, prev, h, abort_reason=abort))
        if on_snapshot is not None and snapshot_every and (k % snapshot_every == 0 or k == n_steps or abort):
            on_snapshot(state)
        if abort:
            break

    if error is not None and records[-1].abort_reason != abort:
        records[-1] = replace(records[-1], abort_reason=abort)
    result = RunResult(records, state, abort, state.step_index - state0.step_index,
                       time.perf_counter() - started, str(error or ""))
    if abort:
        log.info("run stopped at t=%.6g: %s", state.t, abort)
    if error is not None:
        error.result = result
        raise error
    return result
