"""Runtime monitoring of the quantities the analysis bounds.

Every record carries the mass, the free energy

    F(u, v) = int u log u + |grad v|^2 / 2 + v^2 / 2 - u v,

its dissipation (for ``gamma = exp(-v)`` only), the residual of the key
identity ``w_t + gamma(v) u = (I - Lap)^{-1}[gamma(v) u]``, and the margins
of the two pointwise comparison bounds

    w <= w0 * exp(gamma(v_*) t),        v <= (w + K) / (1 - tau gamma(a)).

Negative margins are recorded, not raised.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .grid import Field, grad_norm_sq, integrate
from .motility import AnchorError, Family, Motility, MotilityDomainError, big_gamma, choose_anchor
from .solver import SimState, helmholtz_values

U_FLOOR = 1e-14


class UnsupportedMotility(ValueError):
    """The dissipation identity is only available for ``gamma(v) = exp(-v)``."""


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    step: int
    mass: float
    lyapunov_F: float
    dissipation_D: float
    u_max: float
    v_max: float
    w_max: float
    u_min: float
    v_min: float
    key_identity_residual: float
    w_bound_margin: float
    v_bound_margin: float
    K_used: float
    abort_reason: str = ""


RECORD_COLUMNS = [f.name for f in fields(DiagnosticsRecord)]


# scalar diagnostics -----------------------------------------------------------


def entropy_density(u: np.ndarray) -> np.ndarray:
    """``u log u`` with ``0 log 0 = 0``."""
    out = np.zeros_like(u, dtype=float)
    pos = u > 0
    out[pos] = u[pos] * np.log(u[pos])
    return out


def lyapunov(state: SimState) -> float:
    grid = state.grid
    u, v = state.u.values, state.v.values
    if u.min() < 0:
        raise ValueError("lyapunov needs u >= 0")
    return (
        integrate(entropy_density(u), grid)
        + 0.5 * grad_norm_sq(v, grid)
        + 0.5 * integrate(v * v, grid)
        - integrate(u * v, grid)
    )


def _is_unit_exp(m: Motility | None) -> bool:
    return m is None or (m.family is Family.EXP_DECAY and m.scale == 1.0)


def dissipation(state: SimState, v_prev: Field, dt: float, m: Motility | None = None) -> float:
    """``int u e^{-v} |grad(log u - v)|^2 + tau ||(v - v_prev)/dt||^2``.

    Face values of ``u`` and ``v`` are arithmetic means. Faces touching a node
    with ``u < 1e-14`` contribute nothing to the first term.
    """
    if not _is_unit_exp(m):
        raise UnsupportedMotility(f"dissipation needs exp-decay(scale=1), got {m.describe()}")
    grid = state.grid
    u, v = state.u.values, state.v.values
    i, j = grid.face_left, grid.face_right
    g = np.log(np.maximum(u, U_FLOOR)) - v
    u_face = 0.5 * (u[i] + u[j])
    weight = u_face * np.exp(-0.5 * (v[i] + v[j]))
    active = (u[i] >= U_FLOOR) & (u[j] >= U_FLOOR)
    first = float(np.sum(np.where(active, grid.face_trans * weight * (g[j] - g[i]) ** 2, 0.0)))
    vt = (v - v_prev.values) / dt
    return first + state.tau * integrate(vt * vt, grid)


def key_identity_residual(state: SimState, w_prev: Field, dt: float, m: Motility) -> float:
    """``max |(w - w_prev)/dt + gamma(v) u - (I - Lap)^{-1}[gamma(v) u]|``."""
    gu = np.asarray(m.gamma(state.v.values)) * state.u.values
    lhs = (state.w.values - w_prev.values) / dt + gu - helmholtz_values(state.grid, gu)
    return float(np.max(np.abs(lhs)))


# comparison bounds -------------------------------------------------------------


@dataclass(frozen=True)
class ComparisonSetup:
    """Run-start data for the pointwise bounds on ``w`` and ``v``.

    ``gamma_star`` or ``anchor`` is ``None`` when the corresponding bound is
    not available (singular motility at ``v_* = 0``, or no admissible anchor).
    """

    w0: np.ndarray
    v_star: float
    gamma_star: float | None
    anchor: float | None
    gamma_anchor: float | None
    K: float
    tau: float


def lower_signal_floor(v0: Field) -> float:
    """``v_*``: the minimum of ``v0`` when positive, else 0."""
    lo = v0.min()
    return lo if lo > 0 else 0.0


def comparison_constant(m: Motility, v_star: float, tau: float, v0: np.ndarray, w0: np.ndarray) -> float:
    """Least ``K`` certified by the comparison argument.

    ``K >= max(1, tau) * (2 a gamma(v_*) + a gamma(a))`` bounds the
    ``tau (v gamma(v) - Gamma(v))`` source, and ``K >= v0 - w0 - tau Gamma(v0)``
    nodewise makes the initial ordering hold.
    """
    a = m.anchor_a
    c = 2.0 * a * float(m.gamma(max(v_star, m.floor_s))) + a * float(m.gamma(a))
    start = float(np.max(v0 - w0 - tau * np.asarray(big_gamma(m, np.maximum(v0, m.floor_s)))))
    return max(max(1.0, tau) * c, start) + 1e-12


def comparison_setup(state0: SimState, m: Motility) -> tuple[ComparisonSetup, Motility]:
    tau = state0.tau
    v0, w0 = state0.v.values, state0.w.values
    v_star = lower_signal_floor(state0.v)
    try:
        gamma_star = float(m.gamma(v_star))
    except MotilityDomainError:
        gamma_star = None
    anchor = gamma_anchor = None
    K = math.nan
    try:
        if m.anchor_a is None or not tau * float(m.gamma(m.anchor_a)) < 1:
            m = m.with_anchor(choose_anchor(m, tau))
        anchor = m.anchor_a
        gamma_anchor = float(m.gamma(anchor))
        if gamma_star is not None:
            K = comparison_constant(m, v_star, tau, v0, w0)
        else:
            anchor = None
    except (AnchorError, MotilityDomainError):
        anchor = None
    return ComparisonSetup(w0.copy(), v_star, gamma_star, anchor, gamma_anchor, K, tau), m


def comparison_check(state: SimState, setup: ComparisonSetup) -> tuple[float, float]:
    """Return ``(w_bound_margin, v_bound_margin)``; NaN where a bound is unavailable."""
    w, v = state.w.values, state.v.values
    if setup.gamma_star is None:
        w_margin = math.nan
    else:
        with np.errstate(over="ignore"):
            growth = np.exp(setup.gamma_star * state.t)
        w_margin = float(np.min(setup.w0 * growth - w)) if np.isfinite(growth) else math.inf
    if setup.anchor is None:
        v_margin = math.nan
    else:
        bound = (w + setup.K) / (1.0 - setup.tau * setup.gamma_anchor)
        v_margin = float(np.min(bound - v))
    return w_margin, v_margin


# run monitor ------------------------------------------------------------------


@dataclass
class Monitor:
    motility: Motility
    setup: ComparisonSetup

    @classmethod
    def start(cls, state0: SimState, m: Motility) -> "Monitor":
        setup, anchored = comparison_setup(state0, m)
        return cls(anchored, setup)

    def record(
        self,
        state: SimState,
        prev: SimState | None = None,
        dt: float | None = None,
        abort_reason: str = "",
    ) -> DiagnosticsRecord:
        m = self.motility
        if prev is not None:
            key_res = key_identity_residual(state, prev.w, dt, m)
            diss = dissipation(state, prev.v, dt) if _is_unit_exp(m) else math.nan
        else:
            key_res = diss = math.nan
        w_margin, v_margin = comparison_check(state, self.setup)
        return DiagnosticsRecord(
            t=float(state.t),
            step=int(state.step_index),
            mass=integrate(state.u),
            lyapunov_F=lyapunov(state),
            dissipation_D=diss,
            u_max=state.u.max(),
            v_max=state.v.max(),
            w_max=state.w.max(),
            u_min=state.u.min(),
            v_min=state.v.min(),
            key_identity_residual=key_res,
            w_bound_margin=w_margin,
            v_bound_margin=v_margin,
            K_used=self.setup.K,
            abort_reason=abort_reason,
        )


# boundedness verdict ------------------------------------------------------------


class Verdict(str, Enum):
    BOUNDED = "Bounded"
    GROWING = "Growing"
    INCONCLUSIVE = "Inconclusive"


class InsufficientData(ValueError):
    pass


MIN_RECORDS = 50
# relative trend d(log u_max)/d(log t) below this is treated as flat (round-off drift)
TREND_TOL = 1e-3


def _log_time_slope(t: np.ndarray, y: np.ndarray) -> float:
    # records start at t=0; log t needs t > 0
    mask = t > 0
    t, y = t[mask], y[mask]
    if t.size < 2 or np.ptp(np.log(t)) == 0:
        return 0.0
    return float(np.polyfit(np.log(t), y, 1)[0])


def classify_boundedness(records: Sequence[DiagnosticsRecord], t_end: float | None = None) -> Verdict:
    """Bounded / Growing / Inconclusive from the ``u_max`` history.

    * Growing: the run hit the blow-up ceiling, or ``max u_max >= 10 u_max(0)``
      with a positive trend of ``u_max`` against ``log t`` over the last third.
    * Bounded: over the last third ``u_max`` varies by at most 5% and that trend
      is non-positive.

    The trend is the least-squares slope divided by the mean of ``u_max`` over
    the tail; values within ``TREND_TOL`` of zero count as non-positive.
    """
    if records and "ceiling" in records[-1].abort_reason:
        return Verdict.GROWING
    if len(records) < MIN_RECORDS:
        raise InsufficientData(f"need >= {MIN_RECORDS} records, got {len(records)}")
    t = np.array([r.t for r in records])
    umax = np.array([r.u_max for r in records])
    horizon = t_end if t_end is not None else t[-1]
    if t[-1] - t[0] < 0.8 * horizon:
        raise InsufficientData(f"records span {t[-1] - t[0]:.4g}, need >= 80% of {horizon:.4g}")
    tail = slice(len(records) - len(records) // 3, None)
    tail_u = umax[tail]
    slope = _log_time_slope(t[tail], tail_u) / float(np.mean(tail_u))
    if umax.max() >= 10.0 * umax[0] and slope > TREND_TOL:
        return Verdict.GROWING
    variation = (tail_u.max() - tail_u.min()) / tail_u.max()
    if variation <= 0.05 and slope <= TREND_TOL:
        return Verdict.BOUNDED
    return Verdict.INCONCLUSIVE


# record streams -------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


def write_records_csv(path: str | Path, records: Iterable[DiagnosticsRecord], manifest_hash: str = "") -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# manifest_sha256={manifest_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(RECORD_COLUMNS)
        for rec in records:
            writer.writerow([_fmt(getattr(rec, c)) for c in RECORD_COLUMNS])


def read_records_csv(path: str | Path) -> tuple[list[DiagnosticsRecord], str]:
    """Inverse of :func:`write_records_csv`; returns the records and the manifest hash."""
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# manifest_sha256="):
            raise ValueError(f"{path}: missing manifest hash line")
        manifest_hash = first.strip().split("=", 1)[1]
        reader = csv.reader(fh)
        header = next(reader)
        if header != RECORD_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {header}")
        records = []
        for row in reader:
            if not row:
                continue
            vals = dict(zip(header, row))
            kwargs = {}
            for f in fields(DiagnosticsRecord):
                raw = vals[f.name]
                if f.name == "abort_reason":
                    kwargs[f.name] = raw
                elif f.name == "step":
                    kwargs[f.name] = int(raw)
                else:
                    kwargs[f.name] = float(raw)
            records.append(DiagnosticsRecord(**kwargs))
    return records, manifest_hash


def write_records_jsonl(path: str | Path, records: Iterable[DiagnosticsRecord], manifest_hash: str = "") -> None:
    with open(path, "w") as fh:
        for rec in records:
            row = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in asdict(rec).items()}
            row["manifest_sha256"] = manifest_hash
            fh.write(json.dumps(row) + "\n")
