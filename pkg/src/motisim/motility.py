"""Signal-dependent motility functions gamma(v) and their structural checks.

A :class:`Motility` bundles a decreasing function ``gamma`` with analytic
first and second derivatives, an anchor ``a`` with ``gamma(a) < 1/tau``,
and the antiderivative ``Gamma(s) = int_a^s gamma``. The built-in families
are

=============  =========================
exp-decay      ``exp(-s/scale)``
power          ``(s/scale)**(-k)``
gaussian       ``exp(-(s/scale)**2)``
double-exp     ``exp(-exp(s/scale))``
constant       ``c`` (degenerate reference case)
tabulated      piecewise-linear from CSV
=============  =========================
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import integrate as spi
from scipy import optimize

SINGULAR_FLOOR = 1e-8
A2_MAX_K = 10
ANCHOR_CEILING = 1e6


class MotilityDomainError(ValueError):
    """Raised when a singular motility is evaluated below its floor."""


class AnchorError(RuntimeError):
    """No anchor with ``gamma(a) <= 1/(2 tau)`` exists below the search ceiling."""


class Family(str, Enum):
    EXP_DECAY = "exp-decay"
    POWER = "power"
    GAUSSIAN = "gaussian"
    DOUBLE_EXP = "double-exp"
    CONSTANT = "constant"
    TABULATED = "tabulated"


@dataclass(frozen=True, eq=False)
class Motility:
    family: Family
    k: float = 1.0
    scale: float = 1.0
    value: float = 1.0
    anchor_a: float | None = None
    floor_s: float = 0.0
    table: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if self.family is Family.POWER:
            if not self.k > 0:
                raise ValueError(f"power motility needs k > 0, got k={self.k}")
            object.__setattr__(self, "floor_s", max(self.floor_s, SINGULAR_FLOOR))
        if self.family is Family.CONSTANT and not self.value > 0:
            raise ValueError("constant motility must be positive")
        if self.family is Family.TABULATED:
            if self.table is None:
                raise ValueError("tabulated motility needs a table")
            s, g = (np.asarray(a, dtype=float) for a in self.table)
            if s.ndim != 1 or s.size < 2 or s.shape != g.shape:
                raise ValueError("table needs at least two (s, gamma) rows")
            if np.any(np.diff(s) <= 0):
                raise ValueError("table s values must be strictly increasing")
            object.__setattr__(self, "table", (s, g))
            object.__setattr__(self, "floor_s", max(self.floor_s, float(s[0])))

    @property
    def is_singular(self) -> bool:
        return self.family is Family.POWER

    @property
    def has_second_derivative(self) -> bool:
        return self.family is not Family.TABULATED

    def with_anchor(self, a: float) -> "Motility":
        return replace(self, anchor_a=float(a))

    def with_floor(self, floor_s: float) -> "Motility":
        return replace(self, floor_s=float(floor_s))

    def describe(self) -> str:
        if self.family is Family.POWER:
            return f"power(k={self.k:g}, scale={self.scale:g})"
        if self.family is Family.CONSTANT:
            return f"constant({self.value:g})"
        if self.family is Family.TABULATED:
            return f"tabulated({self.table[0].size} rows)"
        return f"{self.family.value}(scale={self.scale:g})"

    # evaluation -----------------------------------------------------------

    def _check(self, s):
        s = np.asarray(s, dtype=float)
        if (self.is_singular or self.family is Family.TABULATED) and np.any(s < self.floor_s):
            raise MotilityDomainError(
                f"{self.describe()} evaluated at s={float(np.min(s))!r} below floor {self.floor_s!r}"
            )
        return s

    def gamma(self, s):
        s = self._check(s)
        x = s / self.scale
        fam = self.family
        if fam is Family.EXP_DECAY:
            out = np.exp(-x)
        elif fam is Family.POWER:
            out = x ** (-self.k)
        elif fam is Family.GAUSSIAN:
            out = np.exp(-x * x)
        elif fam is Family.DOUBLE_EXP:
            with np.errstate(over="ignore"):
                out = np.exp(-np.exp(x))
        elif fam is Family.CONSTANT:
            out = np.full_like(x, self.value)
        else:
            ts, tg = self.table
            out = np.interp(s, ts, tg)
        return out if out.ndim else float(out)

    def d1(self, s):
        s = self._check(s)
        x = s / self.scale
        c = 1.0 / self.scale
        fam = self.family
        if fam is Family.EXP_DECAY:
            out = -c * np.exp(-x)
        elif fam is Family.POWER:
            out = -self.k * c * x ** (-self.k - 1)
        elif fam is Family.GAUSSIAN:
            out = -2.0 * c * x * np.exp(-x * x)
        elif fam is Family.DOUBLE_EXP:
            with np.errstate(over="ignore"):
                out = -c * np.exp(x - np.exp(x))
        elif fam is Family.CONSTANT:
            out = np.zeros_like(x)
        else:
            ts, tg = self.table
            slopes = np.append(np.diff(tg) / np.diff(ts), 0.0)
            idx = np.clip(np.searchsorted(ts, s, side="right") - 1, 0, ts.size - 1)
            out = slopes[idx]
        return out if out.ndim else float(out)

    def d2(self, s):
        s = self._check(s)
        x = s / self.scale
        c2 = 1.0 / self.scale**2
        fam = self.family
        if fam is Family.EXP_DECAY:
            out = c2 * np.exp(-x)
        elif fam is Family.POWER:
            out = self.k * (self.k + 1) * c2 * x ** (-self.k - 2)
        elif fam is Family.GAUSSIAN:
            out = c2 * (4.0 * x * x - 2.0) * np.exp(-x * x)
        elif fam is Family.DOUBLE_EXP:
            with np.errstate(over="ignore"):
                ex = np.exp(x)
                out = c2 * (np.exp(2.0 * x - ex) - np.exp(x - ex))
        elif fam is Family.CONSTANT:
            out = np.zeros_like(x)
        else:
            raise NotImplementedError("tabulated motility has no second derivative")
        return out if out.ndim else float(out)


def gamma_eval(m: Motility, s):
    return m.gamma(s)


def gamma_d1(m: Motility, s):
    return m.d1(s)


def gamma_d2(m: Motility, s):
    return m.d2(s)


def load_tabulated(path: str | Path) -> Motility:
    """Read a two-column ``s, gamma`` CSV; a non-numeric first row is taken as a header."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                if rows:
                    raise ValueError(f"{path}:{lineno}: expected two numbers, got {row}") from None
    data = np.array(rows, dtype=float)
    return Motility(Family.TABULATED, table=(data[:, 0], data[:, 1]))


# structural assumptions -------------------------------------------------------


@dataclass(frozen=True)
class AssumptionReport:
    """Lattice verdicts for the motility assumptions.

    ``a2_k`` is the least integer ``k`` for which ``s**k * gamma(s)`` is
    strictly increasing on the upper half of the lattice, or ``None``.
    ``a3`` is ``None`` when the family has no second derivative.
    """

    a0: bool
    a1: bool
    a1_prime: bool
    a2_k: int | None
    a3: bool | None
    gamma_tail: float

    @property
    def a2(self) -> bool:
        return self.a2_k is not None

    def lines(self) -> list[str]:
        def mark(flag):
            return "?" if flag is None else ("✓" if flag else "✗")

        a2 = f"A2(k={self.a2_k}) ✓" if self.a2 else "A2 ✗"
        return [f"A0 {mark(self.a0)}", f"A1 {mark(self.a1)}", f"A1' {mark(self.a1_prime)}", a2, f"A3 {mark(self.a3)}"]


def assumption_lattice(m: Motility, s_max: float, samples: int) -> np.ndarray:
    lo = max(m.floor_s, 1e-3 * m.scale) if m.floor_s > 0 else 1e-3 * m.scale
    lo = min(lo, s_max / 10)
    pts = np.geomspace(lo, s_max, samples)
    if m.floor_s == 0.0:
        pts = np.concatenate([[0.0], pts])
    return pts


def check_assumptions(m: Motility, s_max: float = 1e3, samples: int = 10_000) -> AssumptionReport:
    """Check the motility assumptions on a log-spaced lattice up to ``s_max``.

    A1 is accepted when the tail is numerically zero (``gamma(s_max) < 1e-6``)
    or still strictly decaying (``gamma(s_max) <= 0.95 gamma(s_max/2)``).
    A1' is accepted when, on top of A0, ``gamma(s_max) < 1``; monotonicity then
    bounds the limit by that value.
    """
    if samples < 100:
        raise ValueError("need at least 100 lattice samples")
    if m.anchor_a is not None and not s_max > m.anchor_a:
        raise ValueError("s_max must exceed the anchor")
    s = assumption_lattice(m, s_max, samples)
    g = np.asarray(m.gamma(s))
    if m.family is Family.TABULATED:
        a0 = bool(np.all(g > 0) and np.all(np.diff(g) <= 0))
    else:
        # closed forms are positive analytically; only a sign error or NaN fails,
        # an underflow to 0.0 far out in the tail does not
        a0 = bool(np.all(g >= 0) and g[0] > 0 and np.all(np.asarray(m.d1(s)) <= 0))

    tail = float(m.gamma(s_max))
    half = float(m.gamma(s_max / 2))
    a1 = a0 and (tail < 1e-6 or tail <= 0.95 * half)
    a1_prime = a0 and tail < 1.0

    upper = s[s >= s_max / 2]
    g_up = np.asarray(m.gamma(upper))
    a2_k = None
    with np.errstate(over="ignore"):
        for k in range(1, A2_MAX_K + 1):
            prod = upper**k * g_up
            if np.all(np.isfinite(prod)) and np.all(np.diff(prod) > 0):
                a2_k = k
                break

    if m.has_second_derivative:
        d1 = np.asarray(m.d1(s))
        lhs = 2.0 * d1 * d1
        rhs = g * np.asarray(m.d2(s))
        # equality cases (power k=1) must survive round-off
        a3 = bool(np.all(lhs <= rhs + 1e-12 * np.abs(rhs) + 1e-300))
    else:
        a3 = None
    return AssumptionReport(a0, a1, a1_prime, a2_k, a3, tail)


# anchor and Gamma -------------------------------------------------------------


def choose_anchor(m: Motility, tau: float) -> float:
    """Smallest ``a`` with ``gamma(a) <= 1/(2 tau)``.

    The first sign change on a log lattice brackets the root, which is then
    polished with Brent's method so closed-form answers come out exactly.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    target = 1.0 / (2.0 * tau)
    start = max(m.floor_s, 0.0)
    if m.gamma(start) <= target:
        return float(start)
    lattice = np.concatenate([[start], np.geomspace(max(start, 1e-6 * m.scale), ANCHOR_CEILING * m.scale, 4000)])
    g = np.asarray(m.gamma(lattice))
    hits = np.nonzero(g <= target)[0]
    if hits.size == 0:
        raise AnchorError(
            f"{m.describe()}: gamma stays above 1/(2 tau)={target:g} up to s={lattice[-1]:g}"
        )
    hi = lattice[hits[0]]
    lo = lattice[hits[0] - 1]
    return float(optimize.brentq(lambda s: m.gamma(s) - target, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps))


def big_gamma(m: Motility, s):
    """``Gamma(s) = int_a^s gamma``, in closed form where one exists."""
    if m.anchor_a is None:
        raise ValueError("anchor_a is not set; call choose_anchor first")
    a = m.anchor_a
    s_arr = m._check(s)
    m._check(a)
    fam, sc = m.family, m.scale
    if fam is Family.EXP_DECAY:
        out = sc * (np.exp(-a / sc) - np.exp(-s_arr / sc))
    elif fam is Family.POWER:
        if m.k == 1.0:
            out = sc * np.log(s_arr / a)
        else:
            p = 1.0 - m.k
            out = sc * ((s_arr / sc) ** p - (a / sc) ** p) / p
    elif fam is Family.CONSTANT:
        out = m.value * (s_arr - a)
    elif fam is Family.GAUSSIAN:
        from scipy.special import erf

        out = sc * math.sqrt(math.pi) / 2 * (erf(s_arr / sc) - erf(a / sc))
    elif fam is Family.TABULATED:
        out = np.vectorize(lambda t: _tabulated_integral(m, a, t))(s_arr)
    else:
        out = np.vectorize(lambda t: _quad(m, a, t))(s_arr)
    out = np.asarray(out, dtype=float)
    return out if out.ndim else float(out)


def _quad(m: Motility, a: float, s: float) -> float:
    val, _ = spi.quad(lambda t: m.gamma(t), a, s, epsabs=1e-10, epsrel=1e-12, limit=200)
    return val


def _tabulated_integral(m: Motility, a: float, s: float) -> float:
    ts, tg = m.table
    lo, hi, sign = (a, s, 1.0) if s >= a else (s, a, -1.0)
    knots = np.concatenate([[lo], ts[(ts > lo) & (ts < hi)], [hi]])
    return sign * float(np.trapezoid(np.interp(knots, ts, tg), knots))


def sandwich_constant(m: Motility, s0: float) -> float:
    """``C_a(s0) = max(2 a gamma(s0), a gamma(a))``: lower-bound slack of Gamma."""
    a = m.anchor_a
    return max(2.0 * a * float(m.gamma(s0)), a * float(m.gamma(a)))


def builtin(name: str, **params) -> Motility:
    return Motility(Family(name), **params)
