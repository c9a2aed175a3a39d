import json
import math
from dataclasses import replace

import numpy as np
import pytest

from motisim.diagnostics import (
    RECORD_COLUMNS,
    DiagnosticsRecord,
    InsufficientData,
    Monitor,
    UnsupportedMotility,
    Verdict,
    classify_boundedness,
    comparison_check,
    comparison_setup,
    dissipation,
    entropy_density,
    key_identity_residual,
    lower_signal_floor,
    lyapunov,
    read_records_csv,
    write_records_csv,
    write_records_jsonl,
)
from motisim.grid import DomainSpec, build_grid, integrate
from motisim.motility import Family, Motility, big_gamma
from motisim.solver import SimState, helmholtz_solve, run

EXP = Motility(Family.EXP_DECAY)
UNIT = build_grid(DomainSpec.interval(1.0, 16))
DISK = build_grid(DomainSpec.disk(1.0, 32))


def _state(grid, u, v, tau=1.0):
    return SimState.initial(grid.field(u) if not np.isscalar(u) else grid.constant(u),
                            grid.field(v) if not np.isscalar(v) else grid.constant(v), tau)


def test_entropy_density_zero_convention():
    assert np.array_equal(entropy_density(np.array([0.0, 1.0])), [0.0, 0.0])
    assert entropy_density(np.array([math.e]))[0] == pytest.approx(math.e)


def test_lyapunov_constants():
    assert lyapunov(_state(UNIT, 1.0, 1.0)) == pytest.approx(-0.5, abs=1e-14)
    assert lyapunov(_state(UNIT, 1.0, 0.0)) == pytest.approx(0.0, abs=1e-14)


def test_dissipation_vanishes_at_equilibrium():
    v = 1.0 + 0.4 * np.cos(np.pi * DISK.radius)
    u = 2.0 * np.exp(v)
    s = _state(DISK, u, v)
    assert dissipation(s, s.v, 0.1) == pytest.approx(0.0, abs=1e-12)


def test_dissipation_constant_states_is_time_derivative_only():
    s = _state(UNIT, 2.0, 1.5, tau=3.0)
    prev = UNIT.constant(1.0)
    assert dissipation(s, prev, 0.1) == pytest.approx(3.0 * (0.5 / 0.1) ** 2 * 1.0, rel=1e-12)


def test_dissipation_rejects_other_motility():
    s = _state(UNIT, 1.0, 1.0)
    with pytest.raises(UnsupportedMotility):
        dissipation(s, s.v, 0.1, Motility(Family.POWER, k=1.0))
    with pytest.raises(UnsupportedMotility):
        dissipation(s, s.v, 0.1, Motility(Family.EXP_DECAY, scale=2.0))


def test_key_identity_constant_equilibrium():
    s = _state(DISK, 1.3, 1.3)
    assert key_identity_residual(s, s.w, 0.1, EXP) <= 1e-12


def test_v_star():
    assert lower_signal_floor(UNIT.constant(0.7)) == 0.7
    assert lower_signal_floor(UNIT.field(np.linspace(0, 1, 16))) == 0.0


def test_comparison_setup_orders_initial_data():
    rng = np.random.default_rng(3)
    for tau in (0.5, 1.0, 2.0):
        s0 = _state(DISK, 1 + rng.random(DISK.size) * 4, 0.2 + rng.random(DISK.size) * 3, tau)
        setup, m = comparison_setup(s0, EXP)
        assert tau * m.gamma(m.anchor_a) < 1
        gamma0 = big_gamma(m, s0.v.values)
        # K makes v0 <= w0 + tau Gamma(v0) + K hold nodewise
        assert np.all(s0.v.values <= s0.w.values + tau * gamma0 + setup.K)
        assert setup.K >= max(1.0, tau) * (2 * m.anchor_a * m.gamma(setup.v_star) + m.anchor_a * m.gamma(m.anchor_a))


def test_w_margin_tight_at_start():
    s0 = _state(DISK, 1 + np.cos(np.pi * DISK.radius), 1.0)
    setup, _ = comparison_setup(s0, EXP)
    w_margin, v_margin = comparison_check(s0, setup)
    assert w_margin == 0.0
    assert v_margin >= 0.0


def test_w_bound_for_constant_motility_matches_gronwall():
    # gamma = c: w_t = c (I - Lap)^{-1} u - c u <= c w, so w <= w0 e^{c t}
    m = Motility(Family.CONSTANT, value=0.8)
    s0 = _state(UNIT, 1 + 0.8 * np.cos(np.pi * UNIT.nodes[:, 0]), 0.5)
    res = run(s0, m, 0.01, 1.0, cadence=1)
    assert all(r.w_bound_margin >= 0 for r in res.records)
    setup, _ = comparison_setup(s0, m)
    assert setup.gamma_star == 0.8
    # no anchor exists: gamma stays above 1/(2 tau), so the v-bound is unavailable
    assert all(math.isnan(r.v_bound_margin) for r in res.records)
    low = Motility(Family.CONSTANT, value=0.4)
    assert comparison_setup(s0, low)[0].anchor == 0.0


def test_singular_motility_at_zero_signal_has_no_w_bound():
    m = Motility(Family.POWER, k=1.0)
    s0 = _state(UNIT, 1.0, np.linspace(0, 1, 16))
    setup, _ = comparison_setup(s0, m)
    assert setup.gamma_star is None
    assert math.isnan(comparison_check(s0, setup)[0])


def test_monitor_first_record():
    s0 = _state(DISK, 2.0, 1.0)
    rec = Monitor.start(s0, EXP).record(s0)
    assert math.isnan(rec.dissipation_D) and math.isnan(rec.key_identity_residual)
    assert rec.mass == pytest.approx(2 * math.pi, rel=1e-14)
    assert rec.K_used > 0


def _records(values, t_end=10.0, reason=""):
    ts = np.linspace(0, t_end, len(values))
    return [
        DiagnosticsRecord(t, i, 1.0, 0.0, 0.0, u, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0,
                          reason if i == len(values) - 1 else "")
        for i, (t, u) in enumerate(zip(ts, values))
    ]


def test_classify_synthetic():
    assert classify_boundedness(_records(np.ones(60))) is Verdict.BOUNDED
    grow = np.exp(np.linspace(0, 5, 60))
    assert classify_boundedness(_records(grow)) is Verdict.GROWING
    wobble = 1 + 0.2 * np.sin(np.linspace(0, 30, 60))
    assert classify_boundedness(_records(wobble)) is Verdict.INCONCLUSIVE
    # round-off drift does not count as a positive trend
    drift = 1 + 1e-9 * np.linspace(0, 1, 60)
    assert classify_boundedness(_records(drift)) is Verdict.BOUNDED
    assert classify_boundedness(_records(np.ones(3), reason="blow-up ceiling 1e+08 exceeded")) is Verdict.GROWING


def test_classify_insufficient():
    with pytest.raises(InsufficientData):
        classify_boundedness(_records(np.ones(10)))
    with pytest.raises(InsufficientData):
        classify_boundedness(_records(np.ones(60), t_end=5.0), t_end=10.0)


def test_classify_invariant_under_subsampling():
    for values in (np.ones(200), np.exp(np.linspace(0, 5, 200)), 1 + 0.01 * np.exp(-np.linspace(0, 5, 200))):
        recs = _records(values)
        assert classify_boundedness(recs) is classify_boundedness(recs[::2])


def test_constant_run_bounded():
    s0 = _state(DISK, 1.0, 1.0)
    res = run(s0, EXP, 0.05, 5.0, cadence=1)
    assert classify_boundedness(res.records, 5.0) is Verdict.BOUNDED


def test_csv_round_trip(tmp_path):
    s0 = _state(DISK, 1 + np.cos(np.pi * DISK.radius), 0.5)
    recs = run(s0, EXP, 0.01, 0.1, cadence=2).records
    recs[-1] = replace(recs[-1], abort_reason="a, b")
    path = tmp_path / "d.csv"
    write_records_csv(path, recs, "abc123")
    back, h = read_records_csv(path)
    assert h == "abc123"
    assert len(back) == len(recs)
    for a, b in zip(recs, back):
        for col in RECORD_COLUMNS:
            x, y = getattr(a, col), getattr(b, col)
            assert (x == y) or (isinstance(x, float) and math.isnan(x) and math.isnan(y))


def test_jsonl(tmp_path):
    s0 = _state(UNIT, 1.0, 1.0)
    recs = run(s0, EXP, 0.1, 0.3).records
    path = tmp_path / "d.jsonl"
    write_records_jsonl(path, recs, "h")
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert rows[0]["dissipation_D"] is None
    assert rows[0]["manifest_sha256"] == "h"
    assert set(RECORD_COLUMNS) <= set(rows[0])


def test_mass_is_integral():
    s0 = _state(DISK, 1 + DISK.radius, 0.0)
    rec = Monitor.start(s0, EXP).record(s0)
    assert rec.mass == integrate(s0.u)
    assert s0.w.values == pytest.approx(helmholtz_solve(s0.u).values)
