import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motisim.diagnostics import Verdict, lyapunov
from motisim.experiments import (
    EIGHT_PI,
    BlowupDatumParams,
    QuantizationError,
    ResolutionError,
    StationaryNotConverged,
    SweepConfig,
    blowup_datum,
    boltzmann_density,
    bump_function,
    core_mass,
    critical_mass_sweep,
    gaussian_bump,
    quantization_guard,
    stationary_solve,
    sweep_row,
    unnormalized_profiles,
    upper_bracket,
    write_sweep_csv,
)
from motisim.grid import DomainSpec, build_grid, integrate, laplacian_values
from motisim.motility import Family, Motility
from motisim.runio import verify_run
from motisim.solver import SimState, step

DISK = build_grid(DomainSpec.disk(0.5, 512))


def test_bump_values():
    assert bump_function(0.2, 0.1, 0.0) == 1.0
    assert bump_function(0.2, 0.1, 0.1) == 1.0
    assert bump_function(0.2, 0.1, 0.2) == 0.0
    assert bump_function(0.2, 0.1, 0.3) == 0.0
    assert bump_function(0.2, 0.1, 0.15) == pytest.approx(0.5, abs=1e-12)
    assert bump_function(0.2, 0.1, np.array([[0.0, 0.05], [0.3, 0.0]])).tolist() == [1.0, 0.0]
    with pytest.raises(ValueError):
        bump_function(0.1, 0.2, 0.0)


def test_bump_monotone_and_smooth():
    rho = np.linspace(0, 0.25, 1000)
    phi = bump_function(0.2, 0.1, rho)
    assert np.all(np.diff(phi) <= 0)
    assert np.all((phi >= 0) & (phi <= 1))
    # flat at both ends of the transition (all derivatives vanish there)
    assert 1 - bump_function(0.2, 0.1, 0.1 + 1e-3) < 1e-10
    assert bump_function(0.2, 0.1, 0.2 - 1e-3) < 1e-10


@settings(max_examples=50, deadline=None)
@given(rho=st.floats(0.0, 2.0), lam=st.floats(0.5, 500.0))
def test_profiles_exp_identity(rho, lam):
    u, v = unnormalized_profiles(lam)
    assert math.exp(v(rho)) == pytest.approx(float(u(rho)), rel=1e-12)


def test_profiles_solve_liouville_second_order():
    lam = 5.0
    u, v = unnormalized_profiles(lam)
    errs = []
    for n in (64, 128, 256):
        grid = build_grid(DomainSpec.disk(1.0, n))
        r = grid.radius
        res = laplacian_values(grid, v(r)) + u(r)
        # the outermost cell carries the no-flux face, which v_lam does not satisfy
        errs.append(np.max(np.abs(res[:-1])))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.9)


def test_core_mass_quadrature():
    lam = 20.0
    u, _ = unnormalized_profiles(lam)
    ell = 10 / lam
    grid = build_grid(DomainSpec.disk(ell, 512))
    assert integrate(u(grid.radius), grid) == pytest.approx(core_mass(lam, ell), rel=5e-3)
    assert core_mass(lam, ell) == pytest.approx(EIGHT_PI * (1 - 1 / 101), rel=1e-15)


def test_quantization_guard():
    with pytest.raises(QuantizationError):
        quantization_guard(4 * math.pi)
    with pytest.raises(QuantizationError):
        quantization_guard(12 * math.pi + 5e-4)
    quantization_guard(12 * math.pi + 2e-3)
    quantization_guard(4 * math.pi, quantum=EIGHT_PI)


@pytest.mark.parametrize("lam", [20.0, 100.0])
def test_blowup_datum_normalisation_and_bracket(lam):
    p = BlowupDatumParams(1.25 * EIGHT_PI, lam, 0.2, 0.1)
    d = blowup_datum(p, DISK)
    assert integrate(d.u0) == pytest.approx(p.mass_target, rel=1e-8)
    assert p.mass_target / EIGHT_PI <= d.a <= upper_bracket(p)
    assert core_mass(lam, p.r1) < d.core_integral < core_mass(lam, p.r)
    phi = bump_function(p.r, p.r1, DISK.radius)
    inside = (DISK.radius < p.r) & (phi > 0)
    vbar = d.v0.values[inside] / (d.a * phi[inside])
    assert np.all(vbar > math.log(8))
    assert d.u0.min() >= 0 and d.v0.min() >= 0


def test_blowup_datum_energy_decreases_with_lambda():
    p50 = BlowupDatumParams(1.25 * EIGHT_PI, 50.0, 0.2, 0.1)
    p100 = BlowupDatumParams(1.25 * EIGHT_PI, 100.0, 0.2, 0.1)
    f = [lyapunov(SimState.initial(d.u0, d.v0)) for d in (blowup_datum(p, DISK) for p in (p50, p100))]
    assert f[1] < f[0]


def test_blowup_datum_on_rectangle():
    grid = build_grid(DomainSpec.rectangle(1.0, 1.0, 160, 160))
    p = BlowupDatumParams(1.25 * EIGHT_PI, 15.0, 0.2, 0.1, center=(0.5, 0.5))
    d = blowup_datum(p, grid)
    assert integrate(d.u0) == pytest.approx(p.mass_target, rel=1e-8)


def test_blowup_datum_errors():
    with pytest.raises(ValueError):
        BlowupDatumParams(0.9 * EIGHT_PI, 10.0, 0.2, 0.1)
    with pytest.raises(QuantizationError):
        BlowupDatumParams(12 * math.pi, 10.0, 0.2, 0.1)
    with pytest.raises(ValueError):
        BlowupDatumParams(1.25 * EIGHT_PI, 10.0, 0.2, 0.3)
    with pytest.raises(ValueError):
        BlowupDatumParams(1.25 * EIGHT_PI, 0.5, 0.2, 0.1)
    with pytest.raises(ResolutionError):
        blowup_datum(BlowupDatumParams(1.25 * EIGHT_PI, 200.0, 0.2, 0.1), DISK)
    with pytest.raises(ValueError):
        blowup_datum(BlowupDatumParams(1.25 * EIGHT_PI, 10.0, 0.3, 0.1), DISK)
    with pytest.raises(ValueError):
        blowup_datum(BlowupDatumParams(1.25 * EIGHT_PI, 10.0, 0.2, 0.1), build_grid(DomainSpec.interval(1, 64)))


def test_gaussian_bump():
    grid = build_grid(DomainSpec.disk(1.0, 128))
    u0, v0 = gaussian_bump(5.0, grid, 0.1)
    assert integrate(u0) == pytest.approx(5.0, rel=1e-13)
    assert integrate(v0) == pytest.approx(5.0, rel=1e-12)
    assert np.argmax(u0.values) == 0


@pytest.mark.parametrize("spec", [DomainSpec.disk(2.0, 64), DomainSpec.rectangle(1.0, 2.0, 16, 16)],
                         ids=["disk", "rectangle"])
def test_stationary_constant_solution(spec):
    grid = build_grid(spec)
    mass = 5.0
    c = mass / spec.measure
    sol = stationary_solve(mass, grid, grid.constant(c))
    assert sol.residual <= 1e-12
    assert sol.iterations == 0
    assert np.allclose(sol.u_s.values, c, rtol=1e-13)


def test_stationary_closed_form_and_equilibrium_of_stepper():
    grid = build_grid(DomainSpec.disk(1.0, 64))
    mass = 6.0
    c = mass / grid.domain.measure
    sol = stationary_solve(mass, grid, grid.sample(lambda r: c * (1 + 0.3 * np.cos(np.pi * r))))
    assert sol.converged and sol.residual <= 1e-8
    assert np.allclose(sol.u_s.values, boltzmann_density(mass, sol.v_s.values, grid), rtol=1e-14)
    s1 = step(SimState(sol.u_s, sol.v_s, sol.v_s), Motility(Family.EXP_DECAY), 0.1)
    assert np.max(np.abs(s1.u.values - sol.u_s.values)) <= 10 * 1e-8


def test_stationary_guard_and_failure():
    rect = build_grid(DomainSpec.rectangle(1.0, 1.0, 8, 8))
    with pytest.raises(QuantizationError):
        stationary_solve(4 * math.pi, rect, rect.constant(4 * math.pi))
    grid = build_grid(DomainSpec.disk(1.0, 32))
    with pytest.raises(StationaryNotConverged) as exc:
        stationary_solve(6.0, grid, grid.sample(lambda r: 2 + np.cos(np.pi * r)), max_iter=2)
    assert exc.value.solution.iterations == 2 and not exc.value.solution.converged
    with pytest.raises(ValueError):
        stationary_solve(6.0, grid, grid.constant(1.0), damping=0.0)


SMALL = SweepConfig(radius=0.5, n=128, dt=0.05, t_end=5.0, cadence=1)


def test_sweep_empty():
    assert critical_mass_sweep([], "gaussian-bump", SMALL) == []


def test_sweep_row_isolates_failures():
    # the concentrated datum is undefined below 8 pi; the row reports it instead of raising
    row = sweep_row(0.5 * EIGHT_PI, "paper-blowup", SMALL)
    assert row.verdict == Verdict.INCONCLUSIVE.value
    assert row.abort_reason.startswith("bad datum")


def test_sweep_writes_rows_and_run_dirs(tmp_path):
    cfg = SweepConfig(**{**SMALL.__dict__, "out_dir": str(tmp_path)})
    rows = critical_mass_sweep([0.5 * EIGHT_PI], "gaussian-bump", cfg)
    assert rows[0].verdict == "Bounded"
    assert rows[0].F_trend <= 0
    write_sweep_csv(tmp_path / "sweep.csv", rows)
    assert (tmp_path / "sweep.csv").read_text().splitlines()[0] == (
        "mass,verdict,u_max_final,F_initial,F_final,abort_reason"
    )
    run_dir = next(p for p in tmp_path.iterdir() if p.is_dir())
    assert verify_run(run_dir).ok
