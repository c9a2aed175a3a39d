"""Command-line entry point: ``motisim run|sweep|check-motility|stationary|verify``.

Exit codes: 0 success, 1 configuration or solver error, 2 invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, parse_config
from .diagnostics import InsufficientData, classify_boundedness
from .experiments import (
    BlowupDatumParams,
    QuantizationError,
    ResolutionError,
    StationaryNotConverged,
    SweepConfig,
    blowup_datum,
    critical_mass_sweep,
    gaussian_bump,
    stationary_solve,
    write_sweep_csv,
)
from .grid import DomainKind, Field, Grid, build_grid, read_field_csv, write_field_csv
from .motility import AnchorError, Family, Motility, check_assumptions, choose_anchor, load_tabulated
from .runio import RunWriter, verify_run
from .solver import SimState, SolverError, helmholtz_solve, run

log = logging.getLogger("motisim")

EXIT_OK, EXIT_ERROR, EXIT_INVARIANT = 0, 1, 2


def _perturb(values: np.ndarray, eps: float, seed: int) -> np.ndarray:
    """Multiplicative noise ``1 + eps * U(-1, 1)``; ``eps < 1`` keeps signs."""
    if eps == 0:
        return values
    if not 0 < eps < 1:
        raise ConfigError("perturbation must lie in [0, 1)", field="perturbation")
    rng = np.random.default_rng(seed)
    return values * (1.0 + eps * rng.uniform(-1.0, 1.0, size=values.shape))


def initial_fields(cfg: RunConfig, grid: Grid) -> tuple[Field, Field]:
    ini = cfg.initial
    if ini.kind == "constants":
        u0 = grid.constant(ini.u)
        u0 = u0.with_values(_perturb(u0.values, ini.perturbation, cfg.seed))
        return u0, grid.constant(ini.v)
    if ini.kind == "gaussian-bump":
        width = ini.width if ini.width is not None else ini.r / 2
        u0, v0 = gaussian_bump(ini.mass, grid, width, ini.center)
    elif ini.kind == "paper-blowup":
        d = blowup_datum(BlowupDatumParams(ini.mass, ini.lam, ini.r, ini.r1, tuple(ini.center)), grid)
        u0, v0 = d.u0, d.v0
    else:
        u0, v0 = read_field_csv(ini.u_file, grid), read_field_csv(ini.v_file, grid)
    if ini.perturbation:
        u0 = u0.with_values(_perturb(u0.values, ini.perturbation, cfg.seed))
        if ini.kind == "gaussian-bump":
            v0 = helmholtz_solve(u0)
    return u0, v0


# subcommands -------------------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    grid = build_grid(cfg.domain)
    m = cfg.motility.build()
    state0 = SimState.initial(*initial_fields(cfg, grid), tau=cfg.tau)
    out = Path(args.out) if args.out else cfg.output_dir()
    writer = RunWriter.create(out, cfg.echo())
    code = EXIT_OK
    try:
        res = run(state0, m, cfg.dt, cfg.t_end, cadence=cfg.cadence, ceiling=cfg.ceiling,
                  on_record=writer.add_record, on_snapshot=writer.on_snapshot,
                  snapshot_every=cfg.snapshot_every or None)
    except SolverError as exc:
        res = exc.result
        code = EXIT_ERROR
    try:
        verdict = classify_boundedness(res.records, cfg.t_end).value
    except InsufficientData:
        verdict = "n/a"
    writer.finish(res, {"motility": m.describe(), "verdict": verdict})
    first, last = res.records[0], res.records[-1]
    print(f"run directory: {out}")
    print(f"steps {res.steps}  t={res.final.t:.6g}  records {len(res.records)}")
    print(f"mass {first.mass:.12g} -> {last.mass:.12g}")
    print(f"F {first.lyapunov_F:.8g} -> {last.lyapunov_F:.8g}")
    print(f"u_max {first.u_max:.8g} -> {last.u_max:.8g}  verdict {verdict}")
    if res.abort_reason:
        print(f"stopped: {res.abort_reason}")
    return code


def cmd_sweep(args) -> int:
    cfg = parse_config(args.config)
    if cfg.domain.kind is not DomainKind.DISK_RADIAL:
        raise ConfigError("sweep needs a disk-radial domain", field="kind")
    if not cfg.sweep.masses:
        raise ConfigError("sweep needs [sweep] masses", field="masses")
    out = Path(args.out) if args.out else cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    scfg = SweepConfig(
        radius=cfg.domain.extent[0], n=cfg.domain.resolution[0], dt=cfg.dt, t_end=cfg.t_end,
        cadence=cfg.cadence, lam=cfg.sweep.lam, r=cfg.sweep.r, r1=cfg.sweep.r1,
        ceiling=cfg.ceiling, workers=args.workers or cfg.sweep.workers, out_dir=str(out),
    )
    rows = critical_mass_sweep(cfg.sweep.masses, cfg.sweep.datum, scfg)
    write_sweep_csv(out / "sweep.csv", rows)
    print(f"{'mass':>12}  {'verdict':<12} {'u_max_final':>14} {'F_trend':>14}  abort")
    for row in rows:
        print(f"{row.mass:12.6g}  {row.verdict:<12} {row.u_max_final:14.6g} {row.F_trend:14.6g}  {row.abort_reason}")
    print(f"table: {out / 'sweep.csv'}")
    return EXIT_OK


def _parse_params(items: list[str]) -> dict:
    params = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"parameter {item!r} is not key=value", field=item)
        if key == "table":
            params[key] = raw
            continue
        if key not in ("k", "scale", "value", "floor", "anchor"):
            raise ConfigError(f"unknown motility parameter {key!r}", field=key)
        try:
            params[key] = float(raw)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {raw!r}", field=key) from None
    return params


def cmd_check_motility(args) -> int:
    params = _parse_params(args.params)
    try:
        family = Family(args.family)
    except ValueError:
        raise ConfigError(f"unknown motility family {args.family!r}", field="family") from None
    if family is Family.TABULATED:
        if "table" not in params:
            raise ConfigError("tabulated motility needs table=<csv>", field="table")
        m = load_tabulated(params.pop("table"))
    else:
        anchor = params.pop("anchor", None)
        floor = params.pop("floor", 0.0)
        if family is Family.POWER and not params.get("k", 1.0) > 0:
            raise ConfigError("power motility needs k > 0", field="k")
        m = Motility(family, floor_s=floor, **params)
        if anchor is not None:
            m = m.with_anchor(anchor)
    report = check_assumptions(m, s_max=args.s_max)
    print(m.describe())
    print(" ".join(report.lines()))
    try:
        a = m.anchor_a if m.anchor_a is not None else choose_anchor(m, args.tau)
        print(f"anchor a={a:.12g} (gamma(a)={float(m.gamma(a)):.6g}, tau={args.tau:g})")
    except AnchorError as exc:
        print(f"anchor: {exc}")
    return EXIT_OK


def cmd_stationary(args) -> int:
    cfg = parse_config(args.config)
    grid = build_grid(cfg.domain)
    st = cfg.stationary
    mass = st.mass if st.mass is not None else cfg.initial.mass
    if mass is None:
        raise ConfigError("stationary needs a mass ([stationary] or [initial])", field="mass")
    c = mass / grid.domain.measure
    v_init = grid.constant(c).with_values(_perturb(np.full(grid.size, c), st.perturbation, cfg.seed))
    out = Path(args.out) if args.out else cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    try:
        sol = stationary_solve(mass, grid, v_init, st.damping, st.tol, st.max_iter)
        code = EXIT_OK
    except StationaryNotConverged as exc:
        sol, code = exc.solution, EXIT_ERROR
        print(f"not converged: {exc}")
    write_field_csv(out / "v_s.csv", sol.v_s)
    write_field_csv(out / "u_s.csv", sol.u_s)
    summary = {
        "mass": sol.mass, "residual": sol.residual, "lyapunov_F": sol.lyapunov_F,
        "iterations": sol.iterations, "converged": sol.converged,
        "v_min": sol.v_s.min(), "v_max": sol.v_s.max(),
    }
    (out / "stationary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"residual {sol.residual:.3e} after {sol.iterations} iterations; F={sol.lyapunov_F:.10g}")
    print(f"v_s in [{sol.v_s.min():.8g}, {sol.v_s.max():.8g}]; output {out}")
    return code


def cmd_verify(args) -> int:
    report = verify_run(args.run_dir)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.ok else EXIT_INVARIANT


# entry point -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="motisim", description="Density-suppressed motility chemotaxis simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one configuration")
    r.add_argument("config")
    r.add_argument("--out", help="run directory (overrides the config and MOTISIM_OUT)")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="critical-mass sweep over [sweep] masses")
    s.add_argument("config")
    s.add_argument("--out")
    s.add_argument("--workers", type=int, default=None)
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("check-motility", help="report the structural assumptions of a motility")
    c.add_argument("family", help=", ".join(f.value for f in Family))
    c.add_argument("params", nargs="*", help="key=value: k, scale, value, floor, anchor, table")
    c.add_argument("--tau", type=float, default=1.0)
    c.add_argument("--s-max", type=float, default=1e3)
    c.set_defaults(func=cmd_check_motility)

    st = sub.add_parser("stationary", help="solve the stationary problem")
    st.add_argument("config")
    st.add_argument("--out")
    st.set_defaults(func=cmd_stationary)

    v = sub.add_parser("verify", help="re-check the invariants of a run directory")
    v.add_argument("run_dir")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (SolverError, QuantizationError, ResolutionError, AnchorError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
