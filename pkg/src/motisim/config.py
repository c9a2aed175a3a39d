"""Sectioned ``key = value`` run configuration.

Example::

    [domain]
    kind = disk-radial
    extent = 0.5
    resolution = 512

    [motility]
    family = exp-decay

    [run]
    dt = 1e-3
    t_end = 10

    [initial]
    kind = gaussian-bump
    mass = 12.566

Every key below is optional except ``[domain]`` and ``[run] dt, t_end``.
Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .grid import DomainKind, DomainSpec
from .motility import Family, Motility, load_tabulated


class ConfigError(ValueError):
    """Parse or validation failure; ``field`` names the offending key."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        super().__init__(message)
        self.field = field
        self.line = line


SCHEMA: dict[str, set[str]] = {
    "domain": {"kind", "extent", "resolution"},
    "motility": {"family", "k", "scale", "value", "table", "anchor", "floor"},
    "run": {"tau", "dt", "t_end", "cadence", "ceiling", "seed", "output", "snapshot_every"},
    "initial": {"kind", "u", "v", "mass", "width", "center", "lambda", "r", "r1", "u_file", "v_file", "perturbation"},
    "sweep": {"masses", "datum", "workers", "lambda", "r", "r1"},
    "stationary": {"mass", "damping", "tol", "max_iter", "perturbation"},
}

INITIAL_KINDS = ("constants", "gaussian-bump", "paper-blowup", "from-file")


@dataclass(frozen=True)
class MotilityConfig:
    family: str = "exp-decay"
    k: float = 1.0
    scale: float = 1.0
    value: float = 1.0
    table: str | None = None
    anchor: float | None = None
    floor: float = 0.0

    def build(self) -> Motility:
        if self.family == Family.TABULATED.value:
            m = load_tabulated(self.table)
            if self.floor:
                m = m.with_floor(max(self.floor, m.floor_s))
        else:
            m = Motility(Family(self.family), k=self.k, scale=self.scale, value=self.value, floor_s=self.floor)
        if self.anchor is not None:
            m = m.with_anchor(self.anchor)
        return m


@dataclass(frozen=True)
class InitialConfig:
    kind: str = "constants"
    u: float = 1.0
    v: float = 1.0
    mass: float | None = None
    width: float | None = None
    center: tuple[float, ...] = (0.0, 0.0)
    lam: float = 100.0
    r: float = 0.2
    r1: float = 0.1
    u_file: str | None = None
    v_file: str | None = None
    perturbation: float = 0.0


@dataclass(frozen=True)
class SweepSection:
    masses: tuple[float, ...] = ()
    datum: str = "gaussian-bump"
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    lam: float = 100.0
    r: float = 0.2
    r1: float = 0.1


@dataclass(frozen=True)
class StationarySection:
    mass: float | None = None
    damping: float = 0.5
    tol: float = 1e-8
    max_iter: int = 10_000
    perturbation: float = 0.0


@dataclass(frozen=True)
class RunConfig:
    domain: DomainSpec
    motility: MotilityConfig
    initial: InitialConfig
    tau: float = 1.0
    dt: float = 1e-3
    t_end: float = 1.0
    cadence: int = 10
    ceiling: float = 1e8
    seed: int = 0
    output: str = "runs/run"
    snapshot_every: int = 0
    sweep: SweepSection = SweepSection()
    stationary: StationarySection = StationarySection()
    source: str | None = None

    def output_dir(self) -> Path:
        root = os.environ.get("MOTISIM_OUT")
        out = Path(self.output)
        if out.is_absolute():
            return Path(root) / out.name if root else out
        return (Path(root) if root else Path.cwd()) / out

    def echo(self) -> dict:
        """Plain-data view of the configuration (written into every run directory)."""
        d = asdict(self)
        d["domain"] = {
            "kind": self.domain.kind.value,
            "extent": list(self.domain.extent),
            "resolution": list(self.domain.resolution),
        }
        d.pop("source")
        return d


# parsing ----------------------------------------------------------------------------


def _num(section: str, key: str, raw: str, kind=float):
    try:
        val = kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {kind.__name__}", field=key) from None
    if kind is float and not math.isfinite(val):
        raise ConfigError(f"[{section}] {key}: must be finite", field=key)
    return val


def _floats(section: str, key: str, raw: str) -> tuple[float, ...]:
    parts = [p for p in raw.replace(",", " ").split() if p]
    return tuple(_num(section, key, p) for p in parts)


def _positive(value, name: str):
    if not value > 0:
        raise ConfigError(f"{name} must be positive, got {value}", field=name)
    return value


def parse_config(path: str | Path) -> RunConfig:
    """Read and validate a configuration file."""
    path = Path(path)
    parser = configparser.ConfigParser(strict=True, interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    try:
        parser.read_string(text, source=str(path))
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: key outside any section", line=exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError(f"{path}:{lineno}: malformed line", line=lineno) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigError(f"{path}:{exc.lineno}: {exc.message}", line=exc.lineno) from None

    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", field=section)
        for key in parser[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key [{section}] {key}", field=key)
    base = path.parent

    def get(section, key, default=None):
        if parser.has_section(section) and key in parser[section]:
            return parser[section][key].strip()
        return default

    def resolve(p):
        if p is None:
            return None
        q = Path(p)
        q = q if q.is_absolute() else base / q
        if not q.exists():
            raise ConfigError(f"file not found: {q}", field=str(p))
        return str(q)

    if not parser.has_section("domain"):
        raise ConfigError("missing [domain] section", field="domain")
    kind = get("domain", "kind", "interval")
    try:
        dkind = DomainKind(kind)
    except ValueError:
        raise ConfigError(f"unknown domain kind {kind!r}", field="kind") from None
    extent_raw, res_raw = get("domain", "extent"), get("domain", "resolution")
    if extent_raw is None or res_raw is None:
        raise ConfigError("[domain] needs extent and resolution", field="extent" if extent_raw is None else "resolution")
    try:
        domain = DomainSpec(
            dkind,
            _floats("domain", "extent", extent_raw),
            tuple(_num("domain", "resolution", p, int) for p in res_raw.replace(",", " ").split()),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[domain] {exc}", field="resolution" if "resolution" in str(exc) else "extent") from None

    family = get("motility", "family", "exp-decay")
    if family not in {f.value for f in Family}:
        raise ConfigError(f"unknown motility family {family!r}", field="family")
    mot = MotilityConfig(
        family=family,
        k=_num("motility", "k", get("motility", "k", "1")),
        scale=_num("motility", "scale", get("motility", "scale", "1")),
        value=_num("motility", "value", get("motility", "value", "1")),
        table=resolve(get("motility", "table")),
        anchor=None if get("motility", "anchor") is None else _num("motility", "anchor", get("motility", "anchor")),
        floor=_num("motility", "floor", get("motility", "floor", "0")),
    )
    if family == "power" and not mot.k > 0:
        raise ConfigError(f"power motility needs k > 0, got k={mot.k:g}", field="k")
    if family == "tabulated" and mot.table is None:
        raise ConfigError("tabulated motility needs a table file", field="table")
    _positive(mot.scale, "scale")
    try:
        mot.build()
    except (ValueError, OSError) as exc:
        raise ConfigError(f"[motility] {exc}", field="family") from None

    ikind = get("initial", "kind", "constants")
    if ikind not in INITIAL_KINDS:
        raise ConfigError(f"unknown initial kind {ikind!r}", field="kind")
    center_raw = get("initial", "center")
    init = InitialConfig(
        kind=ikind,
        u=_num("initial", "u", get("initial", "u", "1")),
        v=_num("initial", "v", get("initial", "v", "1")),
        mass=None if get("initial", "mass") is None else _num("initial", "mass", get("initial", "mass")),
        width=None if get("initial", "width") is None else _num("initial", "width", get("initial", "width")),
        center=_floats("initial", "center", center_raw) if center_raw else (0.0, 0.0),
        lam=_num("initial", "lambda", get("initial", "lambda", "100")),
        r=_num("initial", "r", get("initial", "r", "0.2")),
        r1=_num("initial", "r1", get("initial", "r1", "0.1")),
        u_file=resolve(get("initial", "u_file")),
        v_file=resolve(get("initial", "v_file")),
        perturbation=_num("initial", "perturbation", get("initial", "perturbation", "0")),
    )
    if ikind == "constants" and (init.u < 0 or init.v < 0):
        raise ConfigError("constant initial data must be non-negative", field="u" if init.u < 0 else "v")
    if ikind in ("gaussian-bump", "paper-blowup") and init.mass is None:
        raise ConfigError(f"{ikind} initial data needs a mass", field="mass")
    if ikind == "from-file" and (init.u_file is None or init.v_file is None):
        raise ConfigError("from-file initial data needs u_file and v_file", field="u_file")

    dt_raw, t_end_raw = get("run", "dt"), get("run", "t_end")
    if dt_raw is None:
        raise ConfigError("[run] dt is required", field="dt")
    if t_end_raw is None:
        raise ConfigError("[run] t_end is required", field="t_end")
    dt = _positive(_num("run", "dt", dt_raw), "dt")
    t_end = _positive(_num("run", "t_end", t_end_raw), "t_end")
    if not dt < t_end:
        raise ConfigError(f"dt={dt:g} must be smaller than t_end={t_end:g}", field="dt")
    tau = _positive(_num("run", "tau", get("run", "tau", "1")), "tau")
    cadence = _num("run", "cadence", get("run", "cadence", "10"), int)
    if cadence < 1:
        raise ConfigError("cadence must be >= 1", field="cadence")
    ceiling = _positive(_num("run", "ceiling", get("run", "ceiling", "1e8")), "ceiling")
    snapshot_every = _num("run", "snapshot_every", get("run", "snapshot_every", "0"), int)
    if snapshot_every < 0:
        raise ConfigError("snapshot_every must be >= 0", field="snapshot_every")

    sweep_kwargs = {}
    if parser.has_section("sweep"):
        masses_raw = get("sweep", "masses", "")
        sweep_kwargs["masses"] = _floats("sweep", "masses", masses_raw)
        datum = get("sweep", "datum", "gaussian-bump")
        if datum not in ("gaussian-bump", "paper-blowup"):
            raise ConfigError(f"unknown sweep datum {datum!r}", field="datum")
        sweep_kwargs["datum"] = datum
        if get("sweep", "workers") is not None:
            sweep_kwargs["workers"] = _num("sweep", "workers", get("sweep", "workers"), int)
            if sweep_kwargs["workers"] < 1:
                raise ConfigError("workers must be >= 1", field="workers")
        for key, name in (("lambda", "lam"), ("r", "r"), ("r1", "r1")):
            if get("sweep", key) is not None:
                sweep_kwargs[name] = _num("sweep", key, get("sweep", key))

    stat_kwargs = {}
    if parser.has_section("stationary"):
        for key, kind in (("mass", float), ("damping", float), ("tol", float), ("max_iter", int), ("perturbation", float)):
            if get("stationary", key) is not None:
                stat_kwargs[key] = _num("stationary", key, get("stationary", key), kind)
        if "damping" in stat_kwargs and not 0 < stat_kwargs["damping"] <= 1:
            raise ConfigError("damping must lie in (0, 1]", field="damping")

    return RunConfig(
        domain=domain,
        motility=mot,
        initial=init,
        tau=tau,
        dt=dt,
        t_end=t_end,
        cadence=cadence,
        ceiling=ceiling,
        seed=_num("run", "seed", get("run", "seed", "0"), int),
        output=get("run", "output", f"runs/{path.stem}"),
        snapshot_every=snapshot_every,
        sweep=SweepSection(**sweep_kwargs),
        stationary=StationarySection(**stat_kwargs),
        source=str(path),
    )


def config_from_echo(echo: dict) -> RunConfig:
    """Rebuild a :class:`RunConfig` from :meth:`RunConfig.echo` output."""
    d = dict(echo)
    dom = d.pop("domain")
    return RunConfig(
        domain=DomainSpec(DomainKind(dom["kind"]), tuple(dom["extent"]), tuple(dom["resolution"])),
        motility=MotilityConfig(**d.pop("motility")),
        initial=InitialConfig(**{**d.pop("initial"), "center": tuple(echo["initial"]["center"])}),
        sweep=SweepSection(**{**d.pop("sweep"), "masses": tuple(echo["sweep"]["masses"])}),
        stationary=StationarySection(**d.pop("stationary")),
        **d,
    )
