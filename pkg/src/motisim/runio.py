"""Self-describing run directories and their re-verification.

Layout::

    <run>/config.json        configuration echo (canonical JSON)
    <run>/manifest.json      hash, outcome, timing, snapshot index
    <run>/diagnostics.csv    one row per record, 17 significant digits
    <run>/diagnostics.jsonl  same records, line-delimited JSON
    <run>/snapshots/         step_XXXXXXXX_{u,v,w}.csv field dumps

The manifest hash is the SHA-256 of the canonical config JSON; both record
streams carry it so a stray CSV can be matched to its configuration.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diagnostics import DiagnosticsRecord, lyapunov, read_records_csv, write_records_csv, write_records_jsonl
from .grid import DomainKind, DomainSpec, Grid, build_grid, integrate, read_field_csv, write_field_csv
from .solver import POSITIVITY_FLOOR, RunResult, SimState

MASS_TOL = 1e-9
MARGIN_TOL = -1e-8
SNAPSHOT_RTOL = 1e-10


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(echo: dict) -> str:
    return hashlib.sha256(canonical_json(echo).encode()).hexdigest()


def grid_from_echo(echo: dict) -> Grid:
    dom = echo["domain"]
    return build_grid(DomainSpec(DomainKind(dom["kind"]), tuple(dom["extent"]), tuple(dom["resolution"])))


@dataclass
class RunWriter:
    root: Path
    echo: dict
    manifest_hash: str
    records: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)

    @classmethod
    def create(cls, root: str | Path, echo: dict) -> "RunWriter":
        """Create ``root`` (and ``snapshots/``) and write the config echo."""
        root = Path(root)
        (root / "snapshots").mkdir(parents=True, exist_ok=True)
        text = canonical_json(echo)
        (root / "config.json").write_text(text + "\n")
        return cls(root, json.loads(text), config_hash(echo))

    def add_record(self, rec: DiagnosticsRecord) -> None:
        self.records.append(rec)

    def on_snapshot(self, state: SimState) -> None:
        k = state.step_index
        if self.snapshots and self.snapshots[-1]["step"] == k:
            return
        names = {}
        for name in ("u", "v", "w"):
            fname = f"step_{k:08d}_{name}.csv"
            write_field_csv(self.root / "snapshots" / fname, getattr(state, name))
            names[name] = fname
        self.snapshots.append({"step": k, "t": float(state.t), **names})

    def finish(self, result: RunResult | None, extra: dict | None = None) -> Path:
        """Write record streams and the manifest; also dump the final state."""
        if result is not None:
            self.on_snapshot(result.final)
        write_records_csv(self.root / "diagnostics.csv", self.records, self.manifest_hash)
        write_records_jsonl(self.root / "diagnostics.jsonl", self.records, self.manifest_hash)
        manifest = {
            "manifest_sha256": self.manifest_hash,
            "records": len(self.records),
            "snapshots": self.snapshots,
        }
        if result is not None:
            manifest.update(
                steps=result.steps,
                t_final=float(result.final.t),
                abort_reason=result.abort_reason,
                error=result.error,
                wall_time_s=round(result.wall_time, 6),
            )
        manifest.update(extra or {})
        (self.root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return self.root


# verification ---------------------------------------------------------------------


@dataclass
class VerifyReport:
    checks: list = field(default_factory=list)  # (name, ok, detail)

    def add(self, name: str, ok: bool, detail: str = "") -> None:
        self.checks.append((name, bool(ok), detail))

    @property
    def ok(self) -> bool:
        return all(ok for _, ok, _ in self.checks)

    def lines(self) -> list[str]:
        return [f"{'PASS' if ok else 'FAIL'} {name}" + (f": {detail}" if detail else "") for name, ok, detail in self.checks]


def _close(a: float, b: float, rtol: float = SNAPSHOT_RTOL) -> bool:
    return abs(a - b) <= rtol * max(1.0, abs(a), abs(b))


def verify_run(root: str | Path) -> VerifyReport:
    """Re-check the stored invariants of a run directory.

    Raises ``FileNotFoundError`` / ``ValueError`` when the directory is
    unreadable; invariant failures are reported, not raised.
    """
    root = Path(root)
    echo = json.loads((root / "config.json").read_text())
    manifest = json.loads((root / "manifest.json").read_text())
    records, csv_hash = read_records_csv(root / "diagnostics.csv")
    rep = VerifyReport()

    h = config_hash(echo)
    rep.add("manifest hash", h == manifest["manifest_sha256"] == csv_hash,
            "" if h == csv_hash else f"config {h[:12]} vs csv {csv_hash[:12]}")
    if not records:
        rep.add("records present", False, "no records")
        return rep

    t = np.array([r.t for r in records])
    bad = np.flatnonzero(np.diff(t) <= 0)
    rep.add("time strictly increasing", bad.size == 0, f"first at row {bad[0] + 1}" if bad.size else "")

    mass = np.array([r.mass for r in records])
    dev = np.abs(mass - mass[0]) / abs(mass[0])
    rep.add("mass conserved", bool(np.all(mass > 0) and dev.max() <= MASS_TOL),
            f"max relative deviation {dev.max():.3e} (row {int(dev.argmax())})")

    umin = min(r.u_min for r in records)
    vmin = min(r.v_min for r in records)
    rep.add("positivity", umin >= POSITIVITY_FLOOR and vmin >= POSITIVITY_FLOOR, f"min u {umin:.3e}, min v {vmin:.3e}")

    for name in ("w_bound_margin", "v_bound_margin"):
        vals = np.array([getattr(r, name) for r in records])
        vals = vals[~np.isnan(vals)]
        worst = float(vals.min()) if vals.size else math.nan
        rep.add(name, not vals.size or worst >= MARGIN_TOL, f"min {worst:.3e}" if vals.size else "unavailable")

    mot = echo.get("motility", {})
    if mot.get("family") == "exp-decay" and float(mot.get("scale", 1.0)) == 1.0:
        F = np.array([r.lyapunov_F for r in records])
        tol = 1e-6 * (1.0 + np.abs(F[:-1]))
        jumps = np.flatnonzero(F[1:] > F[:-1] + tol)
        rep.add("Lyapunov non-increasing", jumps.size == 0, f"rises at row {jumps[0] + 1}" if jumps.size else "")

    grid = grid_from_echo(echo)
    by_step = {r.step: r for r in records}
    tau = float(echo.get("tau", 1.0))
    checked = 0
    for snap in manifest.get("snapshots", []):
        rec = by_step.get(snap["step"])
        if rec is None:
            continue
        fields_ = {n: read_field_csv(root / "snapshots" / snap[n], grid) for n in ("u", "v", "w")}
        state = SimState(fields_["u"], fields_["v"], fields_["w"], snap["t"], tau, snap["step"])
        recomputed = {
            "mass": integrate(state.u),
            "u_max": state.u.max(),
            "v_max": state.v.max(),
            "w_max": state.w.max(),
            "lyapunov_F": lyapunov(state),
        }
        off = [k for k, val in recomputed.items() if not _close(val, getattr(rec, k))]
        rep.add(f"snapshot step {snap['step']}", not off and _close(rec.t, snap["t"]),
                f"mismatch in {', '.join(off)}" if off else "")
        checked += 1
    rep.add("snapshots cross-checked", checked > 0, f"{checked} snapshot(s)")
    return rep
