"""Cell-centred finite-volume grids with a no-flux (Neumann) Laplacian.

Three domain kinds are supported: a 1D interval, a disk reduced to its
radial coordinate, and a 2D rectangle. Every grid stores its cell volumes
(the midpoint quadrature weights) and a list of interior faces with their
transmissibilities. The discrete Laplacian is

    (L f)_i = -(1/w_i) * sum_faces T_f * (f_i - f_j),

so ``-W L`` is the symmetric positive semi-definite stiffness matrix and
boundary faces carry no flux at all.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import sparse

MIN_RESOLUTION = 8


class DomainKind(str, Enum):
    INTERVAL = "interval"
    DISK_RADIAL = "disk-radial"
    RECTANGLE = "rectangle"


@dataclass(frozen=True)
class DomainSpec:
    """Geometry and resolution of a structured domain.

    ``extent`` holds the interval length, the disk radius, or the two side
    lengths of the rectangle. ``resolution`` holds the cell count per axis.
    """

    kind: DomainKind
    extent: tuple[float, ...]
    resolution: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "kind", DomainKind(self.kind))
        object.__setattr__(self, "extent", tuple(float(e) for e in np.atleast_1d(self.extent)))
        object.__setattr__(self, "resolution", tuple(int(n) for n in np.atleast_1d(self.resolution)))
        naxes = 2 if self.kind is DomainKind.RECTANGLE else 1
        if len(self.extent) != naxes or len(self.resolution) != naxes:
            raise ValueError(f"{self.kind.value} needs {naxes} extent/resolution entries")
        if any(not (e > 0 and math.isfinite(e)) for e in self.extent):
            raise ValueError(f"extent must be strictly positive, got {self.extent}")
        if any(n < MIN_RESOLUTION for n in self.resolution):
            raise ValueError(f"resolution must be >= {MIN_RESOLUTION} per axis, got {self.resolution}")

    @classmethod
    def interval(cls, length: float, n: int) -> "DomainSpec":
        return cls(DomainKind.INTERVAL, (length,), (n,))

    @classmethod
    def disk(cls, radius: float, n: int) -> "DomainSpec":
        return cls(DomainKind.DISK_RADIAL, (radius,), (n,))

    @classmethod
    def rectangle(cls, lx: float, ly: float, nx: int, ny: int) -> "DomainSpec":
        return cls(DomainKind.RECTANGLE, (lx, ly), (nx, ny))

    @property
    def measure(self) -> float:
        if self.kind is DomainKind.DISK_RADIAL:
            return math.pi * self.extent[0] ** 2
        return float(np.prod(self.extent))


@dataclass(frozen=True, eq=False)
class Grid:
    """Nodes, quadrature weights and the Neumann Laplacian of a domain.

    Attributes
    ----------
    nodes : ndarray, shape (N, d)
        Cell centres; ``d = 1`` for the interval and the radial disk.
    weights : ndarray, shape (N,)
        Cell volumes (length, or area for the disk and rectangle).
    face_left, face_right : ndarray of int
        Cell indices on either side of each interior face.
    face_trans : ndarray
        Face area divided by centre-to-centre distance.
    """

    domain: DomainSpec
    nodes: np.ndarray
    weights: np.ndarray
    face_left: np.ndarray
    face_right: np.ndarray
    face_trans: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(e / n for e, n in zip(self.domain.extent, self.domain.resolution))

    @property
    def radius(self) -> np.ndarray:
        """Distance of each node from the origin (the disk centre for radial grids)."""
        return np.linalg.norm(self.nodes, axis=1)

    @property
    def stiffness(self) -> sparse.csr_matrix:
        """Symmetric PSD matrix ``A`` with ``L = -W^{-1} A``."""
        if "stiffness" not in self._cache:
            n = self.size
            i, j, t = self.face_left, self.face_right, self.face_trans
            off = sparse.coo_matrix(
                (np.concatenate([-t, -t]), (np.concatenate([i, j]), np.concatenate([j, i]))),
                shape=(n, n),
            )
            diag = np.bincount(i, t, minlength=n) + np.bincount(j, t, minlength=n)
            self._cache["stiffness"] = (off + sparse.diags(diag)).tocsr()
        return self._cache["stiffness"]

    @property
    def laplacian(self) -> sparse.csr_matrix:
        """The discrete Neumann Laplacian as a sparse matrix."""
        if "laplacian" not in self._cache:
            self._cache["laplacian"] = (-sparse.diags(1.0 / self.weights) @ self.stiffness).tocsr()
        return self._cache["laplacian"]

    def field(self, values) -> "Field":
        return Field(self, values)

    def constant(self, c: float) -> "Field":
        return Field(self, np.full(self.size, float(c)))

    def sample(self, fn) -> "Field":
        """Evaluate ``fn`` on the node coordinates (called as ``fn(x)`` or ``fn(x, y)``)."""
        coords = [self.nodes[:, k] for k in range(self.nodes.shape[1])]
        return Field(self, np.broadcast_to(np.asarray(fn(*coords), dtype=float), (self.size,)))

    def axis_labels(self) -> list[str]:
        if self.domain.kind is DomainKind.DISK_RADIAL:
            return ["r"]
        if self.domain.kind is DomainKind.INTERVAL:
            return ["x"]
        return ["x", "y"]


@dataclass(frozen=True, eq=False)
class Field:
    """Real values on the nodes of a grid. Values are stored read-only."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True).reshape(-1)
        if vals.size != self.grid.size:
            raise ValueError(f"field has {vals.size} values, grid has {self.grid.size} nodes")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self) -> int:
        return self.values.size

    def with_values(self, values) -> "Field":
        return Field(self.grid, values)

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())

    def sup_norm(self) -> float:
        return float(np.abs(self.values).max())


def build_grid(spec: DomainSpec) -> Grid:
    """Build the uniform cell-centred grid described by ``spec``."""
    kind = spec.kind
    if kind is DomainKind.INTERVAL:
        (length,), (n,) = spec.extent, spec.resolution
        h = length / n
        x = (np.arange(n) + 0.5) * h
        left = np.arange(n - 1)
        return Grid(spec, x[:, None], np.full(n, h), left, left + 1, np.full(n - 1, 1.0 / h))

    if kind is DomainKind.DISK_RADIAL:
        (radius,), (n,) = spec.extent, spec.resolution
        h = radius / n
        r = (np.arange(n) + 0.5) * h
        # midpoint rule 2*pi*r_c*h: sums to pi*R^2 because sum(i + 1/2) = n^2/2
        weights = 2.0 * np.pi * r * h
        left = np.arange(n - 1)
        r_face = (left + 1) * h
        # faces at r=0 and r=R carry zero flux and are simply omitted
        return Grid(spec, r[:, None], weights, left, left + 1, 2.0 * np.pi * r_face / h)

    (lx, ly), (nx, ny) = spec.extent, spec.resolution
    hx, hy = lx / nx, ly / ny
    x = (np.arange(nx) + 0.5) * hx
    y = (np.arange(ny) + 0.5) * hy
    X, Y = np.meshgrid(x, y, indexing="ij")
    idx = np.arange(nx * ny).reshape(nx, ny)
    left = np.concatenate([idx[:-1, :].ravel(), idx[:, :-1].ravel()])
    right = np.concatenate([idx[1:, :].ravel(), idx[:, 1:].ravel()])
    trans = np.concatenate([
        np.full((nx - 1) * ny, hy / hx),
        np.full(nx * (ny - 1), hx / hy),
    ])
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    return Grid(spec, nodes, np.full(nx * ny, hx * hy), left, right, trans)


def face_fluxes(grid: Grid, values: np.ndarray) -> np.ndarray:
    """``T_f * (f_right - f_left)`` on every interior face."""
    return grid.face_trans * (values[grid.face_right] - values[grid.face_left])


def laplacian_values(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Array version of :func:`apply_laplacian`.

    Works face by face, so a constant input gives exactly zero.
    """
    flux = face_fluxes(grid, values)
    n = grid.size
    div = np.bincount(grid.face_left, flux, minlength=n) - np.bincount(grid.face_right, flux, minlength=n)
    return div / grid.weights


def apply_laplacian(f: Field) -> Field:
    return Field(f.grid, laplacian_values(f.grid, f.values))


def integrate(f: Field | np.ndarray, grid: Grid | None = None) -> float:
    """Midpoint quadrature of a field over the domain."""
    if isinstance(f, Field):
        grid, values = f.grid, f.values
    else:
        values = np.asarray(f)
    return float(np.dot(grid.weights, values))


def grad_norm_sq(f: Field | np.ndarray, grid: Grid | None = None) -> float:
    """Discrete Dirichlet energy ``sum_f T_f (f_j - f_i)^2``.

    Equals ``-integrate(f * apply_laplacian(f))`` up to round-off.
    """
    if isinstance(f, Field):
        grid, values = f.grid, f.values
    else:
        values = np.asarray(f)
    d = values[grid.face_right] - values[grid.face_left]
    return float(np.dot(grid.face_trans, d * d))


def write_field_csv(path: str | Path, f: Field) -> None:
    """Write one row per node (``coord..., value``) at 17 significant digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(f.grid.axis_labels() + ["value"])
        for coords, value in zip(f.grid.nodes, f.values):
            writer.writerow([f"{c:.17g}" for c in coords] + [f"{value:.17g}"])


def read_field_csv(path: str | Path, grid: Grid) -> Field:
    """Read a snapshot written by :func:`write_field_csv` back onto ``grid``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != grid.axis_labels() + ["value"]:
            raise ValueError(f"{path}: header {header} does not match grid axes")
        rows = [row for row in reader if row]
    data = np.array(rows, dtype=float)
    if data.shape[0] != grid.size:
        raise ValueError(f"{path}: {data.shape[0]} rows, grid has {grid.size} nodes")
    if not np.allclose(data[:, :-1], grid.nodes, rtol=1e-12, atol=1e-14):
        raise ValueError(f"{path}: node coordinates do not match grid")
    return Field(grid, data[:, -1])

