"""Uniform-grid densities: interpolation, semi-Lagrangian pushforward, norms, I/O.

Values live at cell centers. Between centers the density is the multilinear
interpolant, extended by zero outside the grid.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .fields import Schedule, sup_speed
from .flow import IntegratorConfig, inverse_flow

__all__ = [
    "GridDensity",
    "NormReport",
    "DomainOverflowError",
    "sample_density",
    "transport_density",
    "mass",
    "first_moment",
    "norms",
    "grid_norms",
    "support_envelope",
    "interval_integral",
    "save_density",
    "load_density",
]


class DomainOverflowError(RuntimeError):
    """The transported support would reach the outermost grid layer."""


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Non-negative cell-centred density on a uniform grid.

    ``origin`` is the lower corner of the grid, ``spacing`` the cell width per
    axis; the shape of ``values`` gives the extents. The outermost layer of
    cells must be zero so that the support is compact inside the grid.
    """

    origin: tuple
    spacing: tuple
    values: np.ndarray

    def __post_init__(self):
        origin = tuple(float(o) for o in np.atleast_1d(self.origin))
        spacing = tuple(float(h) for h in np.atleast_1d(self.spacing))
        vals = np.array(self.values, dtype=float)
        if vals.ndim != len(origin) or len(spacing) != len(origin):
            raise ValueError("origin, spacing and values disagree on dimension")
        if any(not h > 0 for h in spacing):
            raise ValueError("grid spacing must be positive")
        if any(n < 3 for n in vals.shape):
            raise ValueError("grid needs at least 3 cells per axis")
        if not np.all(np.isfinite(vals)):
            raise ValueError("density values must be finite")
        if np.any(vals < 0):
            raise ValueError("density values must be non-negative")
        for ax in range(vals.ndim):
            edge = np.take(vals, [0, vals.shape[ax] - 1], axis=ax)
            if np.any(edge != 0):
                raise ValueError("density must vanish on the outermost cell layer")
        vals.setflags(write=False)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, fn, origin, spacing, extents) -> "GridDensity":
        """Sample ``fn`` (vectorised over an ``(n, d)`` array) at the cell centers."""
        origin = np.atleast_1d(np.asarray(origin, dtype=float))
        spacing = np.atleast_1d(np.asarray(spacing, dtype=float))
        extents = tuple(int(n) for n in np.atleast_1d(extents))
        axes = [origin[i] + (np.arange(n) + 0.5) * spacing[i] for i, n in enumerate(extents)]
        pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
        vals = np.asarray(fn(pts), dtype=float).reshape(extents)
        return cls(tuple(origin), tuple(spacing), vals)

    def with_values(self, values) -> "GridDensity":
        return GridDensity(self.origin, self.spacing, values)

    @property
    def dim(self) -> int:
        return len(self.origin)

    @property
    def extents(self) -> tuple:
        return self.values.shape

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self):
        """Cell-center coordinates along each axis."""
        return [self.origin[i] + (np.arange(n) + 0.5) * self.spacing[i] for i, n in enumerate(self.extents)]

    def centers(self) -> np.ndarray:
        """All cell centers as an ``(n_cells, d)`` array in C order."""
        return np.stack([g.ravel() for g in np.meshgrid(*self.axes(), indexing="ij")], axis=-1)

    def bounds(self):
        """Closed box covered by the grid cells."""
        lo = np.asarray(self.origin)
        return lo, lo + np.asarray(self.spacing) * np.asarray(self.extents)

    @property
    def support_box(self):
        """Tight box ``(lo, hi)`` of the centers of nonzero cells, or None if all zero."""
        nz = np.nonzero(self.values)
        if len(nz[0]) == 0:
            return None
        axes = self.axes()
        lo = np.array([axes[i][idx.min()] for i, idx in enumerate(nz)])
        hi = np.array([axes[i][idx.max()] for i, idx in enumerate(nz)])
        return lo, hi


@dataclass(frozen=True)
class NormReport:
    l2: float
    h1: float
    w1inf: float
    mass: float


def _coords(m: GridDensity, x):
    pts = np.asarray(x, dtype=float)
    if m.dim == 1 and (pts.ndim == 0 or (pts.ndim == 1)):
        pts = pts.reshape(-1, 1)
    elif pts.ndim == 1:
        pts = pts.reshape(1, -1)
    idx = (pts - np.asarray(m.origin)) / np.asarray(m.spacing) - 0.5
    return idx.T


def sample_density(m: GridDensity, x):
    """Multilinear interpolation of ``m`` at ``x``; zero outside the grid."""
    arr = np.asarray(x, dtype=float)
    out = ndimage.map_coordinates(m.values, _coords(m, arr), order=1, mode="grid-constant", cval=0.0)
    out = np.maximum(out, 0.0)
    if arr.ndim == 0 or (arr.ndim == 1 and m.dim > 1):
        return float(out[0])
    return out


def mass(m: GridDensity) -> float:
    """Midpoint-rule total mass."""
    return m.cell_volume * float(np.sum(m.values))


def first_moment(m: GridDensity):
    """Midpoint-rule integral of ``xi * m(xi)``; a float in 1D, else a vector."""
    w = m.values.ravel()
    mom = m.cell_volume * (m.centers().T @ w)
    return float(mom[0]) if m.dim == 1 else mom


def _gradient(values, spacing):
    """Central differences with zero extension outside the grid."""
    padded = np.pad(values, 1)
    grads = []
    for ax, h in enumerate(spacing):
        fwd = [slice(1, -1)] * values.ndim
        bwd = [slice(1, -1)] * values.ndim
        fwd[ax] = slice(2, None)
        bwd[ax] = slice(None, -2)
        grads.append((padded[tuple(fwd)] - padded[tuple(bwd)]) / (2.0 * h))
    return grads


def grid_norms(values, spacing) -> NormReport:
    """Discrete norms of an arbitrary (possibly signed) grid function."""
    values = np.asarray(values, dtype=float)
    vol = float(np.prod(spacing))
    grads = _gradient(values, spacing)
    gsq = sum(g * g for g in grads)
    l2sq = vol * float(np.sum(values**2))
    h1sq = l2sq + vol * float(np.sum(gsq))
    w1inf = max(float(np.max(np.abs(values))), float(np.max(np.sqrt(gsq))))
    return NormReport(math.sqrt(l2sq), math.sqrt(h1sq), w1inf, vol * float(np.sum(values)))


def norms(m: GridDensity) -> NormReport:
    return grid_norms(m.values, m.spacing)


def support_envelope(box, M: float, dt: float):
    """Dilate ``box = (lo, hi)`` by ``M * dt`` on every face."""
    if M < 0 or dt < 0:
        raise ValueError("need M >= 0 and dt >= 0")
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    return lo - M * dt, hi + M * dt


def _check_room(m: GridDensity, env):
    lo, hi = env
    axes = m.axes()
    h = np.asarray(m.spacing)
    first = np.array([a[0] for a in axes])
    last = np.array([a[-1] for a in axes])
    if np.any(lo - h < first) or np.any(hi + h > last):
        raise DomainOverflowError(
            f"support envelope [{lo}, {hi}] does not fit one cell inside the grid; enlarge the grid"
        )


def transport_density(
    m0: GridDensity, t: float, s: float, schedule: Schedule, cfg: IntegratorConfig
) -> GridDensity:
    """Push ``m0`` forward from time ``t`` to ``s`` along the scheduled field.

    Each cell center ``x`` is traced back to its foot ``y``; the new value is
    ``m0(y) / det JPhi(y, t, s)``.
    """
    if s < t:
        raise ValueError("transport runs forward in time")
    if s == t:
        return m0
    box = m0.support_box
    if box is None:
        return m0
    _check_room(m0, support_envelope(box, sup_speed(schedule.fields_on(t, s)), s - t))
    centers = m0.centers()
    feet = inverse_flow(centers if m0.dim > 1 else centers[:, 0], t, s, schedule, cfg)
    pos = feet.position.reshape(len(centers), m0.dim)
    vals = sample_density(m0, pos) / np.exp(feet.div_integral)
    vals = vals.reshape(m0.extents)
    out = np.array(vals)
    for ax in range(out.ndim):
        edge = np.take(out, [0, out.shape[ax] - 1], axis=ax)
        if np.any(edge != 0):
            raise DomainOverflowError("transported density reached the outermost grid layer")
    return m0.with_values(out)


def interval_integral(m: GridDensity, a: float, b: float) -> float:
    """Exact integral over ``[a, b]`` of the piecewise-linear interpolant (1D).

    Raises ``DomainOverflowError`` if the interval leaves the grid.
    """
    if m.dim != 1:
        raise ValueError("interval integrals are one-dimensional")
    if b < a:
        return -interval_integral(m, b, a)
    lo, hi = m.bounds()
    if a < lo[0] - 1e-12 or b > hi[0] + 1e-12:
        raise DomainOverflowError(f"window [{a}, {b}] leaves the grid [{lo[0]}, {hi[0]}]")
    return _antiderivative(m, b) - _antiderivative(m, a)


def _antiderivative(m: GridDensity, x: float) -> float:
    h = m.spacing[0]
    v = np.concatenate(([0.0], m.values, [0.0]))
    # node j sits at origin + (j - 0.5) h
    u = (x - m.origin[0]) / h + 0.5
    j = int(math.floor(u))
    j = min(max(j, 0), len(v) - 1)
    theta = u - j
    full = h * (0.5 * v[0] + float(np.sum(v[1:j])) + 0.5 * v[j]) if j > 0 else 0.0
    if j + 1 < len(v):
        part = h * (v[j] * theta + 0.5 * (v[j + 1] - v[j]) * theta * theta)
    else:
        part = 0.0
    return full + part


def save_density(m: GridDensity, csv_path, header_path=None) -> None:
    """Write one CSV row per cell (center coordinates, value) plus a JSON header."""
    csv_path = Path(csv_path)
    header_path = Path(header_path) if header_path else csv_path.with_suffix(".json")
    header = {
        "dim": m.dim,
        "origin": list(m.origin),
        "spacing": list(m.spacing),
        "extents": list(m.extents),
    }
    header_path.write_text(json.dumps(header, indent=2) + "\n")
    names = [f"x{i}" for i in range(m.dim)] + ["value"]
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for c, v in zip(m.centers(), m.values.ravel()):
            w.writerow([repr(float(ci)) for ci in c] + [repr(float(v))])


def load_density(csv_path, header_path=None) -> GridDensity:
    csv_path = Path(csv_path)
    header_path = Path(header_path) if header_path else csv_path.with_suffix(".json")
    header = json.loads(header_path.read_text())
    with csv_path.open(newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    vals = np.array([float(r[-1]) for r in rows]).reshape(header["extents"])
    return GridDensity(tuple(header["origin"]), tuple(header["spacing"]), vals)
