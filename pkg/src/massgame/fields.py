"""Admissible vector fields for the mass, the player's control box, and time schedules.

Three parametric field families are supported:

* :class:`Constant` -- a constant velocity inside a box, blended to zero over a
  margin with a quintic smoothstep, so the field has compact support.
* :class:`LinearWindow` -- ``b(x) = lam * x`` inside a box, blended the same way.
* :class:`ClampRamp` -- the one-dimensional profile equal to ``+c`` on the left,
  ``-c`` on the right and a (possibly corner-rounded) linear ramp in between.

Fields are autonomous. Time dependence lives in :class:`Schedule`.
"""

from __future__ import annotations

import bisect
import functools
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

__all__ = [
    "Constant",
    "LinearWindow",
    "ClampRamp",
    "FieldSpec",
    "Schedule",
    "ControlSetA",
    "BoundsReport",
    "Admissibility",
    "field_eval",
    "field_div",
    "field_bounds",
    "sampled_bounds",
    "check_admissible",
    "ConfigurationError",
    "ScheduleGapError",
]


class ConfigurationError(ValueError):
    """Invalid game or integrator configuration."""


class ScheduleGapError(ConfigurationError):
    """A schedule does not cover the requested time interval."""


# quintic smoothstep S(u) = 10u^3 - 15u^4 + 6u^5 and its derivatives
_SMAX1 = 15.0 / 8.0  # max S'
_SMAX2 = 10.0 / math.sqrt(3.0)  # max |S''|
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _smooth(u):
    return u * u * u * (10.0 + u * (-15.0 + 6.0 * u))


def _dsmooth(u):
    return 30.0 * u * u * (1.0 - u) ** 2


def _ddsmooth(u):
    return 60.0 * u * (1.0 - u) * (1.0 - 2.0 * u)


def _cutoff(x, lo, hi, w, second=False):
    """1D cutoff: 1 on [lo, hi], 0 outside [lo - w, hi + w].

    Returns (s, s') or (s, s', s''). Only one of the two blend ramps can be
    active at a point, so the nearer edge decides.
    """
    if x.size and lo <= x.min() and x.max() <= hi:
        # every point on the plateau
        one, zero = np.ones_like(x), np.zeros_like(x)
        return (one, zero) if not second else (one, zero, zero.copy())
    ul = (x - (lo - w)) / w
    ur = ((hi + w) - x) / w
    left = ul < ur
    u = np.clip(np.where(left, ul, ur), 0.0, 1.0)
    sgn = np.where(left, 1.0 / w, -1.0 / w)
    s = _smooth(u)
    ds = sgn * _dsmooth(u)
    if not second:
        return s, ds
    return s, ds, _ddsmooth(u) / (w * w)


def _cutoff_integrals(lo, hi, w):
    """Exact integrals of the 1D cutoff s over the real line.

    Returns dict with P0 = int s^2, P2 = int x^2 s^2, Q0 = int s'^2,
    Q2 = int x^2 s'^2, R1 = int x s s'. The integrands are piecewise
    polynomials of degree <= 12, so 8-point Gauss-Legendre per piece is exact.
    """
    out = dict(P0=0.0, P2=0.0, Q0=0.0, Q2=0.0, R1=0.0)
    for a, b in ((lo - w, lo), (lo, hi), (hi, hi + w)):
        if b <= a:
            continue
        x = 0.5 * (b - a) * _GL_NODES + 0.5 * (a + b)
        wt = 0.5 * (b - a) * _GL_WEIGHTS
        s, ds = _cutoff(x, lo, hi, w)
        out["P0"] += float(np.sum(wt * s * s))
        out["P2"] += float(np.sum(wt * x * x * s * s))
        out["Q0"] += float(np.sum(wt * ds * ds))
        out["Q2"] += float(np.sum(wt * x * x * ds * ds))
        out["R1"] += float(np.sum(wt * x * s * ds))
    return out


def _as_box(window, dim):
    box = tuple((float(lo), float(hi)) for lo, hi in window)
    if len(box) != dim:
        raise ConfigurationError(f"window has {len(box)} axes, expected {dim}")
    for lo, hi in box:
        if not hi > lo:
            raise ConfigurationError(f"window axis [{lo}, {hi}] is empty")
    return box


class _BoxBlended:
    """Shared machinery for the compactly supported families."""

    window: tuple
    margin: float

    @property
    def dim(self) -> int:
        return len(self.window)

    def _cutoffs(self, x):
        return [_cutoff(x[:, i], lo, hi, self.margin) for i, (lo, hi) in enumerate(self.window)]

    def support(self):
        """Closed box outside which the field vanishes."""
        w = self.margin
        return tuple((lo - w, hi + w) for lo, hi in self.window)


@dataclass(frozen=True)
class Constant(_BoxBlended):
    """Constant velocity ``v`` on ``window``, smoothly blended to zero over ``margin``."""

    v: tuple
    window: tuple
    margin: float = 1.0

    def __post_init__(self):
        v = tuple(float(c) for c in np.atleast_1d(self.v))
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "window", _as_box(self.window, len(v)))
        object.__setattr__(self, "margin", float(self.margin))
        if not self.margin > 0:
            raise ConfigurationError("blend margin must be positive")

    def eval_div(self, x):
        if self.dim == 1:
            (lo, hi), = self.window
            s, ds = _cutoff(x[:, 0], lo, hi, self.margin)
            v = self.v[0]
            return (v * s)[:, None], v * ds
        cuts = self._cutoffs(x)
        chi = np.prod([s for s, _ in cuts], axis=0)
        v = np.asarray(self.v)
        b = chi[:, None] * v[None, :]
        div = np.zeros(len(x))
        for i, (_, ds) in enumerate(cuts):
            if v[i] != 0.0:
                div = div + v[i] * ds * np.prod([s for j, (s, _) in enumerate(cuts) if j != i], axis=0)
        return b, div

    def _bounds(self):
        v = np.abs(np.asarray(self.v))
        d, w = self.dim, self.margin
        sup_b = float(np.linalg.norm(v))
        sup_div = float(np.sum(v)) * _SMAX1 / w
        # |d_k div| <= |v_k| S''/w^2 + sum_{i != k} |v_i| (S'/w)^2
        grad = [v[k] * _SMAX2 / w**2 + (np.sum(v) - v[k]) * (_SMAX1 / w) ** 2 for k in range(d)]
        lip_div = float(np.linalg.norm(grad))
        ints = [_cutoff_integrals(lo, hi, w) for lo, hi in self.window]
        p0 = np.array([I["P0"] for I in ints])
        q0 = np.array([I["Q0"] for I in ints])
        l2 = float(np.sum(v**2) * np.prod(p0))
        grad2 = 0.0
        for k in range(d):
            grad2 += float(np.sum(v**2)) * q0[k] * float(np.prod(np.delete(p0, k)))
        return sup_b, sup_div, lip_div, math.sqrt(l2 + grad2)


@dataclass(frozen=True)
class LinearWindow(_BoxBlended):
    """``b(x) = lam * x`` on ``window``, smoothly blended to zero over ``margin``."""

    lam: float
    window: tuple
    margin: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "window", _as_box(self.window, len(tuple(self.window))))
        object.__setattr__(self, "margin", float(self.margin))
        if not self.margin > 0:
            raise ConfigurationError("blend margin must be positive")

    def eval_div(self, x):
        if self.dim == 1:
            (lo, hi), = self.window
            s, ds = _cutoff(x[:, 0], lo, hi, self.margin)
            xx = x[:, 0]
            return (self.lam * xx * s)[:, None], self.lam * (s + xx * ds)
        cuts = self._cutoffs(x)
        chi = np.prod([s for s, _ in cuts], axis=0)
        b = self.lam * x * chi[:, None]
        x_dot_grad = np.zeros(len(x))
        for i, (_, ds) in enumerate(cuts):
            rest = np.prod([s for j, (s, _) in enumerate(cuts) if j != i], axis=0)
            x_dot_grad = x_dot_grad + x[:, i] * ds * rest
        div = self.lam * (self.dim * chi + x_dot_grad)
        return b, div

    def _bounds(self):
        lam, d, w = abs(self.lam), self.dim, self.margin
        X = np.array([max(abs(lo - w), abs(hi + w)) for lo, hi in self.window])
        sup_b = lam * float(np.linalg.norm(X))
        sup_div = lam * (d + float(np.sum(X)) * _SMAX1 / w)
        grad = []
        for k in range(d):
            others = float(np.sum(X) - X[k])
            grad.append(lam * ((d + 1) * _SMAX1 / w + X[k] * _SMAX2 / w**2 + others * (_SMAX1 / w) ** 2))
        lip_div = float(np.linalg.norm(grad))
        ints = [_cutoff_integrals(lo, hi, w) for lo, hi in self.window]
        P0 = np.array([I["P0"] for I in ints])
        P2 = np.array([I["P2"] for I in ints])
        Q0 = np.array([I["Q0"] for I in ints])
        l2 = 0.0
        grad2 = 0.0
        for i in range(d):
            rest = float(np.prod(np.delete(P0, i)))
            l2 += P2[i] * rest
            I = ints[i]
            # d_i b_i = lam (s_i + x_i s_i') prod_{j != i} s_j
            grad2 += (I["P0"] + 2.0 * I["R1"] + I["Q2"]) * rest
            for k in range(d):
                if k != i:
                    grad2 += P2[i] * Q0[k] * float(np.prod(np.delete(P0, [i, k])))
        h1 = lam * math.sqrt(l2 + grad2)
        return sup_b, sup_div, lip_div, h1


@dataclass(frozen=True)
class ClampRamp:
    """One-dimensional ramp: ``+c`` for ``x <= L``, ``-c`` for ``x >= R``.

    With ``smooth == 0`` the profile is linear on ``[L, R]``. With ``smooth > 0``
    the two corners are rounded over a width ``smooth`` each (the slope ramps
    linearly to its plateau), which makes the divergence Lipschitz.
    """

    L: float
    R: float
    c: float
    smooth: float = 0.0

    dim = 1

    def __post_init__(self):
        for name in ("L", "R", "c", "smooth"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not self.R > self.L:
            raise ConfigurationError("ClampRamp needs R > L")
        if self.c < 0 or self.smooth < 0:
            raise ConfigurationError("ClampRamp needs c >= 0 and smooth >= 0")
        if self.smooth > 0.5 * (self.R - self.L):
            raise ConfigurationError("ClampRamp smoothing width exceeds half the ramp")

    @property
    def slope(self) -> float:
        """Plateau slope of the ramp (negative for c > 0)."""
        return -2.0 * self.c / ((self.R - self.L) - self.smooth)

    def eval_div(self, x):
        x = x[:, 0]
        L, R, c, sig, k = self.L, self.R, self.c, self.smooth, self.slope
        if sig == 0.0:
            inside = (x >= L) & (x <= R)
            b = np.where(x <= L, c, np.where(x >= R, -c, c + k * (x - L)))
            div = np.where(inside, k, 0.0)
            return b[:, None], div
        u = np.clip(x, L, R)
        left = u < L + sig
        right = u > R - sig
        integ = np.where(
            left,
            (u - L) ** 2 / (2.0 * sig),
            np.where(right, (R - L - sig) - (R - u) ** 2 / (2.0 * sig), sig / 2.0 + (u - L - sig)),
        )
        b = c + k * integ
        rho = np.where(left, (u - L) / sig, np.where(right, (R - u) / sig, 1.0))
        div = np.where((x > L) & (x < R), k * rho, 0.0)
        return b[:, None], div

    def _bounds(self):
        k = abs(self.slope)
        lip = k / self.smooth if self.smooth > 0 else (math.inf if k > 0 else 0.0)
        # the constant tails are not square integrable
        h1 = math.inf if self.c > 0 else 0.0
        return self.c, k, lip, h1


FieldSpec = Union[Constant, LinearWindow, ClampRamp]


def _points(x, dim):
    """Coerce x into an (n, dim) array of points."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        if dim != 1:
            raise ValueError("scalar position given for a multi-dimensional field")
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        if dim == 1:
            return arr.reshape(-1, 1)
        if arr.shape[0] != dim:
            raise ValueError(f"position has {arr.shape[0]} coordinates, expected {dim}")
        return arr.reshape(1, dim)
    return arr


def field_eval(field: FieldSpec, x, t: float = 0.0):
    """Evaluate ``field`` at ``x``. ``t`` is accepted but ignored (fields are autonomous).

    Scalar input returns a float (1D); an array of 1D points returns an array of
    the same shape; ``(n, d)`` input returns ``(n, d)``.
    """
    arr = np.asarray(x, dtype=float)
    pts = _points(arr, field.dim)
    b, _ = field.eval_div(pts)
    if arr.ndim == 0:
        return float(b[0, 0])
    if arr.ndim == 1:
        return b[:, 0] if field.dim == 1 else b[0]
    return b


def field_div(field: FieldSpec, x, t: float = 0.0):
    """Exact spatial divergence of ``field`` at ``x``."""
    arr = np.asarray(x, dtype=float)
    pts = _points(arr, field.dim)
    _, div = field.eval_div(pts)
    if arr.ndim == 0 or (arr.ndim == 1 and field.dim > 1):
        return float(div[0])
    return div


@dataclass(frozen=True)
class BoundsReport:
    sup_b: float
    sup_div: float
    lip_div: float
    h1_norm: float

    @property
    def div_w1inf(self) -> float:
        return self.sup_div + self.lip_div


def _sample_box(field, pad=1.0):
    if isinstance(field, ClampRamp):
        return ((field.L - pad, field.R + pad),)
    return field.support()


def sampled_bounds(field: FieldSpec, points_per_axis: int = 10_001) -> BoundsReport:
    """Brute-force estimates of the bounds by dense sampling.

    In 1D the Lipschitz constant of the divergence comes from difference
    quotients, and the H1 norm from trapezoid quadrature. For d >= 2 the grid is
    tensor-product and capped at ``points_per_axis ** d <= 4e6``; the H1 entry is
    left as NaN there.
    """
    box = _sample_box(field)
    d = field.dim
    n = points_per_axis if d == 1 else min(points_per_axis, int(round(4e6 ** (1.0 / d))))
    axes = [np.linspace(lo, hi, n) for lo, hi in box]
    pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
    b, div = field.eval_div(pts)
    sup_b = float(np.max(np.linalg.norm(b, axis=1)))
    sup_div = float(np.max(np.abs(div)))
    if d == 1:
        x = axes[0]
        lip = float(np.max(np.abs(np.diff(div)) / np.diff(x)))
        db = np.gradient(b[:, 0], x)
        h1 = math.sqrt(float(np.trapezoid(b[:, 0] ** 2 + db**2, x)))
        if isinstance(field, ClampRamp) and field.c > 0:
            h1 = math.inf
    else:
        grid = div.reshape([n] * d)
        steps = [ax[1] - ax[0] for ax in axes]
        lip = 0.0
        for k in range(d):
            lip = max(lip, float(np.max(np.abs(np.diff(grid, axis=k))) / steps[k]))
        h1 = math.nan
    return BoundsReport(sup_b, sup_div, lip, h1)


@functools.lru_cache(maxsize=256)
def field_bounds(field: FieldSpec, cross_check: bool = True) -> BoundsReport:
    """Analytic upper bounds on |b|, |div b|, Lip(div b) and ||b||_H1.

    With ``cross_check`` the analytic numbers are compared against
    :func:`sampled_bounds`; a sampled value above its bound is a bug and raises.
    """
    rep = BoundsReport(*field._bounds())
    if cross_check:
        smp = sampled_bounds(field)
        for name in ("sup_b", "sup_div"):
            a, s = getattr(rep, name), getattr(smp, name)
            if s > a * (1 + 1e-9) + 1e-12:
                raise RuntimeError(f"{name} bound {a} violated by sample {s} for {field}")
        # sampled Lipschitz quotients converge from below; allow rounding only
        if smp.lip_div > rep.lip_div * (1 + 1e-6) + 1e-9:
            raise RuntimeError(f"lip_div bound {rep.lip_div} violated by sample {smp.lip_div}")
    return rep


@dataclass(frozen=True)
class Admissibility:
    """Verdict of :func:`check_admissible`: ``"pass"``, ``"violation"`` or ``"limit"``."""

    verdict: str
    violations: tuple = ()

    @property
    def ok(self) -> bool:
        return self.verdict in ("pass", "limit")


def check_admissible(field: FieldSpec, M: float, c1: float | None = None) -> Admissibility:
    """Check membership in the bounded field ball of radius ``M``.

    A ``ClampRamp`` with ``smooth == 0`` is reported as ``"limit"``: it is not in
    the ball for any ``M`` but is the limit of admissible fields. When ``c1`` is
    given, a ramp whose slope exceeds ``c1`` is a violation regardless.
    """
    if not M > 0:
        raise ValueError("M must be positive")
    rep = field_bounds(field)
    if isinstance(field, ClampRamp):
        if c1 is not None and abs(field.slope) > c1 * (1 + 1e-12):
            return Admissibility(
                "violation",
                (f"ramp slope {abs(field.slope):.6g} exceeds c1 = {c1:g} (needs R - L >= 2c/c1)",),
            )
        if field.smooth == 0.0 and field.c > 0:
            return Admissibility("limit")
    bad = []
    if rep.sup_b > M:
        bad.append("||b||_Linf <= M")
    if rep.h1_norm > M:
        bad.append("||b||_H1 <= M")
    if rep.div_w1inf > M:
        bad.append("||div b||_W1inf <= M")
    return Admissibility("violation", tuple(bad)) if bad else Admissibility("pass")


@dataclass(frozen=True)
class Schedule:
    """Piecewise-constant, right-continuous sequence of fields.

    ``pieces[i] = (t_i, field_i)`` means ``field_i`` is active on
    ``[t_i, t_{i+1})``; the last piece extends to ``end``.
    """

    pieces: tuple
    end: float = math.inf

    def __post_init__(self):
        pieces = tuple((float(t), f) for t, f in self.pieces)
        if not pieces:
            raise ConfigurationError("schedule is empty")
        times = [t for t, _ in pieces]
        if times[0] < 0:
            raise ConfigurationError("schedule starts before time 0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigurationError("schedule times must be strictly increasing")
        if times[-1] > self.end:
            raise ConfigurationError("schedule has a piece starting after its end")
        dims = {f.dim for _, f in pieces}
        if len(dims) != 1:
            raise ConfigurationError("schedule mixes field dimensions")
        object.__setattr__(self, "pieces", pieces)

    @classmethod
    def constant(cls, field: FieldSpec, t0: float = 0.0, end: float = math.inf) -> "Schedule":
        return cls(((t0, field),), end)

    @property
    def dim(self) -> int:
        return self.pieces[0][1].dim

    @property
    def times(self):
        return [t for t, _ in self.pieces]

    def field_at(self, t: float) -> FieldSpec:
        i = bisect.bisect_right(self.times, t) - 1
        if i < 0 or t > self.end:
            raise ScheduleGapError(f"no field active at t = {t}")
        return self.pieces[i][1]

    def segments(self, t: float, s: float):
        """Split ``[t, s]`` into ``(a, b, field)`` segments of constant field."""
        if t < self.pieces[0][0] or s > self.end:
            raise ScheduleGapError(f"schedule does not cover [{t}, {s}]")
        out = []
        times = self.times
        i = bisect.bisect_right(times, t) - 1
        a = t
        while a < s:
            b = times[i + 1] if i + 1 < len(times) else math.inf
            b = min(b, s)
            out.append((a, b, self.pieces[i][1]))
            a = b
            i += 1
        return out

    def fields_on(self, t: float, s: float):
        return [f for _, _, f in self.segments(t, s)] or [self.field_at(t)]


@dataclass(frozen=True)
class ControlSetA:
    """Player control box ``[-c, c]^d`` with a finite dictionary of controls."""

    c: float
    dictionary: tuple = field(default_factory=tuple)

    def __post_init__(self):
        entries = tuple(tuple(float(v) for v in np.atleast_1d(a)) for a in self.dictionary)
        if not entries:
            raise ConfigurationError("control dictionary is empty")
        for a in entries:
            if any(abs(v) > self.c * (1 + 1e-12) for v in a):
                raise ConfigurationError(f"control {a} lies outside the box of radius {self.c}")
        object.__setattr__(self, "dictionary", entries)
        object.__setattr__(self, "c", float(self.c))

    def __len__(self):
        return len(self.dictionary)

    def __iter__(self):
        return iter(np.asarray(a) for a in self.dictionary)


def sup_speed(fields: Sequence[FieldSpec]) -> float:
    """Largest ``sup_b`` over ``fields``."""
    return max((field_bounds(f).sup_b for f in fields), default=0.0)
