"""Hamiltonian, HJI residuals of candidate values, and the closed-form examples.

Two worked examples are supported in one dimension:

* window game: the player is charged the mass inside ``[x - r, x + r]`` at the
  final time; the candidate value integrates ``m`` over a widened window
  ``[x - r - h_l(t), x + r + h_r(t)]`` whose extensions solve a switching ODE;
* mean-square game: the player is charged the squared distance to the mass
  mean; the candidate value is that squared distance itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .density import DomainOverflowError, GridDensity, _gradient, first_moment, interval_integral, mass, sample_density
from .fields import ClampRamp, FieldSpec, field_eval
from .game import CostSpec, PlayerDynamics, ZeroRunning, time_grid

__all__ = [
    "HSchedule",
    "WindowValue",
    "MonotoneWindowValue",
    "MeanSquareValue",
    "WindowIndicator",
    "ResidualReport",
    "HamiltonianResult",
    "coupling_term",
    "hamiltonian",
    "hji_residual",
    "solve_h_ode",
    "optimal_mass_field",
    "value_window",
    "value_mean_square",
]


# -- window extensions -----------------------------------------------------


@dataclass(frozen=True)
class HSchedule:
    """Window extensions at uniform knots, with the slope chosen at each knot.

    ``dh_l[k], dh_r[k]`` is the switching choice made from the density
    difference at knot ``k``; it drives the step from ``t_k`` down to
    ``t_{k-1}``.
    """

    times: tuple
    h_l: tuple
    h_r: tuple
    dh_l: tuple
    dh_r: tuple
    c: float

    @property
    def T(self) -> float:
        return self.times[-1]

    def at(self, t: float):
        """``(h_l, h_r, h_l', h_r')`` at ``t``; linear between knots."""
        ts = self.times
        if not ts[0] - 1e-12 <= t <= ts[-1] + 1e-12:
            raise ValueError(f"t = {t} outside the schedule [{ts[0]}, {ts[-1]}]")
        k = int(np.searchsorted(ts, t, side="left"))
        k = min(max(k, 0), len(ts) - 1)
        if k < len(ts) and abs(ts[k] - t) <= 1e-12 * max(1.0, abs(t)):
            return self.h_l[k], self.h_r[k], self.dh_l[k], self.dh_r[k]
        w = (t - ts[k - 1]) / (ts[k] - ts[k - 1])
        hl = (1 - w) * self.h_l[k - 1] + w * self.h_l[k]
        hr = (1 - w) * self.h_r[k - 1] + w * self.h_r[k]
        return hl, hr, self.dh_l[k], self.dh_r[k]

    def to_dict(self) -> dict:
        return {
            "times": list(self.times),
            "h_l": list(self.h_l),
            "h_r": list(self.h_r),
            "dh_l": list(self.dh_l),
            "dh_r": list(self.dh_r),
            "c": self.c,
        }


def _switch(delta: float, c: float):
    # delta < 0 or a tie: the right edge grows; delta > 0: the left edge grows
    return (-2.0 * c, 0.0) if delta > 0 else (0.0, -2.0 * c)


def solve_h_ode(m: GridDensity, x: float, r: float, c: float, T: float, steps: int) -> HSchedule:
    """Integrate the switching ODE for the window extensions backward from ``T``.

    At each knot the sign of ``m(x + r + h_r) - m(x - r - h_l)`` picks which
    edge moves. The totals are kept in step counts so the affine constraint
    ``h_l + h_r = 2c(T - t_k)`` holds to rounding, and exactly when only one
    edge ever moves.
    """
    if m.dim != 1:
        raise ValueError("window extensions are one-dimensional")
    if steps < 0 or T < 0 or c < 0 or r < 0:
        raise ValueError("need steps, T, c, r >= 0")
    if steps == 0 or T == 0:
        return HSchedule((float(T),), (0.0,), (0.0,), (0.0,), (-2.0 * c,), c)
    ts = time_grid(T, steps)
    dt = T / steps
    lo, hi = m.bounds()
    n_l = n_r = 0
    h_l = [0.0] * (steps + 1)
    h_r = [0.0] * (steps + 1)
    dh_l = [0.0] * (steps + 1)
    dh_r = [0.0] * (steps + 1)
    for k in range(steps, -1, -1):
        if k < steps:
            n_l += dh_l[k + 1] != 0.0
            n_r += dh_r[k + 1] != 0.0
            span = 2.0 * c * (T - ts[k])
            if n_l == 0:
                h_l[k], h_r[k] = 0.0, span
            elif n_r == 0:
                h_l[k], h_r[k] = span, 0.0
            else:
                h_l[k] = 2.0 * c * n_l * dt
                h_r[k] = span - h_l[k]
        left, right = x - r - h_l[k], x + r + h_r[k]
        if left < lo[0] or right > hi[0]:
            raise DomainOverflowError(f"window [{left}, {right}] leaves the grid at t = {ts[k]}")
        delta = sample_density(m, right) - sample_density(m, left)
        dh_l[k], dh_r[k] = _switch(delta, c)
    return HSchedule(tuple(ts), tuple(h_l), tuple(h_r), tuple(dh_l), tuple(dh_r), c)


def optimal_mass_field(x: float, r: float, h_l: float, h_r: float, c: float, smooth: float = 0.0) -> ClampRamp:
    """Ramp from ``+c`` to ``-c`` across the widened window; sweeps mass inward."""
    return ClampRamp(x - r - h_l, x + r + h_r, c, smooth)


# -- candidate values ------------------------------------------------------


@dataclass(frozen=True)
class WindowIndicator:
    """Characteristic function of ``[lo, hi]`` as a density-derivative."""

    lo: float
    hi: float

    def on_grid(self, m: GridDensity) -> np.ndarray:
        """Fraction of each cell covered by the window."""
        h = m.spacing[0]
        left = m.axes()[0] - 0.5 * h
        overlap = np.clip(np.minimum(left + h, self.hi) - np.maximum(left, self.lo), 0.0, h)
        return overlap / h


@dataclass(frozen=True)
class WindowValue:
    """``V(x, m, t) = int_{x - r - h_l(t)}^{x + r + h_r(t)} m``."""

    r: float
    h_schedule: HSchedule

    @property
    def c(self) -> float:
        return self.h_schedule.c

    def window(self, x, t):
        hl, hr, _, _ = self.h_schedule.at(t)
        return x - self.r - hl, x + self.r + hr

    def rates(self, t):
        _, _, dl, dr = self.h_schedule.at(t)
        return dl, dr


@dataclass(frozen=True)
class MonotoneWindowValue:
    """Window value with ``h_l = 0`` and ``h_r = 2c(T - t)``."""

    r: float
    c: float
    T: float

    def window(self, x, t):
        return x - self.r, x + self.r + 2.0 * self.c * (self.T - t)

    def rates(self, t):
        return 0.0, -2.0 * self.c


@dataclass(frozen=True)
class MeanSquareValue:
    """``V(x, m, t) = (x - int xi m)^2``."""


CandidateValue = Union[WindowValue, MonotoneWindowValue, MeanSquareValue]


def value_window(V, x: float, m: GridDensity, t: float) -> float:
    lo, hi = V.window(x, t)
    return interval_integral(m, lo, hi)


def value_mean_square(x, m: GridDensity) -> float:
    diff = np.atleast_1d(np.asarray(x, dtype=float)) - np.atleast_1d(first_moment(m))
    return float(diff @ diff)


def _derivatives(V, x, m, t):
    """``(V_t, V_x, D_mV)`` with ``D_mV`` a WindowIndicator or a grid array."""
    if isinstance(V, MeanSquareValue):
        z = 2.0 * (np.atleast_1d(np.asarray(x, dtype=float)) - np.atleast_1d(first_moment(m)))
        q = -(m.centers() @ z).reshape(m.extents)
        return 0.0, z, q
    if m.dim != 1:
        raise ValueError("window values are one-dimensional")
    lo, hi = V.window(x, t)
    dl, dr = V.rates(t)
    m_lo, m_hi = sample_density(m, lo), sample_density(m, hi)
    v_t = m_hi * dr + m_lo * dl
    v_x = np.array([m_hi - m_lo])
    return v_t, v_x, WindowIndicator(lo, hi)


# -- Hamiltonian -----------------------------------------------------------


def coupling_term(q, b: FieldSpec, m: GridDensity, mode: str = "quadrature") -> float:
    """L2 pairing of ``q`` with ``div(b m)``.

    ``quadrature`` sums ``q * (b . grad m + m div b)`` over cells with central
    differences; ``boundary`` (window indicators only) evaluates the exact
    flux difference ``b(hi) m(hi) - b(lo) m(lo)``.
    """
    if b.dim != m.dim:
        raise ValueError("field and density dimensions differ")
    if mode == "boundary":
        if not isinstance(q, WindowIndicator):
            raise ValueError("boundary mode needs a window indicator")
        flux = lambda p: float(field_eval(b, p)) * sample_density(m, p)
        return flux(q.hi) - flux(q.lo)
    if mode != "quadrature":
        raise ValueError(f"unknown coupling mode {mode!r}")
    qv = q.on_grid(m) if isinstance(q, WindowIndicator) else np.asarray(q, dtype=float)
    if qv.shape != m.extents:
        raise ValueError("q does not live on the density grid")
    centers = m.centers()
    vel, div = b.eval_div(centers)
    grads = _gradient(m.values, m.spacing)
    vals = m.values.ravel()
    flux_div = div * vals
    for ax, g in enumerate(grads):
        flux_div = flux_div + vel[:, ax] * g.ravel()
    return m.cell_volume * float(qv.ravel() @ flux_div)


@dataclass(frozen=True)
class HamiltonianResult:
    value: float
    a_index: int
    b_index: int


def hamiltonian(
    x,
    m: GridDensity,
    t: float,
    p,
    q,
    dictA,
    dictB: Sequence[FieldSpec],
    cost: CostSpec | None = None,
    dynamics: PlayerDynamics | None = None,
    coupling: str = "quadrature",
) -> HamiltonianResult:
    """``min_b max_a { -f(x, a) . p + <q, div(b m)> - l(x, m, t, a, b) }``.

    Ties keep the first dictionary index.
    """
    running = cost.running if cost is not None else ZeroRunning()
    controls = [np.atleast_1d(np.asarray(a, dtype=float)) for a in dictA]
    if not controls or not dictB:
        raise ValueError("dictionaries must be non-empty")
    p = np.atleast_1d(np.asarray(p, dtype=float))
    y = np.atleast_1d(np.asarray(x, dtype=float))
    best = (math.inf, -1, -1)
    for j, b in enumerate(dictB):
        pair = coupling_term(q, b, m, coupling)
        inner = (-math.inf, -1)
        for i, a in enumerate(controls):
            f = dynamics.f(y, a) if dynamics is not None else a
            a_arg = float(a[0]) if len(a) == 1 else a
            val = -float(f @ p) + pair - running(x, m, t, a_arg, b)
            if val > inner[0]:
                inner = (val, i)
        if inner[0] < best[0]:
            best = (inner[0], inner[1], j)
    return HamiltonianResult(*best)


# -- residuals -------------------------------------------------------------


@dataclass(frozen=True)
class ResidualReport:
    residual: float
    breakdown: dict
    state: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"residual": self.residual, "breakdown": dict(self.breakdown), "state": dict(self.state)}


def hji_residual(
    V: CandidateValue,
    x,
    m: GridDensity,
    t: float,
    mode: str = "analytic",
    c: float | None = None,
    dictA=None,
    dictB: Sequence[FieldSpec] | None = None,
    coupling: str = "boundary",
) -> ResidualReport:
    """``-V_t + sup_a {-a V_x} + inf_b <D_mV, div(b m)>`` for a candidate value.

    ``analytic`` uses the closed-form sup over the control box and inf over
    fields bounded by ``c``; ``dictionary`` takes max/min over ``dictA`` and
    ``dictB`` with the chosen coupling mode.
    """
    if c is None:
        c = getattr(V, "c", None)
    v_t, v_x, q = _derivatives(V, x, m, t)
    if mode == "analytic":
        if c is None:
            raise ValueError("analytic mode needs the control radius c")
        player = c * float(np.sum(np.abs(v_x)))
        if isinstance(q, WindowIndicator):
            mass_term = -c * (sample_density(m, q.hi) + sample_density(m, q.lo))
        else:
            mass_term = -c * mass(m) * float(np.sum(np.abs(v_x)))
    elif mode == "dictionary":
        if dictA is None or dictB is None:
            raise ValueError("dictionary mode needs dictA and dictB")
        player = max(-float(np.atleast_1d(np.asarray(a, dtype=float)) @ v_x) for a in dictA)
        # grid-function derivatives only pair by quadrature
        how = coupling if isinstance(q, WindowIndicator) else "quadrature"
        mass_term = min(coupling_term(q, b, m, how) for b in dictB)
    else:
        raise ValueError(f"unknown residual mode {mode!r}")
    breakdown = {"time": -v_t, "player": player, "mass": mass_term}
    residual = breakdown["time"] + breakdown["player"] + breakdown["mass"]
    x_out = float(np.asarray(x).reshape(-1)[0]) if np.size(x) == 1 else list(np.asarray(x, dtype=float))
    return ResidualReport(residual, breakdown, {"x": x_out, "t": float(t), "mode": mode})
