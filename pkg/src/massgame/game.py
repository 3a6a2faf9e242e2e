"""Player dynamics, cost functional, rollouts and the discrete lower value.

Discrete information pattern: at every step the mass announces its field
``b_k`` first and the player answers with ``a_k``. The lower value recursion is

    V_N(y, m) = psi(y, m)
    V_k(y, m) = max_b min_a [ dt * l(y, m, t_k, a, b) + V_{k+1}(y', m') ]

with ``y' = step_player(y, a)`` and ``m' = transport(m, b)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .density import GridDensity, first_moment, interval_integral, transport_density
from .fields import ControlSetA, FieldSpec, Schedule, field_bounds
from .flow import IntegratorConfig

__all__ = [
    "PlayerDynamics",
    "ZeroRunning",
    "WindowOccupancy",
    "WindowMass",
    "SquaredMeanDistance",
    "CostSpec",
    "Scenario",
    "Trajectory",
    "BudgetError",
    "LowerValueResult",
    "step_player",
    "evaluate_cost",
    "rollout",
    "constant_strategy",
    "time_grid",
    "discrete_lower_value",
    "solve_lower_value",
    "dpp_split_check",
]


class BudgetError(RuntimeError):
    """The exhaustive recursion would exceed its node budget."""


@dataclass(frozen=True)
class PlayerDynamics:
    """``y' = g(y) + a`` with ``a`` in the box ``[-c, c]^d`` and optional drift ``g``."""

    c: float
    drift: Optional[FieldSpec] = None
    dim: int = 1

    def f(self, y, a):
        y = np.asarray(y, dtype=float).reshape(-1)
        a = np.asarray(a, dtype=float).reshape(-1)
        if self.drift is None:
            return a.copy() if len(a) == len(y) else np.broadcast_to(a, y.shape).copy()
        g, _ = self.drift.eval_div(y.reshape(1, -1))
        return g[0] + a

    @property
    def speed_bound(self) -> float:
        g = field_bounds(self.drift).sup_b if self.drift is not None else 0.0
        return g + self.c * math.sqrt(self.dim)


def step_player(y, a, dyn: PlayerDynamics, dt: float):
    """One RK4 step of ``y' = f(y, a)`` with ``a`` frozen over ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    a_arr = np.atleast_1d(np.asarray(a, dtype=float))
    if np.any(np.abs(a_arr) > dyn.c * (1 + 1e-12)):
        raise ValueError(f"control {a} outside [-{dyn.c}, {dyn.c}]")
    scalar = np.ndim(y) == 0
    y0 = np.atleast_1d(np.asarray(y, dtype=float))
    if dyn.drift is None:
        out = y0 + dt * a_arr
    else:
        k1 = dyn.f(y0, a_arr)
        k2 = dyn.f(y0 + 0.5 * dt * k1, a_arr)
        k3 = dyn.f(y0 + 0.5 * dt * k2, a_arr)
        k4 = dyn.f(y0 + dt * k3, a_arr)
        out = y0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return float(out[0]) if scalar else out


# -- costs -----------------------------------------------------------------


@dataclass(frozen=True)
class ZeroRunning:
    def __call__(self, x, m, t, a, b) -> float:
        return 0.0


@dataclass(frozen=True)
class WindowOccupancy:
    """Running cost: mass inside ``[x - r, x + r]`` (1D)."""

    r: float

    def __call__(self, x, m, t, a, b) -> float:
        x = float(np.asarray(x).reshape(-1)[0])
        return interval_integral(m, x - self.r, x + self.r)


@dataclass(frozen=True)
class WindowMass:
    """Terminal cost: mass inside ``[x - r, x + r]`` (1D)."""

    r: float

    def __call__(self, x, m) -> float:
        x = float(np.asarray(x).reshape(-1)[0])
        return interval_integral(m, x - self.r, x + self.r)


@dataclass(frozen=True)
class SquaredMeanDistance:
    """Terminal cost: squared distance between the player and the mass mean."""

    def __call__(self, x, m) -> float:
        diff = np.asarray(x, dtype=float).reshape(-1) - np.atleast_1d(first_moment(m))
        return float(diff @ diff)


@dataclass(frozen=True)
class CostSpec:
    running: object = field(default_factory=ZeroRunning)
    terminal: object = field(default_factory=SquaredMeanDistance)


# -- scenario and trajectories ---------------------------------------------


def time_grid(T: float, N: int):
    """Knots ``t_k = T * k / N``; shared by every routine so arithmetic matches."""
    if N == 0:
        return [T]
    return [T * k / N for k in range(N + 1)]


@dataclass(frozen=True, eq=False)
class Scenario:
    T: float
    steps: int
    x0: object
    m0: GridDensity
    dynamics: PlayerDynamics
    cost: CostSpec
    dictA: ControlSetA
    dictB: tuple
    integrator: IntegratorConfig
    M: float
    c1: Optional[float] = None
    name: str = ""

    def __post_init__(self):
        if not self.T >= 0 or self.steps < 0:
            raise ValueError("need T >= 0 and steps >= 0")
        if self.steps == 0 and self.T != 0:
            raise ValueError("steps = 0 only makes sense with T = 0")
        object.__setattr__(self, "dictB", tuple(self.dictB))
        if not self.dictB:
            raise ValueError("mass dictionary is empty")
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        lo, hi = self.m0.bounds()
        if np.any(x0 < lo) or np.any(x0 > hi):
            raise ValueError("player start lies outside the grid domain")

    @property
    def dt(self) -> float:
        return self.T / self.steps if self.steps else 0.0

    @property
    def times(self):
        return time_grid(self.T, self.steps)

    @property
    def start(self):
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        return float(x0[0]) if self.dynamics.dim == 1 else x0

    def replace(self, **kw) -> "Scenario":
        data = {k: getattr(self, k) for k in self.__dataclass_fields__}
        data.update(kw)
        return Scenario(**data)

    def step_schedule(self, k: int, b: FieldSpec) -> Schedule:
        t = self.times
        return Schedule.constant(b, t[k], t[k + 1])


@dataclass
class Trajectory:
    times: list
    positions: list
    densities: list  # m_k or None when thinned out
    controls_a: list
    controls_b: list
    b_labels: list
    stage_costs: list = field(default_factory=list)
    J: float = math.nan

    @property
    def steps(self) -> int:
        return len(self.times) - 1


def evaluate_cost(traj: Trajectory, cost: CostSpec) -> float:
    """Left-endpoint quadrature of the running cost plus the terminal cost.

    The sum is folded from the terminal end so it matches the lower-value
    recursion operation for operation.
    """
    N = traj.steps
    m_N = traj.densities[N]
    if m_N is None:
        raise ValueError("terminal density snapshot missing")
    stages = []
    for k in range(N):
        dt = traj.times[k + 1] - traj.times[k]
        if isinstance(cost.running, ZeroRunning):
            stages.append(0.0)
            continue
        m_k = traj.densities[k]
        if m_k is None:
            raise ValueError(f"density snapshot {k} missing; running cost needs every step")
        stages.append(dt * cost.running(traj.positions[k], m_k, traj.times[k], traj.controls_a[k], traj.controls_b[k]))
    J = cost.terminal(traj.positions[N], m_N)
    for st in reversed(stages):
        J = st + J
    traj.stage_costs = stages
    return J


Strategy = Callable[[int, object, GridDensity, FieldSpec], object]


def constant_strategy(a) -> Strategy:
    return lambda k, y, m, b: a


def _label(sc: Scenario, b: FieldSpec) -> str:
    for i, f in enumerate(sc.dictB):
        if f == b:
            return f"dictB[{i}]"
    return repr(b)


def rollout(sc: Scenario, player_strategy: Strategy, mass_schedule: Schedule, keep_every: int = 1) -> Trajectory:
    """Play the game once: the strategy sees ``b_k`` before choosing ``a_k``."""
    times = sc.times
    y, m = sc.start, sc.m0
    traj = Trajectory([times[0]], [y], [m], [], [], [])
    for k in range(sc.steps):
        b = mass_schedule.field_at(times[k])
        a = player_strategy(k, y, m, b)
        y = step_player(y, a, sc.dynamics, times[k + 1] - times[k])
        m = transport_density(m, times[k], times[k + 1], mass_schedule, sc.integrator)
        traj.times.append(times[k + 1])
        traj.positions.append(y)
        traj.densities.append(m)
        traj.controls_a.append(a)
        traj.controls_b.append(b)
        traj.b_labels.append(_label(sc, b))
    if keep_every > 1 and isinstance(sc.cost.running, ZeroRunning):
        for k in range(1, sc.steps):
            if k % keep_every:
                traj.densities[k] = None
    traj.J = evaluate_cost(traj, sc.cost)
    return traj


# -- lower value -----------------------------------------------------------


@dataclass
class LowerValueResult:
    value: float
    b_path: list  # argmax field indices along the principal line of play
    a_path: list  # argmin control indices along the same line
    node_count: int


class _LowerValue:
    """Exhaustive max-min recursion over the finite dictionaries.

    Transported densities depend only on the sequence of mass choices, so they
    are cached per (depth, b-index path) within one solve.
    """

    def __init__(self, sc: Scenario, budget: int, frontier=None, cache=None):
        self.sc = sc
        self.times = sc.times
        self.controls = [np.asarray(a) if sc.dynamics.dim > 1 else float(a[0]) for a in sc.dictA.dictionary]
        self.frontier = frontier
        self.budget = budget
        self.nodes = 0
        self._mcache = {} if cache is None else cache

    def _child_density(self, k, path, m, j):
        key = path + (j,)
        if key not in self._mcache:
            b = self.sc.dictB[j]
            self._mcache[key] = transport_density(
                m, self.times[k], self.times[k + 1], self.sc.step_schedule(k, b), self.sc.integrator
            )
        return self._mcache[key]

    def value(self, k, y, m, path=()):
        self.nodes += 1
        sc = self.sc
        if k == sc.steps:
            return sc.cost.terminal(y, m), [], []
        if self.frontier is not None and k == self.frontier[0]:
            return self.frontier[1](k, y, m, path), [], []
        dt = self.times[k + 1] - self.times[k]
        best = -math.inf
        best_line = ([], [])
        for j, b in enumerate(sc.dictB):
            m_next = self._child_density(k, path, m, j)
            worst = math.inf
            worst_line = None
            for i, a in enumerate(self.controls):
                stage = dt * sc.cost.running(y, m, self.times[k], a, b)
                y_next = step_player(y, a, sc.dynamics, dt)
                v, bp, ap = self.value(k + 1, y_next, m_next, path + (j,))
                v = stage + v
                if v < worst:
                    worst, worst_line = v, (i, bp, ap)
            if worst > best:
                i, bp, ap = worst_line
                best, best_line = worst, ([j] + bp, [i] + ap)
        return best, best_line[0], best_line[1]


def _guard(sc: Scenario, k: int, budget: int):
    width = len(sc.dictA) * len(sc.dictB)
    depth = sc.steps - k
    if depth > 0 and depth * math.log(width) > math.log(budget) + 1e-12:
        raise BudgetError(f"({len(sc.dictA)}*{len(sc.dictB)})^{depth} exceeds the budget {budget}")


def solve_lower_value(sc: Scenario, k: int = 0, y=None, m: GridDensity | None = None, budget: int = 10**7) -> LowerValueResult:
    """Discrete lower value at step ``k`` with the principal line of play."""
    if not 0 <= k <= sc.steps:
        raise ValueError("step index out of range")
    _guard(sc, k, budget)
    y = sc.start if y is None else y
    m = sc.m0 if m is None else m
    solver = _LowerValue(sc, budget)
    v, bp, ap = solver.value(k, y, m)
    return LowerValueResult(v, bp, ap, solver.nodes)


def discrete_lower_value(sc: Scenario, k: int, y, m: GridDensity, budget: int = 10**7) -> float:
    return solve_lower_value(sc, k, y, m, budget).value


def dpp_split_check(sc: Scenario, split: int, budget: int = 10**7) -> float:
    """``|V_0 direct - V_0 with V_split substituted at the frontier|``."""
    if not 0 <= split <= sc.steps:
        raise ValueError("split index out of range")
    _guard(sc, 0, budget)
    # transports are pure functions of the mass path, so one cache serves both runs
    cache = {}
    direct, _, _ = _LowerValue(sc, budget, cache=cache).value(0, sc.start, sc.m0)

    def tail(k, y, m, path):
        return _LowerValue(sc, budget, cache=cache).value(k, y, m, path)[0]

    solver = _LowerValue(sc, budget, frontier=(split, tail), cache=cache)
    split_value, _, _ = solver.value(0, sc.start, sc.m0)
    return abs(direct - split_value)


def policy_rollout(sc: Scenario, result: LowerValueResult) -> Trajectory:
    """Replay the principal line of play extracted from :func:`solve_lower_value`."""
    times = sc.times
    pieces = tuple((times[k], sc.dictB[j]) for k, j in enumerate(result.b_path))
    schedule = Schedule(pieces, sc.T)
    controls = list(sc.dictA)
    strategy = lambda k, y, m, b: controls[result.a_path[k]] if sc.dynamics.dim > 1 else float(controls[result.a_path[k]][0])
    return rollout(sc, strategy, schedule)
