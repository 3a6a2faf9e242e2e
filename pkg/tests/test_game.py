import itertools

import numpy as np
import pytest

from massgame.density import GridDensity, mass, transport_density
from massgame.fields import Constant, ControlSetA, Schedule
from massgame.flow import IntegratorConfig
from massgame.game import (
    BudgetError,
    CostSpec,
    PlayerDynamics,
    Scenario,
    SquaredMeanDistance,
    WindowMass,
    WindowOccupancy,
    ZeroRunning,
    constant_strategy,
    discrete_lower_value,
    dpp_split_check,
    evaluate_cost,
    policy_rollout,
    rollout,
    solve_lower_value,
    step_player,
)
from massgame.scenario import load_scenario, reference_scenario

from conftest import hat, make_grid


@pytest.fixture(scope="module")
def tiny():
    return load_scenario(reference_scenario("example2")).scenario


def uniform_half():
    # value 0.5 on [-1, 1], unit mass
    return make_grid(lambda p: np.where(np.abs(p[:, 0]) <= 1.0, 0.5, 0.0), -2.0, 2.0, 400)


def window_scenario(m0, steps=2, T=1.0, running=None, dictB=None):
    return Scenario(
        T=T,
        steps=steps,
        x0=0.0,
        m0=m0,
        dynamics=PlayerDynamics(0.25),
        cost=CostSpec(running or ZeroRunning(), WindowMass(0.5)),
        dictA=ControlSetA(0.25, [-0.25, 0.0, 0.25]),
        dictB=dictB or [Constant(0.0, [(-3, 3)])],
        integrator=IntegratorConfig(1e-3),
        M=10.0,
    )


def test_step_player_examples():
    assert step_player(0.7, 0.0, PlayerDynamics(1.0), 0.1) == 0.7
    assert step_player(0.7, 1.0, PlayerDynamics(1.0), 0.25) == pytest.approx(0.95, abs=1e-15)
    drift = PlayerDynamics(0.5, Constant(0.5, [(-5, 5)]))
    assert step_player(0.7, -0.5, drift, 0.37) == pytest.approx(0.7, abs=1e-15)


def test_step_player_speed_bound(rng):
    dyn = PlayerDynamics(0.5, Constant(0.3, [(-2, 2)], 1.0))
    for y, a in zip(rng.uniform(-4, 4, 50), rng.uniform(-0.5, 0.5, 50)):
        assert abs(step_player(y, a, dyn, 0.1) - y) <= dyn.speed_bound * 0.1 + 1e-15


def test_step_player_rejects_bad_input():
    with pytest.raises(ValueError):
        step_player(0.0, 2.0, PlayerDynamics(1.0), 0.1)
    with pytest.raises(ValueError):
        step_player(0.0, 0.5, PlayerDynamics(1.0), 0.0)


def test_window_cost_static_play():
    sc = window_scenario(uniform_half())
    traj = rollout(sc, constant_strategy(0.0), Schedule.constant(sc.dictB[0], 0.0, 1.0))
    assert traj.J == pytest.approx(0.5, abs=1e-14)


def test_mean_distance_zero_when_at_mean():
    m0 = make_grid(hat(0.3), -2, 2, 256)
    sc = window_scenario(m0).replace(x0=0.3, cost=CostSpec(ZeroRunning(), SquaredMeanDistance()))
    traj = rollout(sc, constant_strategy(0.0), Schedule.constant(sc.dictB[0], 0.0, 1.0))
    assert traj.J == pytest.approx(0.0, abs=1e-24)


def test_degenerate_horizon():
    sc = window_scenario(uniform_half(), steps=0, T=0.0)
    traj = rollout(sc, constant_strategy(0.0), Schedule.constant(sc.dictB[0], 0.0, 0.0))
    assert traj.J == sc.cost.terminal(0.0, sc.m0)
    assert solve_lower_value(sc).value == traj.J


def test_trajectory_invariants(tiny):
    sched = Schedule(((0.0, tiny.dictB[0]), (tiny.times[1], tiny.dictB[2]), (tiny.times[2], tiny.dictB[1])), tiny.T)
    strategy = lambda k, y, m, b: [0.25, -0.25, 0.0][k]
    traj = rollout(tiny, strategy, sched)
    assert len(traj.positions) == tiny.steps + 1
    for k in range(tiny.steps):
        dt = traj.times[k + 1] - traj.times[k]
        assert traj.positions[k + 1] == step_player(traj.positions[k], traj.controls_a[k], tiny.dynamics, dt)
        m_next = transport_density(traj.densities[k], traj.times[k], traj.times[k + 1], sched, tiny.integrator)
        np.testing.assert_array_equal(m_next.values, traj.densities[k + 1].values)
    assert traj.J >= 0.0


def test_running_cost_left_endpoint():
    m0 = uniform_half()
    sc = window_scenario(m0, steps=4, running=WindowOccupancy(0.5))
    traj = rollout(sc, constant_strategy(0.0), Schedule.constant(sc.dictB[0], 0.0, 1.0))
    # static play: four stages of 0.25 * 0.5, plus the terminal 0.5
    assert traj.J == pytest.approx(1.0, abs=1e-13)
    traj.densities[2] = None
    with pytest.raises(ValueError):
        evaluate_cost(traj, sc.cost)


def test_strategy_sees_current_mass_control(tiny):
    seen = []
    strategy = lambda k, y, m, b: seen.append(b) or 0.0
    sched = Schedule(((0.0, tiny.dictB[0]), (tiny.times[1], tiny.dictB[2])), tiny.T)
    rollout(tiny, strategy, sched)
    assert seen == [tiny.dictB[0], tiny.dictB[2], tiny.dictB[2]]


def test_lower_value_base_case(tiny):
    m = tiny.m0
    assert discrete_lower_value(tiny, tiny.steps, 0.8, m) == tiny.cost.terminal(0.8, m)


def test_singleton_dictionaries(tiny):
    sc = tiny.replace(dictA=ControlSetA(0.25, [0.25]), dictB=[tiny.dictB[2]])
    traj = rollout(sc, constant_strategy(0.25), Schedule.constant(sc.dictB[0], 0.0, sc.T))
    assert solve_lower_value(sc).value == traj.J


def test_lower_value_matches_paired_motion(tiny):
    res = solve_lower_value(tiny)
    psi = tiny.cost.terminal(tiny.start, tiny.m0)
    assert res.value == pytest.approx(psi, rel=1e-12)
    assert res.b_path == [0, 0, 0] and res.a_path == [0, 0, 0]


def test_policy_rollout_reproduces_value(tiny):
    res = solve_lower_value(tiny)
    assert policy_rollout(tiny, res).J == res.value


def test_player_advantage_ordering(tiny):
    """For every fixed mass schedule the best player reply is at most the value."""
    value = solve_lower_value(tiny).value
    controls = [-0.25, 0.0, 0.25]
    for bs in itertools.product(range(3), repeat=tiny.steps):
        sched = Schedule(tuple((tiny.times[k], tiny.dictB[j]) for k, j in enumerate(bs)), tiny.T)
        # the mass path ignores the player, so one transport chain serves every reply
        m_final = rollout(tiny, constant_strategy(0.0), sched).densities[-1]
        replies = []
        for seq in itertools.product(controls, repeat=tiny.steps):
            y = tiny.start
            for k, a in enumerate(seq):
                y = step_player(y, a, tiny.dynamics, tiny.times[k + 1] - tiny.times[k])
            replies.append(tiny.cost.terminal(y, m_final))
        assert min(replies) <= value + 1e-12


def test_deviation_sandwich(tiny):
    value = solve_lower_value(tiny).value
    idle = rollout(tiny, constant_strategy(-0.25), Schedule.constant(tiny.dictB[1], 0.0, tiny.T)).J
    reverse = rollout(tiny, constant_strategy(0.25), Schedule.constant(tiny.dictB[0], 0.0, tiny.T)).J
    assert idle <= value <= reverse


@pytest.mark.parametrize("split", [0, 1, 2, 3])
def test_dpp_split(tiny, split):
    assert dpp_split_check(tiny, split) <= 1e-12


def test_budget_guard(tiny):
    with pytest.raises(BudgetError):
        solve_lower_value(tiny, budget=700)
    assert solve_lower_value(tiny, budget=729).node_count == 1 + 9 + 81 + 729
    with pytest.raises(ValueError):
        dpp_split_check(tiny, 4)


def test_first_index_wins_ties():
    m0 = make_grid(hat(), -2, 2, 128)
    zero = Constant(0.0, [(-3, 3)])
    sc = window_scenario(m0, steps=1, dictB=[zero, Constant(0.0, [(-2.5, 2.5)])])
    sc = sc.replace(dictA=ControlSetA(0.25, [0.0, 0.0]))
    res = solve_lower_value(sc)
    assert res.b_path == [0] and res.a_path == [0]


def test_scenario_validation():
    m0 = make_grid(hat(), -2, 2, 64)
    with pytest.raises(ValueError):
        window_scenario(m0).replace(x0=5.0)
    with pytest.raises(ValueError):
        window_scenario(m0).replace(dictB=[])
