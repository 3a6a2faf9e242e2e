import math

import numpy as np
import pytest

from massgame.density import GridDensity, first_moment, mass, sample_density
from massgame.fields import ClampRamp, Constant, ControlSetA, field_eval
from massgame.game import PlayerDynamics, WindowMass
from massgame.isaacs import (
    MeanSquareValue,
    MonotoneWindowValue,
    WindowIndicator,
    WindowValue,
    coupling_term,
    hamiltonian,
    hji_residual,
    optimal_mass_field,
    solve_h_ode,
    value_mean_square,
    value_window,
)

from conftest import hat, make_grid

C = 0.25
DICT_A = ControlSetA(C, [-C, 0.0, C])
DICT_B = [Constant(v, [(-3, 3)], 1.0) for v in (-C, 0.0, C)]


def decreasing(p):
    # peak at -3, strictly decreasing on [-3, 4]
    x = p[:, 0]
    return np.where(x < -3, np.clip(x + 4, 0, None), np.clip((4 - x) / 7, 0, None))


def smooth_decreasing(p):
    x = p[:, 0]
    return np.where((x >= -4) & (x <= 4), np.exp(-0.5 * ((x + 3) / 2) ** 2), 0.0)


@pytest.fixture(scope="module")
def unit_hat():
    return make_grid(hat(0.1, 1.0), -2, 2, 256)


def test_constant_test_function_pairs_to_zero(unit_hat):
    # the divergence theorem holds up to the O(h^2) product-rule stencil
    tol = 2.5 * 4 * unit_hat.spacing[0] ** 2
    for b in (DICT_B[0], ClampRamp(-0.5, 0.5, 1.0), Constant(0.3, [(-0.5, 0.5)], 0.5)):
        assert coupling_term(np.full(unit_hat.extents, 2.5), b, unit_hat) == pytest.approx(0.0, abs=tol)


def test_boundary_mode_with_matched_ramp():
    m = make_grid(decreasing, -8, 8, 2048)
    q = WindowIndicator(-0.5, 2.5)
    ramp = ClampRamp(-0.5, 2.5, 1.0)
    expected = -1.0 * (sample_density(m, 2.5) + sample_density(m, -0.5))
    assert coupling_term(q, ramp, m, "boundary") == pytest.approx(expected, abs=1e-15)


def test_mean_square_pairing(unit_hat):
    z = 0.8
    q = -z * unit_hat.centers()[:, 0]
    assert coupling_term(q, DICT_B[0], unit_hat) == pytest.approx(-z * C, abs=1e-13)


def test_grid_mismatch_rejected(unit_hat):
    with pytest.raises(ValueError):
        coupling_term(np.zeros(10), DICT_B[0], unit_hat)
    with pytest.raises(ValueError):
        coupling_term(np.zeros(unit_hat.extents), DICT_B[0], unit_hat, "boundary")


def test_hamiltonian_trivial(unit_hat):
    h = hamiltonian(0.0, unit_hat, 0.0, 3.0, np.ones(unit_hat.extents), [0.0], [Constant(0.0, [(-3, 3)])])
    assert h.value == 0.0


def test_hamiltonian_linear_max(unit_hat):
    z = 0.6
    h = hamiltonian(0.0, unit_hat, 0.0, z, np.zeros(unit_hat.extents), [-C, C], [Constant(0.0, [(-3, 3)])])
    assert h.value == pytest.approx(z * C) and h.a_index == 0


@pytest.mark.parametrize("sign", [1.0, -1.0])
def test_hamiltonian_mean_square_assembly(unit_hat, sign):
    x = first_moment(unit_hat) + sign * 0.7
    z = 2 * (x - first_moment(unit_hat))
    q = -z * unit_hat.centers()[:, 0]
    h = hamiltonian(x, unit_hat, 0.0, z, q, DICT_A, DICT_B)
    assert h.value == pytest.approx(0.0, abs=1e-13)
    # the mass runs away from the player, the player chases
    assert DICT_B[h.b_index].v[0] == pytest.approx(-sign * C)
    assert float(list(DICT_A)[h.a_index][0]) == -sign * C


def test_hamiltonian_with_drift(unit_hat):
    dyn = PlayerDynamics(C, Constant(0.1, [(-3, 3)]))
    h = hamiltonian(0.0, unit_hat, 0.0, 1.0, np.zeros(unit_hat.extents), DICT_A, [DICT_B[1]], dynamics=dyn)
    assert h.value == pytest.approx(-(0.1 - C))


@pytest.mark.parametrize("seed", range(5))
def test_mean_square_residual_vanishes(unit_hat, seed):
    rng = np.random.default_rng(seed)
    for x in rng.uniform(-1.5, 1.5, 4):
        rep = hji_residual(MeanSquareValue(), x, unit_hat, rng.uniform(0, 1), c=C)
        assert abs(rep.residual) <= 1e-12
        assert rep.residual == sum(rep.breakdown.values())


def test_dictionary_residual_dominates_analytic(unit_hat, rng):
    subsets = [DICT_B, DICT_B[1:], [DICT_B[1]], [Constant(0.1, [(-3, 3)])]]
    for x in rng.uniform(-1.5, 1.5, 6):
        ref = hji_residual(MeanSquareValue(), x, unit_hat, 0.0, c=C).residual
        for sub in subsets:
            rep = hji_residual(MeanSquareValue(), x, unit_hat, 0.0, "dictionary", dictA=DICT_A, dictB=sub)
            assert rep.residual >= ref - 1e-13


def test_window_dictionary_residual_dominates_analytic():
    m = make_grid(decreasing, -8, 8, 1024)
    V = MonotoneWindowValue(0.5, 1.0, 1.0)
    ref = hji_residual(V, 0.0, m, 0.0).residual
    ramps = [ClampRamp(-0.5, 2.5, 1.0), ClampRamp(-1, 1, 1.0), ClampRamp(-0.5, 2.5, 0.5)]
    for sub in (ramps, ramps[1:], [Constant(0.0, [(-6, 6)])]):
        rep = hji_residual(V, 0.0, m, 0.0, "dictionary", dictA=[[-1.0], [0.0], [1.0]], dictB=sub)
        assert rep.residual >= ref - 1e-15


def test_analytic_window_residual_is_zero():
    m = make_grid(decreasing, -8, 8, 2048)
    rep = hji_residual(MonotoneWindowValue(0.5, 1.0, 1.0), 0.0, m, 0.3)
    assert rep.residual == pytest.approx(0.0, abs=1e-15)


def test_h_ode_decreasing_profile():
    m = make_grid(decreasing, -8, 8, 2048)
    hs = solve_h_ode(m, 0.0, 0.5, 1.0, 1.0, 10)
    assert all(h == 0.0 for h in hs.h_l)
    assert all(h == 2.0 * (1.0 - t) for h, t in zip(hs.h_r, hs.times))


def test_h_ode_increasing_profile_mirrors():
    m = make_grid(lambda p: decreasing(-p), -8, 8, 2048)
    hs = solve_h_ode(m, 0.0, 0.5, 1.0, 1.0, 10)
    assert all(h == 0.0 for h in hs.h_r)
    assert all(h == 2.0 * (1.0 - t) for h, t in zip(hs.h_l, hs.times))


def test_h_ode_trivial_horizon():
    m = make_grid(decreasing, -8, 8, 256)
    hs = solve_h_ode(m, 0.0, 0.5, 1.0, 0.0, 5)
    assert hs.h_l == (0.0,) and hs.h_r == (0.0,)


@pytest.mark.parametrize("seed", range(6))
def test_h_schedule_invariants_on_rough_profiles(seed):
    rng = np.random.default_rng(seed)
    nodes = np.linspace(-4, 4, 17)
    vals = np.concatenate(([0.0], rng.uniform(0.1, 1.0, 15), [0.0]))
    m = make_grid(lambda p: np.interp(p[:, 0], nodes, vals), -8, 8, 1024)
    c, T, N = 0.8, 1.0, 20
    hs = solve_h_ode(m, rng.uniform(-0.5, 0.5), 0.4, c, T, N)
    for k, t in enumerate(hs.times):
        assert hs.h_l[k] >= 0 and hs.h_r[k] >= 0
        assert hs.h_l[k] + hs.h_r[k] == pytest.approx(2 * c * (T - t), abs=1e-14)
        assert hs.dh_l[k] * hs.dh_r[k] == 0.0 and hs.dh_l[k] + hs.dh_r[k] == -2 * c
    assert np.all(np.diff(hs.h_l) <= 1e-15) and np.all(np.diff(hs.h_r) <= 1e-15)
    assert hs.h_l[-1] == hs.h_r[-1] == 0.0


def test_h_ode_window_leaving_grid():
    from massgame.density import DomainOverflowError

    m = make_grid(decreasing, -5, 5, 256)
    with pytest.raises(DomainOverflowError):
        solve_h_ode(m, 3.5, 0.5, 1.0, 1.0, 4)


def test_optimal_mass_field_examples():
    f = optimal_mass_field(0.0, 0.5, 0.0, 0.0, 1.0)
    assert (f.L, f.R) == (-0.5, 0.5)
    assert field_eval(f, -3.0) == 1.0
    assert field_eval(f, 0.0) == 0.0
    g = optimal_mass_field(0.2, 0.5, 0.3, 0.9, 0.7)
    assert field_eval(g, g.L) == pytest.approx(0.7) and field_eval(g, g.R) == pytest.approx(-0.7)


def test_value_window_examples():
    m = make_grid(lambda p: np.where(np.abs(p[:, 0]) <= 1.0, 0.5, 0.0), -2.0, 2.0, 400)
    hs = solve_h_ode(m, 0.0, 0.5, 0.0, 1.0, 4)  # c = 0 keeps the window fixed
    assert value_window(WindowValue(0.5, hs), 0.0, m, 0.0) == pytest.approx(0.5, abs=1e-14)
    unit = make_grid(hat(0.3), -2, 2, 256)
    assert value_mean_square(first_moment(unit), unit) == 0.0


def test_monotone_value_at_final_time():
    m = make_grid(decreasing, -8, 8, 2048)
    V = MonotoneWindowValue(0.5, 1.0, 1.0)
    assert value_window(V, 0.3, m, 1.0) == WindowMass(0.5)(0.3, m)


def test_window_value_agrees_with_monotone_form():
    m = make_grid(decreasing, -8, 8, 2048)
    hs = solve_h_ode(m, 0.0, 0.5, 1.0, 1.0, 8)
    for t in hs.times:
        a = value_window(WindowValue(0.5, hs), 0.0, m, t)
        b = value_window(MonotoneWindowValue(0.5, 1.0, 1.0), 0.0, m, t)
        assert a == pytest.approx(b, abs=1e-15)


def test_quadrature_residual_converges():
    V = MonotoneWindowValue(0.5, 1.0, 1.0)
    ramp = optimal_mass_field(0.0, 0.5, 0.0, 2.0, 1.0)
    res = []
    for n in (1024, 2048, 4096):
        m = make_grid(smooth_decreasing, -8, 8, n)
        rep = hji_residual(V, 0.0, m, 0.0, "dictionary", dictA=[[-1.0], [0.0], [1.0]], dictB=[ramp], coupling="quadrature")
        res.append(abs(rep.residual))
    orders = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    assert np.all(orders >= 0.9)
