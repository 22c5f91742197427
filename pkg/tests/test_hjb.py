import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfgmarket.errors import CflViolationError, InvalidDataError, InvalidParameterError
from mfgmarket.geometry import Grid, derivative
from mfgmarket.hjb import HjbOptions, hjb_residual, numerical_hamiltonian, one_sided_gradients, solve_hjb
from mfgmarket.market import Boundary, MarketPath, derive_params
from mfgmarket.scenarios import constant, ramp

NEWTON = HjbOptions(scheme="fully-implicit-newton")


def ode_value(grid, params, K, f):
    tau = grid.T - grid.t
    decay = np.exp(-params.r * tau)
    return K * decay + f**2 / (4 * params.r) * (1 - decay)


@settings(max_examples=200, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 0.5))
def test_godunov_hamiltonian_is_monotone_and_consistent(pm, pp, f, h):
    H = numerical_hamiltonian
    assert H(pm, pm, f) == pytest.approx(0.25 * (f - pm) ** 2)
    assert H(pm + h, pp, f) <= H(pm, pp, f) + 1e-15
    assert H(pm, pp + h, f) >= H(pm, pp, f) - 1e-15


def test_one_sided_gradients_reflect():
    v = np.array([1.0, 2.0, 4.0, 7.0])
    pm, pp = one_sided_gradients(v, 1.0)
    np.testing.assert_allclose(pm, [-1, 1, 2, 3])
    np.testing.assert_allclose(pp, [1, 2, 3, -3])


@pytest.mark.parametrize("opts", [None, NEWTON])
@pytest.mark.parametrize("sigma", [0.0, 0.7])
def test_constant_data_matches_ode(opts, sigma):
    errors = []
    for n in (50, 100):
        g = Grid(n, 2 * n)
        p = derive_params(1, 0.5, sigma)
        u = solve_hjb(p.b, constant(g, 0.5), p, g, opts=opts)
        exact = ode_value(g, p, 0.5, p.b)[:, None]
        errors.append(np.max(np.abs(u - exact)))
        assert errors[-1] <= 5 * (g.dt + g.dx**2)
    assert errors[0] / errors[1] >= 1.8


def test_time_dependent_level_matches_quadrature():
    # u(t) = int_t^T e^{-r(s-t)} f(s)^2/4 ds + e^{-r(T-t)} K for x-independent data
    from scipy.integrate import quad

    g = Grid(10, 2000)
    p = derive_params(1, 0.5, 0.5)
    f_fun = lambda s: 0.6 + 0.2 * np.sin(3 * s)
    u = solve_hjb(f_fun(g.t), constant(g, 0.3), p, g)
    for k in (0, 500, 1500):
        t = g.t[k]
        ref = quad(lambda s: np.exp(-p.r * (s - t)) * f_fun(s) ** 2 / 4, t, g.T)[0] + 0.3 * np.exp(-p.r * (g.T - t))
        assert u[k, 3] == pytest.approx(ref, abs=2e-3)


def test_accepts_market_path_and_scalar():
    g = Grid(20, 40)
    p = derive_params(1, 0.5, 0.5)
    f = np.full(41, 0.7)
    a = solve_hjb(MarketPath(f, f), ramp(g), p, g)
    b = solve_hjb(0.7, ramp(g), p, g)
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("sigma", [0.0, 0.3, 1.0])
@pytest.mark.parametrize("opts", [None, NEWTON])
def test_nonnegative_and_gradient_bound(sigma, opts):
    g = Grid(80, 160)
    p = derive_params(2, 0.5, sigma)
    u_T = ramp(g, 0.25)
    u = solve_hjb(0.8, u_T, p, g, opts=opts)
    assert u.min() >= -1e-12
    bound = np.exp(p.r * g.T) * np.abs(derivative(u_T, g)).max()
    assert np.abs(derivative(u, g)).max() <= bound * 1.05


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 0.3), st.floats(0.0, 0.3), st.floats(0.0, 1.0))
def test_comparison_principle(a, b, sigma):
    g = Grid(40, 80)
    p = derive_params(1, 0.5, sigma)
    low = ramp(g, min(a, b)) + 0.1
    high = ramp(g, max(a, b)) + 0.1 + 0.05 * (1 + np.cos(np.pi * g.x))
    # high >= low pointwise since the ramp is nondecreasing in its slope
    assert np.all(high >= low)
    assert np.all(solve_hjb(0.7, high, p, g) >= solve_hjb(0.7, low, p, g) - 1e-12)


def test_schemes_agree_to_first_order():
    g = Grid(100, 400)
    p = derive_params(1, 0.5, 0.4)
    f = 0.7 + 0.1 * g.t
    a = solve_hjb(f, ramp(g), p, g)
    b = solve_hjb(f, ramp(g), p, g, opts=NEWTON)
    assert np.max(np.abs(a - b)) <= 2 * g.dt


def test_residual_shrinks_under_refinement():
    res = []
    for n in (50, 100, 200):
        g = Grid(n, 2 * n)
        p = derive_params(1, 0.5, 0.5)
        f = 0.7 + 0.1 * np.cos(g.t)
        res.append(hjb_residual(solve_hjb(f, ramp(g), p, g), f, p, g))
    assert res[2] < res[1] < res[0]
    assert res[2] < 2e-3


def test_cfl_violation_detected():
    g = Grid(200, 10)
    p = derive_params(1, 0.5, 0.1)
    with pytest.raises(CflViolationError):
        solve_hjb(0.7, ramp(g, 0.25), p, g)
    # the implicit scheme has no step restriction
    u = solve_hjb(0.7, ramp(g, 0.25), p, g, opts=NEWTON)
    assert np.all(np.isfinite(u))


def test_dirichlet_pins_left_value():
    g = Grid(50, 100)
    p = derive_params(1, 0.5, 0.5)
    u = solve_hjb(0.7, ramp(g), p, g, Boundary.DIRICHLET_LEFT)
    np.testing.assert_array_equal(u[:-1, 0], 0.0)
    assert u.min() >= 0
    u2 = solve_hjb(0.7, ramp(g), p, g, Boundary.DIRICHLET_LEFT, NEWTON)
    assert np.max(np.abs(u - u2)) <= 0.02


def test_rejects_bad_input():
    g = Grid(10, 10)
    p = derive_params(1, 0.5, 0.5)
    with pytest.raises(InvalidDataError):
        solve_hjb(0.7, -np.ones(11), p, g)
    with pytest.raises(InvalidParameterError):
        HjbOptions(scheme="explicit")
