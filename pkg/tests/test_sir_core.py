import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from sircontrol.errors import DomainError, IntegrationError
from sircontrol.long_term import mu, x_infinity
from sircontrol.sir_core import (
    Params,
    PiecewiseConstantSchedule,
    SampledSchedule,
    State,
    derivative,
    integrate,
    integrate_batch,
    piecewise_sigma_fn,
)


def test_params_derive_beta():
    p = Params.from_beta(0.3, 0.1)
    assert p.sigma0 == pytest.approx(3.0)
    assert p.beta == pytest.approx(0.3)


@pytest.mark.parametrize("gamma, sigma0", [(0, 3), (-1, 3), (0.1, 0), (0.1, -1), (0.1, math.inf)])
def test_params_reject_nonpositive(gamma, sigma0):
    with pytest.raises(DomainError):
        Params(gamma, sigma0)


@pytest.mark.parametrize("x, y", [(-0.1, 0.5), (0.5, -0.1), (0.7, 0.4)])
def test_state_outside_simplex(x, y):
    with pytest.raises(DomainError):
        State(x, y)


def test_state_tolerance_and_z():
    s = State(0.6, 0.4 + 5e-10)
    assert s.z == pytest.approx(0.0, abs=1e-9)


# derivative


@pytest.mark.parametrize("sigma", [0.0, 1.0, 3.0])
def test_derivative_equilibrium(p3, sigma):
    assert derivative(State(0.7, 0.0), sigma, p3) == (0.0, 0.0)


def test_derivative_herd_threshold(p3):
    _, dy = derivative(State(1 / 3, 0.2), 3.0, p3)
    assert dy == pytest.approx(0.0, abs=1e-15)


def test_derivative_worked_example(p3):
    dx, dy = derivative(State(0.99, 0.01), 3.0, p3)
    assert dx == pytest.approx(-0.00297, rel=1e-12)
    assert dy == pytest.approx(0.00197, rel=1e-12)


@pytest.mark.parametrize("sigma", [-0.1, 3.1])
def test_derivative_rejects_control(p3, sigma):
    with pytest.raises(DomainError):
        derivative(State(0.5, 0.1), sigma, p3)


def test_derivative_rejects_state(p3):
    class Loose:
        x, y = 0.8, 0.3

    with pytest.raises(DomainError):
        derivative(Loose(), 1.0, p3)


# schedules


def test_piecewise_right_continuous():
    sch = PiecewiseConstantSchedule.single_switch(10.0, 50.0, 3.0)
    assert sch(9.999) == 3.0
    assert sch(10.0) == 0.0
    assert sch(50.0) == 3.0
    assert sch(60.0) == 3.0


def test_piecewise_validation():
    with pytest.raises(DomainError):
        PiecewiseConstantSchedule(((0, 5, 1.0), (4, 8, 1.0)), 3.0, 10)
    with pytest.raises(DomainError):
        PiecewiseConstantSchedule(((0, 5, 3.5),), 3.0, 10)
    with pytest.raises(DomainError):
        PiecewiseConstantSchedule(((0, 5, 0.5),), 3.0, 10, sigma_floor=1.0)
    with pytest.raises(DomainError):
        PiecewiseConstantSchedule(((0, 12, 1.0),), 3.0, 10)


def test_sampled_schedule_interpolates():
    sch = SampledSchedule([0.0, 2.0, 1.0], 5.0, 3.0)
    assert sch.horizon == 10.0
    assert sch(2.5) == pytest.approx(1.0)
    assert sch(7.5) == pytest.approx(1.5)
    assert sch(10.0) == pytest.approx(1.0)
    assert sch(10.5) == 3.0
    with pytest.raises(DomainError):
        SampledSchedule([0.0, 4.0], 1.0, 3.0)


# integrate


def test_equilibrium_trajectory_constant(p3):
    tr = integrate(State(0.8, 0.0), 1.3, p3, 20.0)
    assert np.all(tr.x == 0.8) and np.all(tr.y == 0.0)


def test_pure_decay_example(p3):
    tr = integrate(State(0.99, 0.01), 0.0, p3, 10.0)
    assert tr.final.x == 0.99
    assert tr.final.y == pytest.approx(0.01 * math.exp(-1.0), rel=1e-10)
    assert tr.final.y == pytest.approx(0.0036788, abs=1e-7)


def test_uncontrolled_endpoint_on_xinf_contour(p3):
    tr = integrate(State(0.99, 0.01), 3.0, p3, 200.0)
    assert tr.final.x == pytest.approx(x_infinity(0.99, 0.01, 3.0), abs=1e-4)


def test_matches_scipy_reference(p3):
    sch = PiecewiseConstantSchedule(((0, 10, 3.0), (10, 30, 1.2), (30, 60, 0.3)), 3.0, 60)
    tr = integrate(State(0.95, 0.05), sch, p3, 60.0)
    y0 = [0.95, 0.05]
    for a, b, s in sch.segments:
        sol = solve_ivp(
            lambda t, u, s=s: [-0.1 * s * u[0] * u[1], 0.1 * s * u[0] * u[1] - 0.1 * u[1]],
            (a, b), y0, rtol=1e-12, atol=1e-14,
        )
        y0 = sol.y[:, -1]
    assert tr.final.x == pytest.approx(y0[0], abs=1e-10)
    assert tr.final.y == pytest.approx(y0[1], abs=1e-10)


def test_breakpoints_hit_exactly(p3):
    sch = PiecewiseConstantSchedule.single_switch(12.345, 40.0, 3.0)
    tr = integrate(State(0.9, 0.1), sch, p3, 40.0, dt=0.1)
    assert 12.345 in tr.times
    assert tr.times[-1] == 40.0


def test_fourth_order_convergence(p3):
    s0 = State(0.9, 0.1)
    exact = integrate(s0, 2.0, p3, 30.0, dt=0.001).final.y
    e1 = abs(integrate(s0, 2.0, p3, 30.0, dt=1.0).final.y - exact)
    e2 = abs(integrate(s0, 2.0, p3, 30.0, dt=0.5).final.y - exact)
    assert 12 < e1 / e2 < 20


def test_control_after_horizon_is_sigma0(p3):
    sch = PiecewiseConstantSchedule.constant(0.0, 3.0, 10.0)
    tr = integrate(State(0.9, 0.1), sch, p3, 20.0)
    assert np.all(tr.sigma[tr.times >= 10.0] == 3.0)
    assert np.all(tr.sigma[tr.times < 10.0] == 0.0)


def test_feedback_control(p3):
    tr = integrate(State(0.9, 0.1), lambda t, x, y: 0.0 if y > 0.05 else 3.0, p3, 30.0)
    assert tr.y.min() >= 0.05 - 1e-3


def test_running_cost_accumulates(p3):
    tr = integrate(State(0.9, 0.1), 1.0, p3, 10.0, running_cost=lambda x, y, s: 2.0)
    assert tr.running_cost == pytest.approx(20.0, rel=1e-12)


def test_step_rejection_on_huge_dt():
    p = Params(1.0, 20.0)
    with pytest.raises(IntegrationError):
        integrate(State(0.9, 0.1), 20.0, p, 50.0, dt=5.0)


def test_trajectory_is_read_only(p3):
    tr = integrate(State(0.9, 0.1), 3.0, p3, 1.0)
    with pytest.raises(ValueError):
        tr.x[0] = 0.0


def test_bad_arguments(p3):
    with pytest.raises(DomainError):
        integrate(State(0.9, 0.1), 3.0, p3, 1.0, dt=0)
    with pytest.raises(DomainError):
        integrate(State(0.9, 0.1), 3.0, p3, 0.0)


# invariants


@given(
    x0=st.floats(0.0, 1.0),
    frac=st.floats(0.0, 1.0),
    levels=st.lists(st.floats(0.0, 1.0), min_size=1, max_size=6),
)
def test_forward_invariance(x0, frac, levels):
    p = Params(0.1, 4.0)
    y0 = frac * (1 - x0)
    T = 60.0
    seg = T / len(levels)
    sch = PiecewiseConstantSchedule(
        tuple((k * seg, (k + 1) * seg, 4.0 * lv) for k, lv in enumerate(levels)), 4.0, T
    )
    tr = integrate(State(x0, y0), sch, p, T, dt=0.05)
    assert tr.x.min() >= -1e-9 and tr.y.min() >= -1e-9
    assert np.max(tr.x + tr.y) <= 1 + 1e-9


@pytest.mark.parametrize("dt", [0.01, 0.005])
def test_mu_conserved_uncontrolled(p3, dt):
    tr = integrate(State(0.99, 0.01), 3.0, p3, 100.0, dt=dt)
    m = mu(tr.x, tr.y, 3.0)
    assert np.max(np.abs(m - m[0])) <= 1e-8


def test_pure_decay_along_trajectory(p3):
    tr = integrate(State(0.7, 0.2), 0.0, p3, 50.0)
    assert np.all(tr.x == 0.7)
    np.testing.assert_allclose(tr.y, 0.2 * np.exp(-0.1 * tr.times), rtol=1e-9)


@pytest.mark.parametrize("sigma", [1.0, 2.5])
def test_phase_slope(p3, sigma):
    tr = integrate(State(0.9, 0.1), sigma, p3, 40.0, dt=0.01)
    slope = np.gradient(tr.y, tr.x)[5:-5]
    expected = -1 + 1 / (sigma * tr.x[5:-5])
    np.testing.assert_allclose(slope, expected, atol=1e-5)


def test_batch_matches_single(p3, rng):
    levels = rng.uniform(0, 3.0, size=(4, 5))
    res = integrate_batch(0.9, 0.1, piecewise_sigma_fn(levels, 50.0), p3, 50.0, 0.01)
    for b in range(4):
        sch = PiecewiseConstantSchedule(
            tuple((10.0 * k, 10.0 * (k + 1), levels[b, k]) for k in range(5)), 3.0, 50.0
        )
        tr = integrate(State(0.9, 0.1), sch, p3, 50.0)
        assert res.x[b] == pytest.approx(tr.final.x, abs=1e-12)
        assert res.y[b] == pytest.approx(tr.final.y, abs=1e-12)
