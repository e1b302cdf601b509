import math

import numpy as np
import pytest

from sircontrol import analytic, hjb
from sircontrol.costs import CostSpec
from sircontrol.errors import CFLError, DomainError, GridExitError
from sircontrol.long_term import x_infinity
from sircontrol.pmp import forward_backward_sweep
from sircontrol.sir_core import Params, State, integrate

ZERO = CostSpec.zero()
QUAD = CostSpec.quadratic(1e-2)
S_Q = State(0.9, 0.1)


def constant_policy(grid, value, T, p):
    times = np.array([0.0, T])
    return hjb.FeedbackPolicy(grid, times, p.sigma0, T, sigma=np.full((2,) + grid.shape, value))


@pytest.fixture(scope="module")
def coarse_zero():
    p = Params(0.1, 3.0)
    return hjb.solve(hjb.Grid.square(100), p, ZERO, 100.0, store_values=True)


# grid and terminal data


def test_grid_geometry_and_mask():
    g = hjb.Grid.square(50)
    assert g.dx == pytest.approx((1 - 1e-4) / 50)
    assert g.x[0] == pytest.approx(1e-4 + 0.5 * g.dx)
    X, Y = np.meshgrid(g.x, g.y, indexing="ij")
    assert np.all(g.active[X + Y <= 1.0])
    assert not np.any(g.active[X + Y > 1.0 + 4 * g.dx + 1e-12])
    assert np.array_equal(g.mask, ~g.active)


@pytest.mark.parametrize("kw", [dict(nx=2, ny=10), dict(nx=10, ny=10, x_hi=1.5), dict(nx=10, ny=10, margin=-1)])
def test_grid_rejects(kw):
    with pytest.raises(DomainError):
        hjb.Grid(**kw)


def test_terminal_value_examples():
    g = hjb.Grid.square(60)
    v = hjb.terminal_value(g, 3.0)
    X, Y = np.meshgrid(g.x, g.y, indexing="ij")
    expect = -x_infinity(X, Y, 3.0)
    ok = g.active & (np.abs(1 - 3 * x_infinity(X, Y, 3.0)) >= hjb.CORNER_GUARD)
    np.testing.assert_array_equal(v.u[ok], expect[ok])
    assert np.all(np.isnan(v.u[g.mask]))
    assert np.nanmin(-v.u) >= 0 and np.nanmax(-v.u) <= 1 / 3 + 1e-12


def test_terminal_value_near_equilibrium():
    # on y -> 0 with x <= 1/sigma0 the value tends to -x
    g = hjb.Grid(40, 40, y_lo=0.0, y_hi=1e-6)
    v = hjb.terminal_value(g, 3.0)
    below = g.x < 1 / 3
    np.testing.assert_allclose(v.u[below, 0], -g.x[below], atol=1e-5)


def test_terminal_value_corner_fill():
    g = hjb.Grid(3, 3, x_lo=1 / 3 - 1e-12, x_hi=1 / 3 + 1e-12, y_lo=0.0, y_hi=1e-14)
    v = hjb.terminal_value(g, 3.0)
    assert np.allclose(v.u, -1 / 3)


# pointwise control


def test_gradient_rule_examples(p3):
    s = State(0.5, 0.2)
    assert hjb.optimal_sigma_from_gradients(0.7, 0.7, s, p3, QUAD) == 3.0
    gap = 2 * QUAD.c2 / (3.0 * 0.1 * 0.5 * 0.2)
    assert hjb.optimal_sigma_from_gradients(0.0, gap, s, p3, QUAD) == pytest.approx(0.0, abs=1e-12)
    assert hjb.optimal_sigma_from_gradients(0.0, 0.3, s, p3, ZERO) == 0.0
    assert hjb.optimal_sigma_from_gradients(0.3, 0.0, s, p3, ZERO) == 3.0
    assert hjb.optimal_sigma_from_gradients(0.0, 0.3, s, p3, ZERO, sigma_min=1.2) == 1.2


def test_terminal_gradient_sign(p3):
    g = hjb.Grid.square(80)
    v = hjb.terminal_value(g, 3.0)
    u = v.u
    # one-sided differences on interior cells of the simplex
    inner = g.active.copy()
    inner[-1, :] = inner[:, -1] = False
    inner[:-1, :] &= g.active[1:, :]
    inner[:, :-1] &= g.active[:, 1:]
    X, Y = np.meshgrid(g.x, g.y, indexing="ij")
    inner &= X + Y < 1.0
    ux = np.full_like(u, np.nan)
    uy = np.full_like(u, np.nan)
    ux[:-1] = (u[1:] - u[:-1]) / g.dx
    uy[:, :-1] = (u[:, 1:] - u[:, :-1]) / g.dy
    assert np.all((uy - ux)[inner] > 0)
    S = hjb.policy_field(v, p3, ZERO)
    assert np.all(S[inner] == 0.0)


# backward step


def test_constant_is_steady(p3):
    g = hjb.Grid.square(40)
    v = hjb.ValueFunction(g, np.where(g.active, -0.2, np.nan), 10.0)
    dt = hjb.stable_dt(g, p3)
    for _ in range(5):
        v = hjb.step_backward(v, dt, p3, ZERO)
    np.testing.assert_array_equal(v.u[g.active], -0.2)
    assert v.t == pytest.approx(10.0 - 5 * dt)


def test_short_horizon_is_pure_decay(p3):
    g = hjb.Grid.square(120)
    v = hjb.terminal_value(g, 3.0)
    dt = hjb.stable_dt(g, p3)
    n = 40
    for _ in range(n):
        v = hjb.step_backward(v, dt, p3, ZERO)
    tau = n * dt
    X, Y = np.meshgrid(g.x, g.y, indexing="ij")
    exact = -x_infinity(X, Y * math.exp(-p3.gamma * tau), 3.0)
    far = g.active & (X + Y < 0.9) & (Y > 0.05) & (X > 0.05)
    err = np.abs(v.u - exact)[far]
    assert err.max() <= 2e-3
    assert np.median(err) <= 2e-4


def test_cfl_violation(p3):
    g = hjb.Grid.square(40)
    v = hjb.terminal_value(g, 3.0)
    with pytest.raises(CFLError):
        hjb.step_backward(v, 5 * hjb.stable_dt(g, p3), p3, ZERO)


def test_hospital_source_zero_at_threshold(p3):
    c = CostSpec.hospital(1e-2, 100.0, 0.1)
    g = hjb.Grid(20, 20, y_lo=0.095, y_hi=0.105)
    src = hjb._source(g, c)
    assert np.all(src[g.y < 0.1] < 0) and np.all(src[g.y > 0.1] > 0)
    assert c.c3 * hjb.hospital_penalty(0.0) == 0.0


# full solve


def test_value_bound_and_monotone(coarse_zero):
    v, pol = coarse_zero
    vals = pol.values.astype(float)
    assert np.nanmax(-vals) <= 1 / 3 + 1e-6
    # optimal value cannot rise with more time left
    d = np.diff(vals, axis=0)
    assert np.nanmax(-d) <= 1e-6
    assert pol.times[0] == 0.0 and pol.times[-1] == pytest.approx(100.0)


def test_solve_rejects(p3):
    g = hjb.Grid.square(20)
    with pytest.raises(DomainError):
        hjb.solve(g, p3, ZERO, 0.0)
    with pytest.raises(DomainError):
        hjb.solve(g, p3, ZERO, 10.0, sigma_min=4.0)
    with pytest.raises(DomainError):
        hjb.solve(g, p3, ZERO, 10.0, stride=0)


def test_policy_stride_cap(p3):
    g = hjb.Grid.square(40)
    stats = hjb.SolveStats()
    _, pol = hjb.solve(g, p3, ZERO, 50.0, max_policy_bytes=40 * 40 * 4 * 10, stats=stats)
    assert pol.n_slices <= 11
    assert stats.stride > 1 and stats.n_steps > 10


def test_bang_bang_policy_stores_switching(coarse_zero):
    _, pol = coarse_zero
    assert pol.sigma is None and pol.switching is not None
    sl = pol.control_slice(0)
    assert set(np.unique(sl)) <= {0.0, 3.0}
    assert pol(150.0, 0.5, 0.1) == 3.0


def test_closed_loop_near_analytic(p3, s_main, coarse_zero):
    _, pol = coarse_zero
    r = hjb.synthesize_trajectory(s_main, pol, p3)
    opt = analytic.optimal_bang_bang(s_main, p3, 100.0).x_inf_achieved
    assert opt - 5e-3 <= r.x_inf <= opt + 1e-6
    assert r.J == pytest.approx(-r.x_inf, abs=1e-15)


def test_grid_convergence_order(p3, s_main):
    opt = analytic.optimal_bang_bang(s_main, p3, 100.0).x_inf_achieved
    ns = np.array([50, 100, 200])
    gaps = []
    for n in ns:
        _, pol = hjb.solve(hjb.Grid.square(int(n)), p3, ZERO, 100.0)
        gaps.append(opt - hjb.synthesize_trajectory(s_main, pol, p3).x_inf)
    gaps = np.array(gaps)
    assert np.all(gaps > 0)
    assert np.all(np.diff(gaps) < 0)
    order = -np.polyfit(np.log(ns), np.log(gaps), 1)[0]
    assert order >= 1.0


def test_dynamic_programming_consistency(p3, s_main):
    g = hjb.Grid.square(100)
    T1, T2 = 20.0, 60.0
    vA, polA = hjb.solve(g, p3, ZERO, T1 + T2)
    vB, _ = hjb.solve(g, p3, ZERO, T2)
    # first leg under the full-horizon policy, then the optimal T2 continuation
    first = integrate(s_main, polA, p3, T1)
    s1 = first.final
    tol = 2 * abs(vA.at(0.8, 0.1) - (-analytic.optimal_bang_bang(State(0.8, 0.1), p3, T1 + T2).x_inf_achieved))
    assert vA.at(s_main.x, s_main.y) <= vB.at(s1.x, s1.y) + tol
    # any other first leg is no better
    other = integrate(s_main, 3.0, p3, T1).final
    assert vA.at(s_main.x, s_main.y) <= vB.at(other.x, other.y) + tol


def test_quadratic_control_is_smooth(p3):
    g = hjb.Grid(120, 120, y_hi=0.4)
    _, pol = hjb.solve(g, p3, QUAD, 100.0)
    r = hjb.synthesize_trajectory(S_Q, pol, p3, cost=QUAD)
    sig = r.trajectory.sigma[r.trajectory.times <= 100.0]
    inner = sig[(sig > 1e-6) & (sig < 3.0 - 1e-6)]
    assert np.unique(np.round(inner, 6)).size >= 10
    base = -x_infinity(0.9, 0.1, 3.0)
    assert r.J <= base + 1e-9


def test_synthesize_constant_policies(p3):
    g = hjb.Grid(60, 60, y_hi=0.4)
    full = hjb.synthesize_trajectory(S_Q, constant_policy(g, 3.0, 50.0, p3), p3, cost=QUAD)
    assert full.trajectory.running_cost <= 1e-30  # bilinear weights sum to 1 only up to rounding
    assert full.J == pytest.approx(-x_infinity(full.trajectory.final.x, full.trajectory.final.y, 3.0))
    assert full.x_inf == pytest.approx(x_infinity(0.9, 0.1, 3.0), abs=1e-7)
    off = hjb.synthesize_trajectory(S_Q, constant_policy(g, 0.0, 50.0, p3), p3, cost=QUAD)
    assert off.trajectory.running_cost == pytest.approx(QUAD.c2 * 50.0, rel=1e-12)


def test_synthesize_grid_exit(p3):
    g = hjb.Grid(30, 30, y_lo=0.05, y_hi=0.4)
    with pytest.raises(GridExitError):
        hjb.synthesize_trajectory(State(0.9, 0.01), constant_policy(g, 3.0, 50.0, p3), p3)
    with pytest.raises(GridExitError):
        # decays below the domain under sigma = 0
        hjb.synthesize_trajectory(State(0.6, 0.06), constant_policy(g, 0.0, 50.0, p3), p3)


def test_costate_duality(p3):
    sweep = forward_backward_sweep(S_Q, p3, QUAD, 100.0)
    g = hjb.Grid(200, 200, y_hi=0.4)
    _, pol = hjb.solve(g, p3, QUAD, 100.0, store_values=True)
    tr = sweep.trajectory
    worst = 0.0
    for k in range(0, len(tr) - 1, 250):
        t = tr.times[k]
        j = pol.slice_index(t)
        u = pol.values[j].astype(float)
        ux, uy = np.gradient(u, g.dx, axis=0), np.gradient(u, g.dy, axis=1)
        gx = hjb._bilinear(ux, g.x_lo, g.y_lo, g.dx, g.dy, tr.x[k], tr.y[k])
        gy = hjb._bilinear(uy, g.x_lo, g.y_lo, g.dx, g.dy, tr.x[k], tr.y[k])
        scale = math.hypot(sweep.lambda1[k], sweep.lambda2[k])
        worst = max(worst, math.hypot(gx - sweep.lambda1[k], gy - sweep.lambda2[k]) / scale)
    assert worst <= 0.05


def test_hjb_with_floor(p3, s_main):
    g = hjb.Grid.square(100)
    _, pol = hjb.solve(g, p3, ZERO, 100.0, sigma_min=1.2)
    r = hjb.synthesize_trajectory(s_main, pol, p3)
    assert r.schedule.values.min() >= 1.2
    opt = analytic.optimal_bang_bang_floored(s_main, p3, 100.0, 1.2).x_inf_achieved
    assert abs(r.x_inf - opt) <= 1e-2


def test_grid_dump_round_trip(tmp_path, coarse_zero):
    v, _ = coarse_zero
    path = tmp_path / "u.txt"
    hjb.write_grid_dump(path, v)
    back = hjb.read_grid_dump(path)
    assert back.grid.shape == v.grid.shape and back.t == v.t
    assert back.grid.y_hi == v.grid.y_hi
    np.testing.assert_array_equal(back.u, v.u)
    lines = path.read_text().splitlines()
    assert lines[:2] == ["100", "100"]
    assert len(lines) == 7 + 100


def test_grid_dump_shape_mismatch(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("3\n3\n0\n1\n0\n1\n0\n1 2 3\n4 5 6\n")
    with pytest.raises(ValueError):
        hjb.read_grid_dump(path)
