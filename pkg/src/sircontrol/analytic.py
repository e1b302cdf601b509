"""Exact optimal controls when intervention carries no running cost.

With a finite horizon ``T`` the optimum is a single switch: no control until
``t_star``, then full control (``sigma = 0``) until ``T``. The switch time
balances the remaining intervention window against the current susceptible
fraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize

from .errors import DomainError
from .long_term import mu, x_infinity
from .sir_core import (
    Params,
    PiecewiseConstantSchedule,
    State,
    Trajectory,
    advance,
    integrate,
)

GOLDEN_TOL = 1e-6
SWITCH_TOL = 1e-9


@dataclass(frozen=True)
class BangBangSolution:
    """Single-switch control ``sigma_high`` on ``[0, t_star)``, ``sigma_low`` after.

    ``degenerate`` marks problems where the switch time does not matter
    (``sigma_low == sigma_high``).
    """

    t_star: float
    sigma_high: float
    sigma_low: float
    T: float
    x_inf_achieved: float
    x_T: float
    y_T: float
    degenerate: bool = False

    def schedule(self) -> PiecewiseConstantSchedule:
        return PiecewiseConstantSchedule.single_switch(
            self.t_star, self.T, self.sigma_high, self.sigma_low
        )


@lru_cache(maxsize=32)
def _uncontrolled(s0: State, p: Params, T: float, dt: float) -> Trajectory:
    return integrate(s0, p.sigma0, p, T, dt)


def _state_at(path: Trajectory, p: Params, t: float):
    """Uncontrolled state at ``t``: nearest stored sample below, plus one partial RK4 step."""
    k = int(np.searchsorted(path.times, t, side="right")) - 1
    k = min(max(k, 0), len(path) - 1)
    return advance(float(path.x[k]), float(path.y[k]), p.sigma0, p, t - path.times[k], 1)


def drop_condition(s0: State, p: Params, T: float) -> bool:
    """True when immediate full control is optimal (``t_star = 0``)."""
    return s0.x <= 1.0 / (p.sigma0 * (1.0 - math.exp(-p.gamma * T)))


def switch_residual(x_t: float, t_star: float, p: Params, T: float) -> float:
    """``x(t*) sigma0 (1 - exp(-gamma (T - t*))) - 1``; zero at an interior optimum."""
    return x_t * p.sigma0 * (1.0 - math.exp(-p.gamma * (T - t_star))) - 1.0


def switching_time(s0: State, p: Params, T: float, dt: float = 0.01) -> float:
    """Optimal switch time for the no-cost problem on ``[0, T]``.

    Zero when the drop condition holds; otherwise the unique root of the
    switch residual along the uncontrolled trajectory, bracketed on
    ``[0, T]`` and found by bisection.
    """
    if not T > 0:
        raise DomainError("horizon T must be positive")
    if s0.y == 0 or drop_condition(s0, p, T):
        return 0.0
    path = _uncontrolled(s0, p, float(T), dt)

    def g(t):
        x, _ = _state_at(path, p, t)
        return switch_residual(x, t, p, T)

    lo, hi = g(0.0), g(T)
    assert lo > 0 > hi, f"switch residual not bracketed: g(0)={lo}, g(T)={hi}"
    return optimize.bisect(g, 0.0, T, xtol=SWITCH_TOL, maxiter=200)


def optimal_bang_bang(s0: State, p: Params, T: float, dt: float = 0.01) -> BangBangSolution:
    """Unique optimal control for the no-cost problem, with its terminal state.

    The ``sigma = 0`` arc is solved exactly: ``x`` frozen, ``y`` decaying
    like ``exp(-gamma (T - t_star))``.
    """
    t_star = switching_time(s0, p, T, dt)
    if t_star > 0:
        x_s, y_s = _state_at(_uncontrolled(s0, p, float(T), dt), p, t_star)
    else:
        x_s, y_s = s0.x, s0.y
    y_T = y_s * math.exp(-p.gamma * (T - t_star))
    return BangBangSolution(
        t_star=t_star,
        sigma_high=p.sigma0,
        sigma_low=0.0,
        T=T,
        x_inf_achieved=float(x_infinity(x_s, y_T, p.sigma0)),
        x_T=x_s,
        y_T=y_T,
    )


def _golden_max(f, a, b, tol):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    cands = [(fc, c), (fd, d), (f(a), a), (f(b), b)]
    return max(cands)[1]


def optimal_bang_bang_floored(
    s0: State, p: Params, T: float, sigma_min: float, dt: float = 0.01
) -> BangBangSolution:
    """Best single-switch control when ``sigma`` may not drop below ``sigma_min``.

    No switching equation is available here, so ``t_star`` maximizes the
    terminal ``x_infinity`` by golden-section search over ``[0, T]``. The
    low arc is exact for ``sigma_min = 0`` and otherwise integrated with a
    fixed number of RK4 steps, so the objective is smooth in ``t_star``.
    """
    if not 0.0 <= sigma_min <= p.sigma0:
        raise DomainError(f"sigma_min must lie in [0, {p.sigma0}]")
    if sigma_min >= p.sigma0:
        x_inf = float(x_infinity(s0.x, s0.y, p.sigma0))
        x_T, y_T = advance(s0.x, s0.y, p.sigma0, p, T, max(1, math.ceil(T / dt)))
        return BangBangSolution(T, p.sigma0, p.sigma0, T, x_inf, x_T, y_T, degenerate=True)

    path = _uncontrolled(s0, p, float(T), dt)
    n_low = max(1, math.ceil(T / dt))

    def terminal(t_star):
        x_s, y_s = _state_at(path, p, t_star) if t_star > 0 else (s0.x, s0.y)
        if sigma_min == 0.0:
            return x_s, y_s * math.exp(-p.gamma * (T - t_star))
        return advance(x_s, y_s, sigma_min, p, T - t_star, n_low)

    def objective(t_star):
        # maximizing mu(T) is equivalent and better conditioned than x_inf itself
        return mu(*terminal(t_star), p.sigma0)

    t_star = _golden_max(objective, 0.0, T, GOLDEN_TOL)
    x_T, y_T = terminal(t_star)
    return BangBangSolution(
        t_star=t_star,
        sigma_high=p.sigma0,
        sigma_low=sigma_min,
        T=T,
        x_inf_achieved=float(x_infinity(x_T, y_T, p.sigma0)),
        x_T=x_T,
        y_T=y_T,
    )


def objective_integral(sol: BangBangSolution, s0: State, p: Params, dt: float = 0.01) -> float:
    """``int_0^T y (sigma0 - sigma) dt`` for a no-floor switch solution, in closed form."""
    if sol.sigma_low != 0.0:
        raise DomainError("closed form holds only for sigma_low = 0")
    if sol.t_star > 0:
        _, y_s = _state_at(_uncontrolled(s0, p, float(sol.T), dt), p, sol.t_star)
    else:
        y_s = s0.y
    return p.sigma0 / p.gamma * y_s * (1.0 - math.exp(-p.gamma * (sol.T - sol.t_star)))


def objective_integral_slope(s0: State, p: Params, T: float, t_star: float, dt: float = 0.01):
    """Derivative of the objective integral with respect to the switch time."""
    x_s, y_s = _state_at(_uncontrolled(s0, p, float(T), dt), p, t_star)
    return p.sigma0 * y_s * (p.sigma0 * x_s * (1.0 - math.exp(-p.gamma * (T - t_star))) - 1.0)


def constant_eradication_sigma(s0: State, sigma0: float) -> float:
    """Constant control that drives the epidemic exactly to ``x_inf = 1/sigma0``.

    Solved by bisection on ``x_infinity(x0, y0, s) - 1/sigma0``, which is
    decreasing in ``s``.
    """
    if s0.x < 1.0 / sigma0:
        raise DomainError(
            "constant eradication control needs x0 >= 1/sigma0; below it sigma = 0 is optimal"
        )
    target = 1.0 / sigma0

    def h(s):
        return float(x_infinity(s0.x, s0.y, s)) - target

    lo, hi = 1e-6, sigma0 - 1e-6
    if h(hi) >= 0:
        return hi
    return optimize.bisect(h, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


@dataclass(frozen=True)
class ThresholdFeedback:
    """State feedback: ``sigma_high`` while ``x > threshold``, ``sigma_low`` otherwise."""

    threshold: float
    sigma_high: float
    sigma_low: float = 0.0

    def __call__(self, t: float, x: float, y: float) -> float:
        return self.sigma_high if x > self.threshold else self.sigma_low


def infinite_time_bang_bang(s0: State, p: Params) -> ThresholdFeedback:
    """Feedback that runs free until herd immunity, then suppresses contact forever."""
    if s0.x < 1.0 / p.sigma0:
        raise DomainError("infinite-time bang-bang control needs x0 >= 1/sigma0")
    return ThresholdFeedback(threshold=1.0 / p.sigma0, sigma_high=p.sigma0)
