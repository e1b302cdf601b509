"""Pontryagin necessary conditions and a forward-backward sweep solver.

Costates follow the minimization convention: ``(lambda1, lambda2)`` equal the
gradient ``(u_x, u_y)`` of the value function along the optimal path, with
terminal values ``-c1 * grad x_infinity``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .costs import (
    CostSpec,
    _ramp,
    _ramp_slope,
    running_cost,
    running_cost_dsigma,
    running_cost_dy,
)
from .errors import DomainError, SweepConvergenceError
from .long_term import x_infinity, x_infinity_gradient
from .sir_core import Params, SampledSchedule, State, Trajectory


@dataclass(frozen=True)
class AdjointState:
    lambda1: float
    lambda2: float


def hamiltonian(s: State, sigma, adj: AdjointState, p: Params, cost: CostSpec):
    g = p.gamma
    return (
        -adj.lambda1 * g * sigma * s.y * s.x
        + adj.lambda2 * g * s.y * (sigma * s.x - 1.0)
        + running_cost(s.x, s.y, sigma, p.sigma0, cost)
    )


def hamiltonian_dsigma(s: State, sigma, adj: AdjointState, p: Params, cost: CostSpec):
    return (adj.lambda2 - adj.lambda1) * p.gamma * s.y * s.x + running_cost_dsigma(
        sigma, p.sigma0, cost
    )


def adjoint_derivative(s: State, adj: AdjointState, sigma, p: Params, cost: CostSpec):
    """``(dlambda1/dt, dlambda2/dt) = (-dH/dx, -dH/dy)``."""
    diff = (adj.lambda1 - adj.lambda2) * p.gamma * sigma
    return (
        diff * s.y,
        diff * s.x + adj.lambda2 * p.gamma - running_cost_dy(s.y, cost),
    )


def terminal_adjoint(s_T: State, sigma0: float, scale: float = 1.0) -> AdjointState:
    """Costates at the horizon: ``-scale * (dx_inf/dx, dx_inf/dy)``.

    Raises ``SingularityError`` near the herd-immunity corner.
    """
    grad = x_infinity_gradient(s_T.x, s_T.y, sigma0)
    return AdjointState(-scale * grad.d_dx, -scale * grad.d_dy)


def pointwise_optimal_sigma(s: State, adj: AdjointState, p: Params, cost: CostSpec, sigma_min=0.0):
    """Minimizer of the Hamiltonian over ``[sigma_min, sigma0]``.

    Clamped quadratic minimizer when ``c2 > 0``, bang-bang switching on the
    sign of ``lambda2 - lambda1`` otherwise. Broadcasts over array fields.
    """
    gap = np.asarray(adj.lambda2) - np.asarray(adj.lambda1)
    s0 = p.sigma0
    if cost.is_bang_bang:
        out = np.where(gap > 0, float(sigma_min), s0)
    else:
        out = np.clip(s0 * (1.0 - s0 * p.gamma * s.x * s.y * gap / (2.0 * cost.c2)), sigma_min, s0)
    return float(out) if out.ndim == 0 else out


@numba.njit(cache=True)
def _forward_pass(x0, y0, sig, h, gamma, sigma0, c2, c3, y_max):
    n = sig.size - 1
    x = np.empty(n + 1)
    y = np.empty(n + 1)
    c = np.empty(n + 1)
    x[0], y[0], c[0] = x0, y0, 0.0
    for k in range(n):
        sa = sig[k]
        sb = sig[k + 1]
        sm = 0.5 * (sa + sb)
        xa, ya = x[k], y[k]
        acc_x = 0.0
        acc_y = 0.0
        acc_c = 0.0
        kx = 0.0
        ky = 0.0
        for stage in range(4):
            if stage == 0:
                s, w = sa, 1.0
                xs, ys = xa, ya
            elif stage == 3:
                s, w = sb, 1.0
                xs, ys = xa + h * kx, ya + h * ky
            else:
                s, w = sm, 2.0
                xs, ys = xa + 0.5 * h * kx, ya + 0.5 * h * ky
            inc = gamma * s * xs * ys
            kx = -inc
            ky = inc - gamma * ys
            q = 1.0 - s / sigma0
            kc = c2 * q * q
            if c3 != 0.0:
                kc += c3 * _ramp(ys - y_max)
            acc_x += w * kx
            acc_y += w * ky
            acc_c += w * kc
        x[k + 1] = xa + h / 6.0 * acc_x
        y[k + 1] = ya + h / 6.0 * acc_y
        c[k + 1] = c[k] + h / 6.0 * acc_c
    return x, y, c


@numba.njit(cache=True)
def _backward_pass(x, y, sig, h, gamma, c3, y_max, l1_T, l2_T):
    n = sig.size - 1
    l1 = np.empty(n + 1)
    l2 = np.empty(n + 1)
    l1[n], l2[n] = l1_T, l2_T
    for k in range(n - 1, -1, -1):
        # state at the step midpoint from cubic Hermite interpolation
        fa = gamma * sig[k] * x[k] * y[k]
        fb = gamma * sig[k + 1] * x[k + 1] * y[k + 1]
        fxa, fya = -fa, fa - gamma * y[k]
        fxb, fyb = -fb, fb - gamma * y[k + 1]
        xm = 0.5 * (x[k] + x[k + 1]) + h / 8.0 * (fxa - fxb)
        ym = 0.5 * (y[k] + y[k + 1]) + h / 8.0 * (fya - fyb)
        sm = 0.5 * (sig[k] + sig[k + 1])
        a1, a2 = l1[k + 1], l2[k + 1]
        acc1 = 0.0
        acc2 = 0.0
        b1, b2 = a1, a2
        d1 = 0.0
        d2 = 0.0
        for stage in range(4):
            if stage == 0:
                s, xs, ys, w = sig[k + 1], x[k + 1], y[k + 1], 1.0
                b1, b2 = a1, a2
            elif stage == 3:
                s, xs, ys, w = sig[k], x[k], y[k], 1.0
                b1, b2 = a1 - h * d1, a2 - h * d2
            else:
                s, xs, ys, w = sm, xm, ym, 2.0
                b1, b2 = a1 - 0.5 * h * d1, a2 - 0.5 * h * d2
            diff = (b1 - b2) * gamma * s
            d1 = diff * ys
            d2 = diff * xs + b2 * gamma
            if c3 != 0.0:
                d2 -= c3 * _ramp_slope(ys - y_max)
            acc1 += w * d1
            acc2 += w * d2
        l1[k] = a1 - h / 6.0 * acc1
        l2[k] = a2 - h / 6.0 * acc2
    return l1, l2


@dataclass(frozen=True, eq=False)
class SweepResult:
    trajectory: Trajectory
    schedule: SampledSchedule
    lambda1: np.ndarray
    lambda2: np.ndarray
    J: float
    x_inf: float
    iterations: int
    objective_history: list = field(default_factory=list)
    residual_history: list = field(default_factory=list)
    monotonicity_violations: list = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return self.trajectory.times

    @property
    def adjoints(self) -> tuple:
        return self.lambda1, self.lambda2

    def adjoint(self, i: int) -> AdjointState:
        return AdjointState(float(self.lambda1[i]), float(self.lambda2[i]))

    def __iter__(self):
        # unpacks as (trajectory, schedule, (lambda1, lambda2))
        return iter((self.trajectory, self.schedule, self.adjoints))


UPHILL_SLACK = 1e-10
MONOTONE_AFTER = 5


def _anderson_step(sig, f, hist_x, hist_f, w):
    """Type-II Anderson mixing over the stored iterates; plain relaxation without history."""
    if len(hist_x) < 2:
        return sig + w * f
    dX = np.diff(np.array(hist_x), axis=0).T
    dF = np.diff(np.array(hist_f), axis=0).T
    coef, *_ = np.linalg.lstsq(dF, f, rcond=None)
    return sig + w * f - (dX + w * dF) @ coef


def forward_backward_sweep(
    s0: State,
    p: Params,
    cost: CostSpec,
    T: float,
    dt: float = 0.01,
    *,
    omega: float = 0.3,
    max_iter: int = 500,
    tol: float = 1e-6,
    depth: int = 5,
    sigma_min: float = 0.0,
    initial=None,
) -> SweepResult:
    """Solve the Pontryagin boundary-value problem by relaxed forward-backward sweeps.

    Each iteration integrates the state forward under the current control,
    the costates backward from their terminal values, and moves the control
    toward the pointwise Hamiltonian minimizer ``sigma_hat``. The move is a
    relaxation with weight ``omega`` accelerated by Anderson mixing over the
    last ``depth`` iterates. A step that raises the objective is rejected:
    the mixing history is cleared, ``omega`` is halved and a plain relaxed
    step is taken instead.

    Converged when ``max |sigma_hat - sigma| <= tol * sigma0`` on the mesh,
    which implies the relaxed update is below the same bound.

    Parameters
    ----------
    initial : array_like, optional
        Starting control on the mesh ``T / n * arange(n + 1)``; defaults to
        ``sigma0`` everywhere.
    depth : int
        Anderson history length; 0 gives plain relaxation.
    sigma_min : float
        Lower bound on the control.

    Raises
    ------
    SweepConvergenceError
        After ``max_iter`` iterations, with the residual history attached.

    Notes
    -----
    For ``c2 = 0`` the bang-bang update is only a heuristic and may fail to
    converge; the analytic solution is authoritative there.
    """
    n = max(1, math.ceil(T / dt - 1e-9))
    h = T / n
    times = h * np.arange(n + 1)
    s_hi = p.sigma0
    if not 0.0 <= sigma_min <= s_hi:
        raise DomainError(f"sigma_min must lie in [0, {s_hi}]")
    lo = sigma_min
    sig = np.full(n + 1, s_hi) if initial is None else np.clip(np.array(initial, dtype=float), lo, s_hi)
    if sig.shape != (n + 1,):
        raise ValueError(f"initial control must have {n + 1} mesh values")
    c3 = cost.hospital_weight

    def forward(sig):
        x, y, c = _forward_pass(s0.x, s0.y, sig, h, p.gamma, s_hi, cost.c2, c3, cost.y_max)
        J = -cost.c1 * float(x_infinity(x[-1], y[-1], s_hi)) + c[-1]
        return x, y, c, J

    def backward(x, y, sig):
        adj_T = terminal_adjoint(State(x[-1], y[-1]), s_hi, cost.c1)
        return _backward_pass(x, y, sig, h, p.gamma, c3, cost.y_max, adj_T.lambda1, adj_T.lambda2)

    J_hist, res_hist, violations = [], [], []
    hist_x, hist_f = [], []
    w = omega
    x, y, c, J = forward(sig)
    J_hist.append(J)
    for it in range(1, max_iter + 1):
        l1, l2 = backward(x, y, sig)
        f = _pointwise_on_mesh(x, y, l1, l2, p, cost, lo) - sig
        res = float(np.max(np.abs(f)))
        res_hist.append(res)
        if res <= tol * s_hi:
            break
        hist_x = (hist_x + [sig.copy()])[-(depth + 1):] if depth else []
        hist_f = (hist_f + [f])[-(depth + 1):] if depth else []
        cand = np.clip(_anderson_step(sig, f, hist_x, hist_f, w), lo, s_hi)
        fwd = forward(cand)
        if fwd[3] > J + UPHILL_SLACK and it > MONOTONE_AFTER:
            hist_x, hist_f = [], []
            w = max(0.5 * w, 1e-3)
            cand = np.clip(sig + w * f, lo, s_hi)
            fwd = forward(cand)
            if fwd[3] > J + UPHILL_SLACK:
                violations.append((it, fwd[3] - J))
        sig = cand
        x, y, c, J = fwd
        J_hist.append(J)
    else:
        raise SweepConvergenceError(
            f"sweep did not converge in {max_iter} iterations (last residual {res_hist[-1]:.3e})",
            res_hist,
        )

    traj = Trajectory(times, x, y, sig, c)
    return SweepResult(
        trajectory=traj,
        schedule=SampledSchedule(sig, h, s_hi, sigma_floor=lo),
        lambda1=l1,
        lambda2=l2,
        J=J,
        x_inf=float(x_infinity(x[-1], y[-1], s_hi)),
        iterations=it,
        objective_history=J_hist,
        residual_history=res_hist,
        monotonicity_violations=violations,
    )


class _MeshState:
    """Array-valued stand-in for :class:`State` on the sweep mesh."""

    __slots__ = ("x", "y")

    def __init__(self, x, y):
        self.x, self.y = x, y


def _pointwise_on_mesh(x, y, l1, l2, p, cost, sigma_min=0.0):
    return pointwise_optimal_sigma(_MeshState(x, y), AdjointState(l1, l2), p, cost, sigma_min)
