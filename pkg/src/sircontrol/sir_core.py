"""Controlled SIR dynamics and fixed-step time integration.

The state is the pair (x, y) of susceptible and infected fractions; the
recovered fraction z = 1 - x - y is never stored. The contact rate is
``gamma * sigma(t)`` where ``sigma(t)`` is the control, bounded above by the
basic reproduction number ``sigma0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError, IntegrationError

STATE_TOL = 1e-9


def check_state(x, y, tol=STATE_TOL):
    """Raise ``DomainError`` unless ``x >= 0, y >= 0, x + y <= 1`` up to ``tol``."""
    if not (x >= -tol and y >= -tol and x + y <= 1.0 + tol):
        raise DomainError(f"state ({x!r}, {y!r}) outside the simplex x, y >= 0, x + y <= 1")


@dataclass(frozen=True)
class Params:
    """Disease constants: recovery rate ``gamma`` (1/day) and ``sigma0``."""

    gamma: float
    sigma0: float

    def __post_init__(self):
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise DomainError(f"gamma must be positive, got {self.gamma!r}")
        if not (self.sigma0 > 0 and math.isfinite(self.sigma0)):
            raise DomainError(f"sigma0 must be positive, got {self.sigma0!r}")

    @property
    def beta(self) -> float:
        return self.gamma * self.sigma0

    @classmethod
    def from_beta(cls, beta: float, gamma: float) -> "Params":
        return cls(gamma=gamma, sigma0=beta / gamma)


@dataclass(frozen=True)
class State:
    x: float
    y: float

    def __post_init__(self):
        check_state(self.x, self.y)

    @property
    def z(self) -> float:
        return 1.0 - self.x - self.y


def _check_sigma(sigma, sigma0, floor=0.0):
    if not (floor - 1e-12 <= sigma <= sigma0 + 1e-12):
        raise DomainError(f"control {sigma!r} outside [{floor}, {sigma0}]")


class ControlSchedule:
    """Open-loop control ``t -> sigma``; equals ``sigma0`` after the horizon."""

    sigma0: float
    horizon: float
    sigma_floor: float

    def __call__(self, t: float) -> float:
        raise NotImplementedError

    def breakpoints(self) -> tuple[float, ...]:
        """Times where the schedule may be discontinuous."""
        return (self.horizon,)

    def sample(self, times) -> np.ndarray:
        return np.array([self(float(t)) for t in np.atleast_1d(times)])


@dataclass(frozen=True)
class PiecewiseConstantSchedule(ControlSchedule):
    """Segments ``(t_start, t_end, sigma)``; right-continuous at every switch.

    Times inside ``[0, horizon]`` not covered by a segment get ``sigma0``.
    """

    segments: tuple[tuple[float, float, float], ...]
    sigma0: float
    horizon: float
    sigma_floor: float = 0.0

    def __post_init__(self):
        segs = tuple((float(a), float(b), float(s)) for a, b, s in self.segments)
        object.__setattr__(self, "segments", segs)
        prev_end = -math.inf
        for a, b, s in segs:
            if not a < b:
                raise DomainError(f"empty or reversed segment ({a}, {b})")
            if a < prev_end - 1e-12:
                raise DomainError("segments must be sorted and non-overlapping")
            if b > self.horizon + 1e-12:
                raise DomainError(f"segment end {b} beyond horizon {self.horizon}")
            _check_sigma(s, self.sigma0, self.sigma_floor)
            prev_end = b
        object.__setattr__(self, "_starts", np.array([a for a, _, _ in segs]))

    def __call__(self, t: float) -> float:
        if t >= self.horizon or t < 0:
            return self.sigma0
        k = int(np.searchsorted(self._starts, t, side="right")) - 1
        if k >= 0:
            a, b, s = self.segments[k]
            if t < b:
                return s
        return self.sigma0

    def breakpoints(self):
        pts = {self.horizon}
        for a, b, _ in self.segments:
            pts.update((a, b))
        return tuple(sorted(pts))

    @classmethod
    def constant(cls, sigma, sigma0, horizon, sigma_floor=0.0):
        return cls(((0.0, horizon, sigma),), sigma0, horizon, sigma_floor)

    @classmethod
    def single_switch(cls, t_star, horizon, sigma0, sigma_low=0.0):
        """``sigma0`` on ``[0, t_star)``, ``sigma_low`` on ``[t_star, horizon]``."""
        segs = []
        if t_star > 0:
            segs.append((0.0, t_star, sigma0))
        if t_star < horizon:
            segs.append((t_star, horizon, sigma_low))
        return cls(tuple(segs), sigma0, horizon, min(sigma_low, sigma0))


@dataclass(frozen=True, eq=False)
class SampledSchedule(ControlSchedule):
    """Uniform samples of sigma with linear interpolation between them."""

    values: np.ndarray
    spacing: float
    sigma0: float
    sigma_floor: float = 0.0
    start: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise DomainError("need at least two control samples")
        if not self.spacing > 0:
            raise DomainError("sample spacing must be positive")
        if v.min() < self.sigma_floor - 1e-12 or v.max() > self.sigma0 + 1e-12:
            raise DomainError(f"samples outside [{self.sigma_floor}, {self.sigma0}]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def horizon(self) -> float:
        return self.start + self.spacing * (self.values.size - 1)

    @property
    def times(self) -> np.ndarray:
        return self.start + self.spacing * np.arange(self.values.size)

    def __call__(self, t: float) -> float:
        if t > self.horizon or t < self.start:
            return self.sigma0
        s = (t - self.start) / self.spacing
        k = min(int(s), self.values.size - 2)
        w = s - k
        return float((1.0 - w) * self.values[k] + w * self.values[k + 1])


FeedbackLaw = Callable[[float, float, float], float]


def as_feedback(control, sigma0: float) -> FeedbackLaw:
    """Normalize a schedule, constant or ``(t, x, y)`` callable to a feedback law."""
    if isinstance(control, ControlSchedule):
        return lambda t, x, y: control(t)
    if isinstance(control, (int, float)):
        s = float(control)
        _check_sigma(s, sigma0)
        return lambda t, x, y: s
    if callable(control):
        return control
    raise TypeError(f"unsupported control {control!r}")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled solution. ``cost`` is the cumulative running cost, if tracked."""

    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    sigma: np.ndarray
    cost: np.ndarray | None = None

    def __post_init__(self):
        for name in ("times", "x", "y", "sigma", "cost"):
            a = getattr(self, name)
            if a is not None:
                a = np.asarray(a, dtype=float)
                a.setflags(write=False)
                object.__setattr__(self, name, a)
        n = self.times.size
        if any(a.size != n for a in (self.x, self.y, self.sigma)):
            raise ValueError("trajectory arrays must have equal length")
        if n > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("trajectory times must be strictly increasing")

    def __len__(self):
        return self.times.size

    @property
    def z(self) -> np.ndarray:
        return 1.0 - self.x - self.y

    @property
    def final(self) -> State:
        return State(float(self.x[-1]), float(self.y[-1]))

    def state(self, i: int) -> State:
        return State(float(self.x[i]), float(self.y[i]))

    @property
    def running_cost(self) -> float:
        return 0.0 if self.cost is None else float(self.cost[-1])


def derivative(s: State, sigma: float, p: Params, tol: float = STATE_TOL):
    """Right-hand side ``(dx/dt, dy/dt)`` of the controlled SIR system."""
    _check_sigma(sigma, p.sigma0)
    check_state(s.x, s.y, tol)
    inc = p.gamma * sigma * s.y * s.x
    return -inc, inc - p.gamma * s.y


def _rk4(law, t, t_next, x, y, c, gamma, sigma0, cost_fn):
    # last stage samples just inside the step so a switch at t_next is not seen early
    h = t_next - t
    t_end = math.nextafter(t_next, t)
    th = t + 0.5 * h

    def f(tt, xx, yy):
        s = law(tt, xx, yy)
        if not (-1e-12 <= s <= sigma0 + 1e-12):
            raise DomainError(f"control {s!r} outside [0, {sigma0}] at t={tt}")
        inc = gamma * s * xx * yy
        dc = cost_fn(xx, yy, s) if cost_fn is not None else 0.0
        return -inc, inc - gamma * yy, dc

    k1x, k1y, k1c = f(t, x, y)
    k2x, k2y, k2c = f(th, x + 0.5 * h * k1x, y + 0.5 * h * k1y)
    k3x, k3y, k3c = f(th, x + 0.5 * h * k2x, y + 0.5 * h * k2y)
    k4x, k4y, k4c = f(t_end, x + h * k3x, y + h * k3y)
    return (
        x + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x),
        y + h / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y),
        c + h / 6.0 * (k1c + 2 * k2c + 2 * k3c + k4c),
    )


def integrate(
    s0: State,
    control,
    p: Params,
    t_end: float,
    dt: float = 0.01,
    *,
    running_cost: Callable[[float, float, float], float] | None = None,
    t0: float = 0.0,
    tol: float = STATE_TOL,
) -> Trajectory:
    """Integrate the controlled system from ``t0`` to ``t_end`` with classical RK4.

    ``control`` is a :class:`ControlSchedule`, a constant, or a feedback
    callable ``(t, x, y) -> sigma``. Schedule breakpoints are hit exactly: each
    smooth stretch is split into equal steps no longer than ``dt``.
    ``running_cost(x, y, sigma)``, when given, is accumulated alongside the
    state and returned as ``Trajectory.cost``.
    """
    if not dt > 0:
        raise DomainError("dt must be positive")
    if not t_end > t0:
        raise DomainError("t_end must exceed t0")
    check_state(s0.x, s0.y, tol)
    law = as_feedback(control, p.sigma0)
    bps = control.breakpoints() if isinstance(control, ControlSchedule) else ()
    nodes = [t0, *sorted(b for b in bps if t0 < b < t_end), t_end]

    g, sig0 = p.gamma, p.sigma0
    x, y, c = float(s0.x), float(s0.y), 0.0
    times, xs, ys, cs = [t0], [x], [y], [0.0]
    for a, b in zip(nodes[:-1], nodes[1:]):
        n = max(1, math.ceil((b - a) / dt - 1e-9))
        h = (b - a) / n
        for k in range(n):
            t = a + k * h
            t_next = b if k == n - 1 else a + (k + 1) * h
            x, y, c = _rk4(law, t, t_next, x, y, c, g, sig0, running_cost)
            if not (x >= -tol and y >= -tol and x + y <= 1.0 + tol):
                raise IntegrationError(
                    f"state ({x:.3e}, {y:.3e}) left the simplex at t={t_next:.6g}; reduce dt"
                )
            times.append(t_next)
            xs.append(x)
            ys.append(y)
            cs.append(c)
    sig = [law(t, xx, yy) for t, xx, yy in zip(times, xs, ys)]
    return Trajectory(
        np.array(times), np.array(xs), np.array(ys), np.array(sig),
        np.array(cs) if running_cost is not None else None,
    )


def advance(x: float, y: float, sigma: float, p: Params, duration: float, n_steps: int):
    """State after ``duration`` days at constant ``sigma``, using ``n_steps`` RK4 steps.

    No samples are recorded. With a fixed step count the result is a smooth
    function of ``duration``, which 1-D optimizers over switch times rely on.
    """
    if duration <= 0:
        return x, y
    h = duration / n_steps
    b = p.gamma * sigma
    g = p.gamma
    for _ in range(n_steps):
        k1 = b * x * y
        k1y = k1 - g * y
        x2, y2 = x - 0.5 * h * k1, y + 0.5 * h * k1y
        k2 = b * x2 * y2
        k2y = k2 - g * y2
        x3, y3 = x - 0.5 * h * k2, y + 0.5 * h * k2y
        k3 = b * x3 * y3
        k3y = k3 - g * y3
        x4, y4 = x - h * k3, y + h * k3y
        k4 = b * x4 * y4
        k4y = k4 - g * y4
        x = x - h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        y = y + h / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y)
    return x, y


@dataclass(frozen=True, eq=False)
class BatchResult:
    times: np.ndarray
    x: np.ndarray
    y: np.ndarray


def integrate_batch(
    x0,
    y0,
    sigma_fn: Callable[[float], np.ndarray],
    p: Params,
    t_end: float,
    dt: float,
    record: bool = False,
) -> BatchResult:
    """Integrate many open-loop trajectories at once with RK4.

    ``sigma_fn(t)`` returns one control value per trajectory and is held
    constant over each step (evaluated at the step start), so control switches
    must fall on the step grid ``k * t_end / n``. With ``record`` the result
    holds arrays of shape ``(n + 1, batch)``; otherwise only the final states.
    """
    n = max(1, round(t_end / dt))
    h = t_end / n
    x = np.array(x0, dtype=float, copy=True)
    y = np.array(y0, dtype=float, copy=True)
    x, y = np.broadcast_arrays(x, y)
    x, y = x.copy(), y.copy()
    g = p.gamma
    if record:
        X = np.empty((n + 1,) + x.shape)
        Y = np.empty_like(X)
        X[0], Y[0] = x, y
    for k in range(n):
        b = g * np.asarray(sigma_fn(k * h), dtype=float)
        k1 = b * x * y
        k1y = k1 - g * y
        x2, y2 = x - 0.5 * h * k1, y + 0.5 * h * k1y
        k2 = b * x2 * y2
        k2y = k2 - g * y2
        x3, y3 = x - 0.5 * h * k2, y + 0.5 * h * k2y
        k3 = b * x3 * y3
        k3y = k3 - g * y3
        x4, y4 = x - h * k3, y + h * k3y
        k4 = b * x4 * y4
        k4y = k4 - g * y4
        x = x - h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        y = y + h / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y)
        if record:
            X[k + 1], Y[k + 1] = x, y
    times = h * np.arange(n + 1)
    if record:
        return BatchResult(times, X, Y)
    return BatchResult(times, x, y)


def piecewise_sigma_fn(levels: np.ndarray, horizon: float) -> Callable[[float], np.ndarray]:
    """Vectorized control for ``integrate_batch``: ``levels[b, k]`` on segment k of trajectory b.

    Segments split ``[0, horizon]`` uniformly. Integrate no further than the
    horizon: the last segment's level is reused past it.
    """
    levels = np.asarray(levels, dtype=float)
    nseg = levels.shape[1]
    seg_len = horizon / nseg

    def fn(t):
        k = min(int(t / seg_len + 1e-9), nseg - 1)
        return levels[:, k]

    return fn
