"""Grid solver for the Hamilton-Jacobi-Bellman equation of the control problem.

The value function ``u(x, y, t)`` is marched backward from
``u(., ., T) = -c1 * x_infinity`` with

    u_tau = min_{0 <= sigma <= sigma0} [f(x, y, sigma) . grad u + L]

in backward time ``tau = T - t``, where ``f = (-g s x y, g s x y - g y)`` is
the SIR vector field. Derivatives are upwinded per control value: ``f_x`` is
never positive, and ``f_y`` changes sign at ``sigma = 1/x``, so the control
interval is split there and each piece is minimized in closed form.
Spatial derivatives are second-order ENO one-sided differences that drop to
first order at the domain edge and next to masked cells; time stepping is
the two-stage strong-stability-preserving Runge-Kutta method.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numba
import numpy as np

from .costs import CostSpec, hospital_penalty  # noqa: F401  (re-exported)
from .costs import running_cost as _running_cost
from .errors import CFLError, DomainError, GridExitError
from .long_term import x_infinity
from .sir_core import Params, SampledSchedule, State, Trajectory, integrate

DEFAULT_EPS = 1e-4
DEFAULT_CFL = 0.45
MASK_MARGIN = 4
CORNER_GUARD = 1e-8
MAX_POLICY_BYTES = 1 << 30


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform cell-centered grid on ``[x_lo, x_hi] x [y_lo, y_hi]``.

    Cells whose centers lie more than ``margin`` cell diagonals beyond the
    simplex edge ``x + y = 1`` are masked out. The thin band of retained
    exterior cells gives cells on the edge a full upwind stencil; the flow
    points into the simplex there, so exterior values never feed back.
    """

    nx: int
    ny: int
    x_lo: float = DEFAULT_EPS
    x_hi: float = 1.0
    y_lo: float = DEFAULT_EPS
    y_hi: float = 1.0
    margin: int = MASK_MARGIN

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise DomainError("grid needs at least 3 cells per axis")
        if not (0.0 <= self.x_lo < self.x_hi <= 1.0 and 0.0 <= self.y_lo < self.y_hi <= 1.0):
            raise DomainError("grid domain must be a rectangle inside [0, 1]^2")
        if self.margin < 0:
            raise DomainError("mask margin must be non-negative")
        x = self.x_lo + (np.arange(self.nx) + 0.5) * self.dx
        y = self.y_lo + (np.arange(self.ny) + 0.5) * self.dy
        active = (x[:, None] + y[None, :]) <= 1.0 + self.margin * max(self.dx, self.dy)
        for a in (x, y, active):
            a.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        jmax = active.sum(axis=1) - 1
        jmax.setflags(write=False)
        object.__setattr__(self, "active", active)
        object.__setattr__(self, "jmax", jmax)

    @classmethod
    def square(cls, n: int, **kw) -> "Grid":
        return cls(n, n, **kw)

    @property
    def dx(self) -> float:
        return (self.x_hi - self.x_lo) / self.nx

    @property
    def dy(self) -> float:
        return (self.y_hi - self.y_lo) / self.ny

    @property
    def mask(self) -> np.ndarray:
        """True for excluded cells."""
        return ~self.active

    @property
    def shape(self) -> tuple[int, int]:
        return self.nx, self.ny

    def contains(self, x: float, y: float) -> bool:
        return self.x_lo <= x <= self.x_hi and self.y_lo <= y <= self.y_hi


@dataclass(frozen=True, eq=False)
class ValueFunction:
    """Cell values ``u`` at time ``t``; masked cells hold NaN."""

    grid: Grid
    u: np.ndarray
    t: float

    def gradient(self):
        """Centered-difference ``(u_x, u_y)`` for diagnostics (NaN next to masked cells)."""
        ux = np.gradient(self.u, self.grid.dx, axis=0)
        uy = np.gradient(self.u, self.grid.dy, axis=1)
        return ux, uy

    def at(self, x: float, y: float) -> float:
        return float(_bilinear(self.u, self.grid.x_lo, self.grid.y_lo, self.grid.dx, self.grid.dy, x, y))


@dataclass(frozen=True, eq=False)
class FeedbackPolicy:
    """Feedback control on the grid at stored times ``times`` (ascending).

    Holds either control slices ``sigma`` or, for bang-bang problems, slices
    of the switching function ``u_y - u_x``. The control is interpolated
    bilinearly in ``(x, y)``; a switching function is interpolated instead and
    its sign picks ``sigma_floor`` or ``sigma0``, which places the switch between cell
    centers rather than smearing it over a cell. Time uses the nearest slice.
    """

    grid: Grid
    times: np.ndarray
    sigma0: float
    T: float
    sigma_floor: float = 0.0
    sigma: np.ndarray | None = None
    switching: np.ndarray | None = None
    values: np.ndarray | None = None

    def __post_init__(self):
        if (self.sigma is None) == (self.switching is None):
            raise ValueError("give exactly one of sigma or switching slices")
        data = self.sigma if self.sigma is not None else self.switching
        if data.shape != (self.times.size,) + self.grid.shape:
            raise ValueError("policy slices do not match grid and times")

    @property
    def n_slices(self) -> int:
        return self.times.size

    def control_slice(self, k: int) -> np.ndarray:
        """Control values of slice ``k``; ``sigma0`` on masked cells."""
        if self.sigma is not None:
            return np.asarray(self.sigma[k], dtype=float)
        sw = self.switching[k]
        out = np.where(sw > 0, self.sigma_floor, self.sigma0)
        return np.where(self.grid.active, out, self.sigma0)

    def slice_index(self, t: float) -> int:
        k = int(np.searchsorted(self.times, t))
        if k == 0:
            return 0
        if k >= self.times.size:
            return self.times.size - 1
        return k if self.times[k] - t < t - self.times[k - 1] else k - 1

    def __call__(self, t: float, x: float, y: float) -> float:
        if t > self.T:
            return self.sigma0
        g = self.grid
        if not (g.x_lo - 0.5 * g.dx <= x <= g.x_hi + 0.5 * g.dx
                and g.y_lo - 0.5 * g.dy <= y <= g.y_hi + 0.5 * g.dy):
            raise GridExitError(f"state ({x:.6g}, {y:.6g}) left the grid domain at t={t:.6g}")
        k = self.slice_index(t)
        if self.switching is not None:
            sw = _bilinear(self.switching[k], g.x_lo, g.y_lo, g.dx, g.dy, x, y)
            return self.sigma_floor if sw > 0 else self.sigma0
        s = _bilinear(self.sigma[k], g.x_lo, g.y_lo, g.dx, g.dy, x, y)
        return min(max(float(s), self.sigma_floor), self.sigma0)


@numba.njit(cache=True)
def _bilinear(f, x_lo, y_lo, dx, dy, x, y):
    nx, ny = f.shape
    sx = min(max((x - x_lo) / dx - 0.5, 0.0), nx - 1.0)
    sy = min(max((y - y_lo) / dy - 0.5, 0.0), ny - 1.0)
    i = min(int(sx), nx - 2)
    j = min(int(sy), ny - 2)
    a = sx - i
    b = sy - j
    return (
        (1 - a) * (1 - b) * f[i, j]
        + a * (1 - b) * f[i + 1, j]
        + (1 - a) * b * f[i, j + 1]
        + a * b * f[i + 1, j + 1]
    )


def terminal_value(grid: Grid, sigma0: float, c1: float = 1.0) -> ValueFunction:
    """``u = -c1 * x_infinity(x, y, sigma0)`` at cell centers.

    Cells where the x_infinity gradient is singular (the herd-immunity corner)
    receive the limit value ``-c1 / sigma0``.
    """
    X, Y = np.meshgrid(grid.x, grid.y, indexing="ij")
    xinf = x_infinity(X, Y, sigma0)
    xinf = np.where(np.abs(1.0 - sigma0 * xinf) < CORNER_GUARD, 1.0 / sigma0, xinf)
    u = np.where(grid.active, -c1 * xinf, np.nan)
    return ValueFunction(grid, u, np.inf)


def optimal_sigma_from_gradients(u_x, u_y, s: State, p: Params, cost: CostSpec, sigma_min=0.0):
    """Pointwise minimizer of ``f . grad u + L`` over ``[sigma_min, sigma0]`` for given gradients.

    Clamped quadratic minimizer for ``c2 > 0``; for ``c2 = 0`` the bang-bang
    rule ``sigma_min`` where ``u_y > u_x`` and ``sigma0`` otherwise. Broadcasts.
    """
    gap = np.asarray(u_y, dtype=float) - np.asarray(u_x, dtype=float)
    s0 = p.sigma0
    if cost.is_bang_bang:
        out = np.where(gap > 0, float(sigma_min), s0)
    else:
        out = np.clip(s0 * (1.0 - s0 * p.gamma * s.x * s.y * gap / (2.0 * cost.c2)), sigma_min, s0)
    return float(out) if out.ndim == 0 else out


@numba.njit(cache=True, fastmath=True)
def _hamiltonian_field(u, jmax, xs, ys, idx, idy, gamma, s_lo, s0, c2, src, H, S, indicator):
    """Upwind Hamiltonian ``H`` and its minimizing control ``S`` on active cells.

    Controls range over ``[s_lo, s0]``. ``src[j]`` is the state-only running cost of row ``j``. With ``indicator`` set, ``S`` receives the switching function
    ``u_y - u_x`` (mean of the two one-sided ``u_y``) instead of the control.

    Active cells of row ``i`` are ``j <= jmax[i]``. A missing neighbor (domain
    edge or mask) is replaced by linear extrapolation, i.e. the opposite
    one-sided difference; the ENO correction needs both neighbors and is
    dropped otherwise.
    """
    nx, ny = u.shape
    inv2c2 = 0.5 / c2 if c2 > 0.0 else 0.0
    for i in range(nx):
        jm = jmax[i]
        jmn = jmax[i + 1] if i + 1 < nx else -1
        x = xs[i]
        s_mid = max(1.0 / x, s_lo) if x * s0 > 1.0 else s0
        for j in range(jm + 1):
            uc = u[i, j]
            # u_x: backward, since f_x <= 0
            if i > 0:
                dm = uc - u[i - 1, j]
                ux = dm
                if i > 1 and j <= jmn:
                    a = dm - (u[i - 1, j] - u[i - 2, j])
                    b = (u[i + 1, j] - uc) - dm
                    if a * b > 0.0:
                        ux += 0.5 * (a if abs(a) < abs(b) else b)
            elif j <= jmn:
                ux = u[i + 1, j] - uc
            else:
                ux = 0.0
            ux *= idx
            # first differences in y; a missing side borrows the other one
            has_dn = j > 0
            has_up = j < jm
            dym = uc - u[i, j - 1] if has_dn else 0.0
            dyp = u[i, j + 1] - uc if has_up else dym
            if not has_dn:
                dym = dyp
            uym = dym
            uyp = dyp
            if j > 1 and has_up:
                a = dym - (u[i, j - 1] - u[i, j - 2])
                b = dyp - dym
                if a * b > 0.0:
                    uym += 0.5 * (a if abs(a) < abs(b) else b)
            if has_dn and j + 1 < jm:
                a = dyp - dym
                b = (u[i, j + 2] - u[i, j + 1]) - dyp
                if a * b > 0.0:
                    uyp -= 0.5 * (a if abs(a) < abs(b) else b)
            uym *= idy
            uyp *= idy

            y = ys[j]
            gxy = gamma * x * y
            # controls in [s_lo, s_mid] give f_y <= 0 and use the backward u_y
            a = gxy * (uym - ux)
            if c2 > 0.0:
                sg = min(max(s0 * (1.0 - a * s0 * inv2c2), s_lo), s_mid)
            else:
                sg = s_lo if a > 0.0 else s_mid
            q = 1.0 - sg / s0
            val = a * sg + c2 * q * q - gamma * y * uym
            # controls in [s_mid, s0] give f_y >= 0 and use the forward u_y
            if s_mid < s0:
                a = gxy * (uyp - ux)
                if c2 > 0.0:
                    sb = min(max(s0 * (1.0 - a * s0 * inv2c2), s_mid), s0)
                else:
                    sb = s_mid if a > 0.0 else s0
                q = 1.0 - sb / s0
                vb = a * sb + c2 * q * q - gamma * y * uyp
                if vb <= val:
                    val = vb
                    sg = sb
            H[i, j] = val + src[j]
            S[i, j] = 0.5 * (uym + uyp) - ux if indicator else sg


@numba.njit(cache=True)
def _march(u, u1, H, S, jmax, xs, ys, idx, idy, gamma, s_lo, s0, c2, src, dt, n_steps,
           stride, sig_out, val_out, indicator):
    """Advance ``u`` in place by ``n_steps`` SSP-RK2 steps of size ``dt``.

    Every ``stride`` steps (and after the last) the control field of the
    current time level (or the switching function, with ``indicator``) is
    written to the next slot of ``sig_out`` and, when it has slots, the value
    to ``val_out``.
    """
    nx, ny = u.shape
    slot = 0
    for k in range(n_steps + 1):
        _hamiltonian_field(u, jmax, xs, ys, idx, idy, gamma, s_lo, s0, c2, src, H, S, indicator)
        if sig_out.shape[0] > 0 and (k % stride == 0 or k == n_steps):
            for i in range(nx):
                for j in range(jmax[i] + 1):
                    sig_out[slot, i, j] = S[i, j]
            if val_out.shape[0] > 0:
                for i in range(nx):
                    for j in range(jmax[i] + 1):
                        val_out[slot, i, j] = u[i, j]
            slot += 1
        if k == n_steps:
            break
        for i in range(nx):
            for j in range(jmax[i] + 1):
                u1[i, j] = u[i, j] + dt * H[i, j]
        _hamiltonian_field(u1, jmax, xs, ys, idx, idy, gamma, s_lo, s0, c2, src, H, S, False)
        for i in range(nx):
            for j in range(jmax[i] + 1):
                u[i, j] = 0.5 * (u[i, j] + u1[i, j] + dt * H[i, j])


def max_speeds(grid: Grid, p: Params):
    """Largest ``|f_x|`` and ``|f_y|`` over active cells and all admissible controls."""
    X, Y = np.meshgrid(grid.x, grid.y, indexing="ij")
    a = grid.active
    fx = p.gamma * p.sigma0 * X * Y
    fy = p.gamma * Y * np.maximum(1.0, p.sigma0 * X - 1.0)
    return float(fx[a].max()), float(fy[a].max())


def stable_dt(grid: Grid, p: Params, cfl: float = DEFAULT_CFL) -> float:
    """``cfl * min(dx / max|f_x|, dy / max|f_y|)``."""
    fx, fy = max_speeds(grid, p)
    return cfl * min(grid.dx / fx, grid.dy / fy)


def _check_cfl(grid: Grid, p: Params, dt: float):
    fx, fy = max_speeds(grid, p)
    courant = dt * (fx / grid.dx + fy / grid.dy)
    if not 0 < dt or courant > 1.0:
        raise CFLError(f"time step {dt:.4g} violates the CFL bound (Courant number {courant:.3f} > 1)")


def _kernel_args(grid, p, cost, sigma_min=0.0):
    return (
        grid.jmax, grid.x, grid.y, 1.0 / grid.dx, 1.0 / grid.dy,
        p.gamma, sigma_min, p.sigma0, cost.c2, _source(grid, cost),
    )


def _source(grid: Grid, cost: CostSpec) -> np.ndarray:
    if not cost.hospital_weight:
        return np.zeros(grid.ny)
    return cost.hospital_weight * hospital_penalty(grid.y - cost.y_max)


def _run(v: ValueFunction, p: Params, cost: CostSpec, dt, n_steps, stride, n_slots, store_values,
         indicator=False, sigma_min=0.0):
    grid = v.grid
    u = np.array(v.u, dtype=float)
    u1 = np.full_like(u, np.nan)
    H = np.zeros_like(u)
    S = np.full_like(u, p.sigma0)
    fill = np.nan if indicator else p.sigma0
    sig_out = np.full((n_slots,) + grid.shape, fill, dtype=np.float32)
    val_out = np.full((n_slots if store_values else 0,) + grid.shape, np.nan, dtype=np.float32)
    _march(u, u1, H, S, *_kernel_args(grid, p, cost, sigma_min), dt, n_steps, stride, sig_out, val_out,
           indicator)
    return u, S, sig_out, val_out


def step_backward(v: ValueFunction, dt: float, p: Params, cost: CostSpec) -> ValueFunction:
    """One backward time step ``t -> t - dt``.

    Raises
    ------
    CFLError
        If ``dt`` exceeds the advective stability bound of the grid.
    """
    _check_cfl(v.grid, p, dt)
    u, *_ = _run(v, p, cost, dt, 1, 1, 0, False)
    return ValueFunction(v.grid, u, v.t - dt)


def policy_field(v: ValueFunction, p: Params, cost: CostSpec) -> np.ndarray:
    """Minimizing control per cell for the current value; ``sigma0`` on masked cells."""
    _, S, _, _ = _run(v, p, cost, 0.0, 0, 1, 0, False)
    return S


@dataclass
class SolveStats:
    dt: float = 0.0
    n_steps: int = 0
    stride: int = 0
    wall_time: float = 0.0


def solve(
    grid: Grid,
    p: Params,
    cost: CostSpec,
    T: float,
    *,
    cfl: float = DEFAULT_CFL,
    stride: int | None = None,
    max_policy_bytes: int = MAX_POLICY_BYTES,
    store_values: bool = False,
    sigma_min: float = 0.0,
    stats: SolveStats | None = None,
):
    """March the value function from ``t = T`` back to ``t = 0``.

    Parameters
    ----------
    cfl : float
        Courant number used to pick ``dt`` per axis.
    stride : int, optional
        Store a policy slice every ``stride`` time steps. By default every
        step is stored unless that would exceed ``max_policy_bytes``, in which
        case the stride is widened just enough to fit.
    store_values : bool
        Also keep the value function at each stored slice (float32).
    sigma_min : float
        Lower bound on the control.

    Returns
    -------
    (ValueFunction, FeedbackPolicy)
        The value at ``t = 0`` and the feedback policy. For ``c2 = 0`` the
        policy stores the switching function rather than control values.
    """
    if not T > 0:
        raise DomainError("horizon T must be positive")
    if not 0.0 <= sigma_min <= p.sigma0:
        raise DomainError(f"sigma_min must lie in [0, {p.sigma0}]")
    t_wall = time.perf_counter()
    n = max(1, math.ceil(T / stable_dt(grid, p, cfl) - 1e-9))
    dt = T / n
    _check_cfl(grid, p, dt)

    slice_bytes = grid.nx * grid.ny * 4 * (2 if store_values else 1)
    if stride is None:
        stride = max(1, math.ceil((n + 1) * slice_bytes / max_policy_bytes))
    if stride < 1:
        raise DomainError("policy stride must be at least 1")
    steps = np.append(np.arange(0, n, stride), n)

    v = terminal_value(grid, p.sigma0, cost.c1)
    bang = cost.is_bang_bang
    u, _, sig_out, val_out = _run(
        v, p, cost, dt, n, stride, steps.size, store_values, bang, sigma_min
    )
    times = T - dt * steps[::-1]
    times[0] = 0.0
    slices = sig_out[::-1]
    policy = FeedbackPolicy(
        grid, times, p.sigma0, T,
        sigma_floor=sigma_min,
        sigma=None if bang else slices,
        switching=slices if bang else None,
        values=val_out[::-1] if store_values else None,
    )
    if stats is not None:
        stats.dt, stats.n_steps, stats.stride = dt, n, stride
        stats.wall_time = time.perf_counter() - t_wall
    return ValueFunction(grid, u, 0.0), policy


@dataclass(frozen=True, eq=False)
class ClosedLoopResult:
    trajectory: Trajectory
    schedule: SampledSchedule
    J: float
    x_inf: float

    def __iter__(self):
        return iter((self.trajectory, self.schedule, self.J))


def synthesize_trajectory(
    s0: State, policy: FeedbackPolicy, p: Params, dt: float = 0.01, cost: CostSpec | None = None
) -> ClosedLoopResult:
    """Run the feedback policy forward from ``s0`` over ``[0, T]``.

    The policy is interpolated bilinearly in ``(x, y)`` and taken from the
    nearest stored time slice. The running cost is integrated alongside the
    state and ``J = -c1 * x_infinity(x(T), y(T)) + int L dt``.

    Raises
    ------
    GridExitError
        If the start state or the trajectory leaves the grid domain.
    """
    cost = cost or CostSpec.zero()
    if not policy.grid.contains(s0.x, s0.y):
        raise GridExitError(f"start state ({s0.x}, {s0.y}) outside the grid domain")

    def L(x, y, s):
        return _running_cost(x, y, s, p.sigma0, cost)

    traj = integrate(s0, policy, p, policy.T, dt, running_cost=L)
    h = policy.T / (len(traj) - 1)
    lo = policy.sigma_floor
    schedule = SampledSchedule(np.clip(traj.sigma, lo, p.sigma0), h, p.sigma0, sigma_floor=lo)
    x_inf = float(x_infinity(traj.x[-1], traj.y[-1], p.sigma0))
    return ClosedLoopResult(traj, schedule, -cost.c1 * x_inf + traj.running_cost, x_inf)


def write_grid_dump(path, v: ValueFunction) -> None:
    """Write header lines nx, ny, x_lo, x_hi, y_lo, y_hi, t then one x-row of values per line."""
    g = v.grid
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{g.nx}\n{g.ny}\n")
        for val in (g.x_lo, g.x_hi, g.y_lo, g.y_hi, v.t):
            fh.write(f"{float(val):.17g}\n")
        for row in v.u:
            fh.write(" ".join(f"{a:.17g}" for a in row) + "\n")


def read_grid_dump(path, margin: int = MASK_MARGIN) -> ValueFunction:
    with open(path, encoding="utf-8") as fh:
        head = [fh.readline() for _ in range(7)]
        nx, ny = int(head[0]), int(head[1])
        x_lo, x_hi, y_lo, y_hi, t = (float(h) for h in head[2:])
        u = np.loadtxt(fh, ndmin=2)
    if u.shape != (nx, ny):
        raise ValueError(f"grid dump body has shape {u.shape}, header says ({nx}, {ny})")
    return ValueFunction(Grid(nx, ny, x_lo, x_hi, y_lo, y_hi, margin), u, t)
