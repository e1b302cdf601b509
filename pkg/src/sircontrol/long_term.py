"""Long-time limit of the uncontrolled epidemic.

Along any trajectory with constant ``sigma0`` the quantity
``mu = x * exp(-sigma0 * (x + y))`` is conserved, and the limiting
susceptible fraction solves ``x_inf = mu * exp(sigma0 * x_inf)``. Its
closed form needs the principal branch of the Lambert W function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SingularityError
from .sir_core import Params, State, check_state

BRANCH_POINT = -math.exp(-1.0)
BRANCH_CLAMP = 1e-14
SINGULAR_TOL = 1e-10


def lambert_w0(z):
    """Principal branch ``W0`` of the Lambert W function for real ``z >= -1/e``.

    Starts from the branch-point series near ``-1/e``, a log asymptotic for
    large ``z`` and a rational-log guess in between, then applies Halley's
    iteration. Accepts scalars or arrays; arguments up to ``1e-14`` below the
    branch point are treated as ``-1/e``.

    Raises
    ------
    DomainError
        If any argument lies further below ``-1/e`` or is NaN.
    """
    scalar = np.ndim(z) == 0
    shape = np.shape(z)
    z = np.array(z, dtype=float).ravel()
    if np.any(np.isnan(z)) or np.any(z < BRANCH_POINT - BRANCH_CLAMP):
        raise DomainError("lambert_w0 argument below -1/e")
    z = np.maximum(z, BRANCH_POINT)

    w = np.empty_like(z)
    near = z < -0.25
    big = z > 3.0
    mid = ~(near | big)
    # branch-point series in p = sqrt(2 (e z + 1))
    p = np.sqrt(np.maximum(2.0 * (math.e * z[near] + 1.0), 0.0))
    w[near] = -1.0 + p * (1.0 + p * (-1.0 / 3.0 + p * 11.0 / 72.0))
    l1 = np.log(z[big])
    l2 = np.log(l1)
    w[big] = l1 - l2 + l2 / l1
    lz = np.log1p(z[mid])
    w[mid] = lz * (1.0 - np.log1p(lz) / (2.0 + lz))

    active = (z != BRANCH_POINT) & (z != 0.0)
    w[z == BRANCH_POINT] = -1.0
    w[z == 0.0] = 0.0
    for _ in range(30):
        if not active.any():
            break
        wa, za = w[active], z[active]
        ew = np.exp(wa)
        f = wa * ew - za
        wp1 = wa + 1.0
        denom = ew * wp1 - 0.5 * (wa + 2.0) * f / wp1
        step = np.where(denom != 0.0, f / denom, 0.0)
        wn = np.maximum(wa - step, -1.0)
        w[active] = wn
        done = np.abs(wn - wa) <= 4e-16 * (1.0 + np.abs(wn))
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return float(w[0]) if scalar else w.reshape(shape)


def mu(x, y, sigma0):
    """Conserved quantity ``x * exp(-sigma0 * (x + y))`` of the uncontrolled flow."""
    if np.ndim(x) == 0 and np.ndim(y) == 0:
        check_state(x, y)
        return x * math.exp(-sigma0 * (x + y))
    x = np.asarray(x, dtype=float)
    return x * np.exp(-sigma0 * (x + np.asarray(y, dtype=float)))


def x_infinity(x, y, sigma0):
    """Limit ``lim_{t->inf} x(t)`` reached from ``(x, y)`` with no further control.

    Vectorized over ``x`` and ``y``. The result lies in ``(0, 1/sigma0]``
    for states with ``y > 0`` and equals ``x`` on the stable equilibria
    ``y = 0, x <= 1/sigma0``.
    """
    arg = -sigma0 * mu(x, y, sigma0)
    return -lambert_w0(arg) / sigma0


@dataclass(frozen=True)
class XInfGradient:
    """Partial derivatives of ``x_infinity`` with respect to x, y and mu."""

    d_dx: float
    d_dy: float
    d_dmu: float


def _denominator(xinf, sigma0):
    d = 1.0 - sigma0 * xinf
    if np.any(np.abs(d) < SINGULAR_TOL):
        raise SingularityError(
            "x_infinity gradient is singular at the herd-immunity point x = 1/sigma0, y = 0"
        )
    return d


def x_infinity_gradient(x, y, sigma0) -> XInfGradient:
    xinf = x_infinity(x, y, sigma0)
    d = _denominator(xinf, sigma0)
    d_dy = -sigma0 * xinf / d
    return XInfGradient(
        d_dx=(1.0 - 1.0 / (x * sigma0)) * d_dy,
        d_dy=d_dy,
        d_dmu=np.exp(sigma0 * xinf) / d,
    )


def x_infinity_rate(s: State, sigma: float, p: Params) -> float:
    """Time derivative of ``x_infinity(x(t), y(t), sigma0)`` under control ``sigma``.

    Independent of ``x`` except through ``x_infinity`` itself, and zero when
    ``sigma == sigma0`` or ``y == 0``.
    """
    if not 0.0 <= sigma <= p.sigma0:
        raise DomainError(f"control {sigma!r} outside [0, {p.sigma0}]")
    xinf = x_infinity(s.x, s.y, p.sigma0)
    d = _denominator(xinf, p.sigma0)
    return p.gamma * s.y * xinf * (p.sigma0 - sigma) / d
