"""Running-cost specifications shared by the Pontryagin and HJB solvers.

The running cost is ``c2 (1 - sigma/sigma0)^2 + c3 g(y - y_max)`` with the
smooth ramp ``g(v) = v / (1 + exp(-100 v))``; the terminal cost is
``-c1 * x_infinity``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import DomainError

KINDS = ("zero", "quadratic", "quadratic_plus_hospital")
RAMP_SHARPNESS = 100.0


@dataclass(frozen=True)
class CostSpec:
    kind: str = "zero"
    c2: float = 0.0
    c3: float = 0.0
    y_max: float = 1.0
    c1: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown cost kind {self.kind!r}; expected one of {KINDS}")
        if self.c2 < 0 or self.c3 < 0:
            raise DomainError("cost weights c2, c3 must be non-negative")
        if not 0 < self.y_max <= 1:
            raise DomainError("y_max must lie in (0, 1]")
        if not self.c1 > 0:
            raise DomainError("terminal scale c1 must be positive")
        if self.kind == "zero" and (self.c2 != 0 or self.c3 != 0):
            raise DomainError("kind 'zero' requires c2 = c3 = 0")
        if self.kind == "quadratic" and self.c3 != 0:
            raise DomainError("kind 'quadratic' requires c3 = 0")

    @classmethod
    def zero(cls, c1=1.0):
        return cls("zero", c1=c1)

    @classmethod
    def quadratic(cls, c2, c1=1.0):
        return cls("quadratic", c2=c2, c1=c1)

    @classmethod
    def hospital(cls, c2, c3, y_max, c1=1.0):
        return cls("quadratic_plus_hospital", c2=c2, c3=c3, y_max=y_max, c1=c1)

    @property
    def hospital_weight(self) -> float:
        return self.c3 if self.kind == "quadratic_plus_hospital" else 0.0

    @property
    def is_bang_bang(self) -> bool:
        """Control cost vanishes, so the pointwise minimizer is bang-bang."""
        return self.c2 == 0.0

    def scaled(self, factor: float) -> "CostSpec":
        return CostSpec(self.kind, self.c2 * factor, self.c3 * factor, self.y_max, self.c1 * factor)


@numba.njit(cache=True)
def _ramp(v):
    a = RAMP_SHARPNESS * v
    if a >= 0.0:
        return v / (1.0 + math.exp(-a))
    e = math.exp(a)
    return v * e / (1.0 + e)


@numba.njit(cache=True)
def _ramp_slope(v):
    a = RAMP_SHARPNESS * v
    if a >= 0.0:
        e = math.exp(-a)
        return (1.0 + e * (1.0 + a)) / (1.0 + e) ** 2
    e = math.exp(a)
    return (e * e + e * (1.0 + a)) / (1.0 + e) ** 2


def hospital_penalty(v):
    """Smooth ramp ``v / (1 + exp(-100 v))``, safe for any magnitude of ``v``."""
    if np.ndim(v) == 0:
        return _ramp(float(v))
    v = np.asarray(v, dtype=float)
    a = RAMP_SHARPNESS * v
    e = np.exp(-np.abs(a))
    return np.where(a >= 0, v / (1.0 + e), v * e / (1.0 + e))


def hospital_penalty_slope(v):
    """Analytic derivative of :func:`hospital_penalty`."""
    if np.ndim(v) == 0:
        return _ramp_slope(float(v))
    return np.vectorize(_ramp_slope, otypes=[float])(v)


def running_cost(x, y, sigma, sigma0, cost: CostSpec):
    q = 1.0 - sigma / sigma0
    val = cost.c2 * q * q
    if cost.hospital_weight:
        val = val + cost.c3 * hospital_penalty(y - cost.y_max)
    return val


def running_cost_dsigma(sigma, sigma0, cost: CostSpec):
    return -2.0 * cost.c2 * (1.0 - sigma / sigma0) / sigma0


def running_cost_dy(y, cost: CostSpec):
    if not cost.hospital_weight:
        return 0.0
    return cost.c3 * hospital_penalty_slope(y - cost.y_max)
