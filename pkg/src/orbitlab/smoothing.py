"""Radial mollification of the orbit count and the epsilon bookkeeping.

The smoothed count is N~(T) = sum_v W_eps(|v| / T), where W_eps is a C^3
step from 1 (u <= 1 - c eps) to 0 (u >= 1 + c eps).  Since 0 <= W <= 1 it is
sandwiched by the sharp counts at T(1 - c eps) and T(1 + c eps).
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .counting import OrbitCounter, OrbitSpec, norm_bound
from .errors import DomainError

# antiderivative of (1 - s^2)^3 and its total mass over [-1, 1]
_BUMP_MASS = 32.0 / 35.0


def _bump_primitive(s):
    return s - s**3 + 0.6 * s**5 - s**7 / 7.0


@dataclass(frozen=True)
class Mollifier:
    epsilon: float
    c_width: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.epsilon < 0.25:
            raise DomainError(f"epsilon must lie in (0, 1/4), got {self.epsilon}")
        if not self.c_width > 0:
            raise DomainError("c_width must be positive")
        if self.c_width * self.epsilon >= 1.0:
            raise DomainError("c_width * epsilon must be < 1")

    @property
    def half_width(self) -> float:
        return self.c_width * self.epsilon

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        z = np.clip((u - 1.0) / self.half_width, -1.0, 1.0)
        return 1.0 - (_bump_primitive(z) - _bump_primitive(-1.0)) / _BUMP_MASS


def smoothed_count(spec: OrbitSpec, T: float, mol: Mollifier, counter: OrbitCounter | None = None) -> float:
    """sum over orbit points of W_eps(|v| / T)."""
    if T < 1:
        raise DomainError("T must be >= 1")
    counter = OrbitCounter(spec) if counter is None else counter
    n_hi = norm_bound(T * (1 + mol.half_width))
    shells = counter.shells(n_hi)
    n = np.nonzero(shells)[0]
    w = mol(np.sqrt(n.astype(float)) / T)
    return float(np.dot(shells[n].astype(float), w))


def sandwich_bounds(spec: OrbitSpec, T: float, mol: Mollifier,
                    counter: OrbitCounter | None = None) -> tuple[int, int]:
    """Exact counts at T(1 - c eps) and T(1 + c eps)."""
    counter = OrbitCounter(spec) if counter is None else counter
    lo = T * (1 - mol.half_width)
    hi = T * (1 + mol.half_width)
    return (counter.count(lo) if lo >= 1 else 0), counter.count(hi)


def l2_budget(m: int, epsilon: float) -> float:
    """epsilon^{-(m+2)(m-1)/4}: L^2 size of an epsilon bump on G/K."""
    if not 0 < epsilon <= 1:
        raise DomainError("epsilon must lie in (0, 1]")
    return epsilon ** (-(m + 2) * (m - 1) / 4.0)


def saving_exponent(m: int) -> Fraction:
    """Error-exponent saving 2m / ((m+2)(m-1) + 4), exact."""
    if m < 2:
        raise DomainError("m must be >= 2")
    return Fraction(2 * m, (m + 2) * (m - 1) + 4)


def exponent_identity(m: int) -> bool:
    """m - eta = m/2 + eta (m+2)(m-1)/4, in exact rationals."""
    e = saving_exponent(m)
    return Fraction(m) - e == Fraction(m, 2) + e * Fraction((m + 2) * (m - 1), 4)


def optimal_epsilon(m: int, T: float) -> float:
    """epsilon = T^{-eta_m}, balancing T^m eps against eps^{-(m+2)(m-1)/4} T^{m/2}."""
    if T <= 1:
        raise DomainError("T must be > 1")
    return T ** (-float(saving_exponent(m)))


def error_balance(m: int, T: float) -> tuple[float, float]:
    """(T^m eps, eps^{-(m+2)(m-1)/4} T^{m/2}) at the optimal epsilon."""
    e = optimal_epsilon(m, T)
    return T**m * e, l2_budget(m, e) * T ** (m / 2)


def bump_derivative_bounds(mol: Mollifier, n: int = 20001) -> tuple[float, float]:
    """Sup of the first and second difference quotients of W on a fine grid."""
    hw = mol.half_width
    u = np.linspace(1 - 2 * hw, 1 + 2 * hw, n)
    h = u[1] - u[0]
    w = mol(u)
    d1 = np.abs(np.diff(w)) / h
    d2 = np.abs(np.diff(w, 2)) / h**2
    return float(d1.max()), float(d2.max())

