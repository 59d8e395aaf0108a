"""Main term, error-exponent fits and the envelope test for N_m(T)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import special, stats

from .counting import OrbitCounter, OrbitSpec
from .errors import DomainError
from .smoothing import saving_exponent

def zeta(s: float) -> float:
    if s <= 1:
        raise DomainError(f"zeta diverges for s <= 1, got {s}")
    return float(special.zeta(s))


def ball_volume(m: int) -> float:
    if m < 1:
        raise DomainError("m must be >= 1")
    return math.pi ** (m / 2) / math.gamma(m / 2 + 1)


def jordan_totient(m: int, q: int) -> int:
    """Number of primitive residue vectors mod q: q^m prod_{p | q} (1 - p^{-m})."""
    out, n, p = q**m, q, 2
    while p * p <= n:
        if n % p == 0:
            out = out // p**m * (p**m - 1)
            while n % p == 0:
                n //= p
        p += 1
    if n > 1:
        out = out // n**m * (n**m - 1)
    return out


def main_coefficient(m: int, q: int = 1) -> float:
    """V_m / (zeta(m) J_m(q)); primitive vectors split evenly over the J_m(q) classes."""
    return ball_volume(m) / (zeta(m) * jordan_totient(m, q))


def main_term(m: int, T: float, q: int = 1) -> float:
    if T < 1:
        raise DomainError("T must be >= 1")
    return main_coefficient(m, q) * T**m


@dataclass
class AsymptoticModel:
    m: int
    main_coefficient: float
    exceptional_terms: list = field(default_factory=list)  # (coefficient, exponent)
    eta: Fraction = None

    def __post_init__(self):
        if self.eta is None:
            self.eta = saving_exponent(self.m)
        if self.eta != saving_exponent(self.m):
            raise DomainError("eta does not match 2m/((m+2)(m-1)+4)")
        exps = [e for _, e in self.exceptional_terms]
        if any(e <= self.m / 2 for e in exps):
            raise DomainError("exceptional exponents must exceed m/2")
        if any(b >= a for a, b in zip([self.m] + exps, exps)):
            raise DomainError("exponents must be strictly decreasing")

    @classmethod
    def for_orbit(cls, spec: OrbitSpec) -> "AsymptoticModel":
        return cls(spec.m, main_coefficient(spec.m, spec.q))

    def predict(self, T: float) -> float:
        return self.main_coefficient * T**self.m + sum(c * T**e for c, e in self.exceptional_terms)

    @property
    def error_exponent(self) -> float:
        return self.m - float(self.eta)


@dataclass
class FitResult:
    slope: float
    stderr: float
    intercept: float
    theil_sen: float
    theil_sen_band: tuple
    n_used: int

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "stderr": self.stderr,
            "intercept": self.intercept,
            "theil_sen": self.theil_sen,
            "theil_sen_band": list(self.theil_sen_band),
            "n_used": self.n_used,
        }


def fit_residual_slope(T_grid, residuals) -> FitResult:
    """Slope of log|residual| against log T; zero residuals are dropped."""
    T = np.asarray(T_grid, dtype=float)
    res = np.abs(np.asarray(residuals, dtype=float))
    keep = res > 0
    if keep.sum() < 3:
        raise DomainError("degenerate fit: fewer than three nonzero residuals")
    x, y = np.log(T[keep]), np.log(res[keep])
    lr = stats.linregress(x, y)
    ts = stats.theilslopes(y, x)
    return FitResult(float(lr.slope), float(lr.stderr), float(lr.intercept),
                     float(ts.slope), (float(ts.low_slope), float(ts.high_slope)), int(keep.sum()))


@dataclass
class FitReport:
    m: int
    q: int
    T_grid: list
    counts: list
    main_terms: list
    residuals: list
    fit: FitResult
    eta_budget: float

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "q": self.q,
            "T_grid": self.T_grid,
            "counts": self.counts,
            "main_terms": self.main_terms,
            "residuals": self.residuals,
            "slope": self.fit.slope,
            "stderr": self.fit.stderr,
            "theil_sen": self.fit.theil_sen,
            "eta_budget": self.eta_budget,
        }


def fit_error_exponent(m: int, spec: OrbitSpec | None = None, T_grid=None, counts=None,
                       counter: OrbitCounter | None = None) -> FitReport:
    """Fit the growth exponent of |N(T) - main_term(T)| on ``T_grid``.

    ``counts`` may be supplied directly (e.g. synthetic data); otherwise
    they are computed exactly for ``spec``.
    """
    spec = OrbitSpec(m) if spec is None else spec
    if spec.m != m:
        raise DomainError("spec dimension does not match m")
    T_grid = [float(T) for T in T_grid]
    if len(T_grid) < 8:
        raise DomainError("need at least 8 grid points")
    if any(b <= a for a, b in zip(T_grid, T_grid[1:])):
        raise DomainError("T_grid must be strictly increasing")
    if counts is None:
        counter = OrbitCounter(spec) if counter is None else counter
        counts = counter.counts(T_grid)
    mains = [main_term(m, T, spec.q) for T in T_grid]
    residuals = [float(c) - mt for c, mt in zip(counts, mains)]
    fit = fit_residual_slope(T_grid, residuals)
    return FitReport(m, spec.q, T_grid, [c if isinstance(c, int) else float(c) for c in counts],
                     mains, residuals, fit, m - float(saving_exponent(m)))


def envelope_check(m: int, T_grid, counts, q: int = 1, n_calibrate: int = 5, T_min: float = 50.0) -> dict:
    """|N - main| <= C T^{m - eta_m} on the grid, with C taken from the smallest points.

    C is the largest normalised residual among the ``n_calibrate`` smallest
    grid points with T >= T_min.
    """
    exponent = m - float(saving_exponent(m))
    pts = [(float(T), c) for T, c in zip(T_grid, counts) if T >= T_min]
    if len(pts) <= n_calibrate:
        raise DomainError("grid too short for the envelope test")
    norm = [abs(float(c) - main_term(m, T, q)) / T**exponent for T, c in pts]
    C = max(norm[:n_calibrate])
    return {"C": C, "normalized": norm, "passed": all(v <= C for v in norm), "exponent": exponent}


def geometric_grid(lo: float, hi: float, n: int) -> list:
    return [float(v) for v in np.geomspace(lo, hi, n)]
