"""Quadratic Casimir on radial functions, the radial ODE and the growth kernel.

A radial test function F(r) is extended to G by f(g) = F(|e_m g|).  The
Casimir is applied numerically as sum_i D_{X_i*} D_{X_i} f over the
Killing-dual pairs of a :class:`~orbitlab.liealg.LieBasis`.

Spectral convention: lambda = (4/m^2) s^2 on [0, 1], so s = (m/2) sqrt(lambda);
tempered points lambda > 1 are s = m/2 + i (m/2) sqrt(lambda - 1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import DomainError, StructuralFailure
from .liealg import LieBasis, build_basis, exp_flow

CALIBRATION_SPREAD_TOL = 1e-3


def radial_extension(F):
    def f(g):
        r = float(np.linalg.norm(g[-1]))
        try:
            value = F(r)
        except (ValueError, ZeroDivisionError) as exc:
            raise DomainError(f"test function undefined at r = {r!r}: {exc}") from None
        if not math.isfinite(value):
            raise DomainError(f"test function is not finite at r = {r!r}")
        return value

    return f


def _mixed_second(f, g, X, Y, h):
    """Central estimate of d^2/ds dt f(g exp(sX) exp(tY)) at s = t = 0."""
    eX = {+1: exp_flow(X, h), -1: exp_flow(X, -h)}
    eY = {+1: exp_flow(Y, h), -1: exp_flow(Y, -h)}
    acc = 0.0
    for a in (+1, -1):
        left = g @ eX[a]
        for b in (+1, -1):
            acc += a * b * f(left @ eY[b])
    return acc / (4.0 * h * h)


def casimir_apply(F, g, m: int, h_step: float = 1e-4, basis: LieBasis | None = None,
                  richardson: bool = False, swap_order: bool = False) -> float:
    """Numeric Casimir sum_i D_{X_i*} D_{X_i} f at g, where f(g) = F(|e_m g|).

    D_{X*} is applied after D_X unless ``swap_order`` is set.
    """
    if h_step <= 0:
        raise DomainError("h_step must be positive")
    if basis is None:
        basis = build_basis(m)
    elif basis.dim_m != m:
        raise DomainError(f"basis is for m={basis.dim_m}, not {m}")
    g = np.asarray(g, dtype=float)
    f = radial_extension(F)

    def total(h):
        acc = 0.0
        for X, Xd in zip(basis.elements, basis.dual):
            acc += _mixed_second(f, g, X, Xd, h) if swap_order else _mixed_second(f, g, Xd, X, h)
        return acc

    value = total(h_step)
    if richardson:
        value = (4.0 * total(h_step / 2) - value) / 3.0
    return float(value)


def _radial_derivatives(F, r, h):
    f0, fp, fm = F(r), F(r + h), F(r - h)
    return f0, (fp - fm) / (2 * h), (fp - 2 * f0 + fm) / (h * h)


def radial_operator(F, m: int, r: float, h_step: float = 1e-4) -> float:
    """(4/m^2)(r^2 F'' + r F') by central differences."""
    _, d1, d2 = _radial_derivatives(F, r, h_step * r)
    return 4.0 / m**2 * (r * r * d2 + r * d1)


def radial_ode_residual(F, lam: float, m: int, r: float, h_step: float = 1e-4) -> float:
    if r <= 0:
        raise DomainError("radius must be positive")
    f0, d1, d2 = _radial_derivatives(F, r, h_step * r)
    return 4.0 / m**2 * (r * r * d2 + r * d1) - lam * f0


# ---------------------------------------------------------------------------
# calibration of the radial formula


def default_test_functions():
    return {
        "r^0.3": lambda r: r**0.3,
        "r^0.7": lambda r: r**0.7,
        "log r": math.log,
        "sin(log r)": lambda r: math.sin(math.log(r)),
    }


def _sample_elements(m, radii, seed):
    """Group elements h a(r) k with random H and K parts, |e_m g| = r."""
    from .coords import CoordinateChart, chart_dims, compose

    rng = np.random.default_rng(seed)
    dims = chart_dims(m)
    out = []
    for r in radii:
        chart = CoordinateChart(
            rng.uniform(-0.5, 0.5, dims["x"]),
            rng.uniform(-0.3, 0.3, dims["t"]),
            rng.uniform(-0.5, 0.5, dims["phi"]),
            r,
            rng.uniform(-0.5, 0.5, dims["theta"]),
        )
        out.append(compose(chart))
    return out


@dataclass
class Calibration:
    m: int
    kappa: float
    spread: float
    estimates: dict  # function name -> list of per-point kappa estimates
    radii: list
    numeric: dict  # function name -> list of numeric Casimir values
    target: dict  # function name -> list of (4/m^2)(r^2 F'' + r F')

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "kappa": self.kappa,
            "spread": self.spread,
            "radii": self.radii,
            "estimates": self.estimates,
            "numeric": self.numeric,
            "target": self.target,
        }


def calibrate_casimir(m: int, basis: LieBasis | None = None, functions: dict | None = None,
                      n_points: int = 20, r_range=(0.5, 2.0), seed: int = 0,
                      h_step: float = 1e-4, tol: float = CALIBRATION_SPREAD_TOL,
                      raise_on_failure: bool = True) -> Calibration:
    """Fit kappa with casimir_apply = kappa * (4/m^2)(r^2 F'' + r F').

    Every (function, point) pair gives one estimate numeric/target.  The
    spread is (max - min)/|median| over all estimates; a pair whose target
    vanishes while the numeric value does not yields an infinite estimate.
    Functions annihilated by both sides (constants) are rejected.
    """
    if m < 2:
        raise DomainError("m must be >= 2")
    functions = default_test_functions() if functions is None else functions
    basis = build_basis(m) if basis is None else basis
    radii = list(np.geomspace(r_range[0], r_range[1], n_points))
    elements = _sample_elements(m, radii, seed)
    estimates, numeric, target = {}, {}, {}
    for name, F in functions.items():
        num = [casimir_apply(F, g, m, h_step, basis, richardson=True) for g in elements]
        tgt = [radial_operator(F, m, r, h_step) for r in radii]
        scale = max(max(abs(v) for v in num), max(abs(v) for v in tgt))
        if scale < 1e-9:
            raise DomainError(f"test function {name!r} is annihilated (0/0); excluded from calibration")
        est = []
        for a, b in zip(num, tgt):
            if abs(b) <= 1e-7 * scale:
                est.append(math.copysign(math.inf, a) if abs(a) > 1e-7 * scale else math.nan)
            else:
                est.append(a / b)
        estimates[name], numeric[name], target[name] = est, num, tgt
    flat = np.array([e for v in estimates.values() for e in v])
    finite = flat[np.isfinite(flat)]
    if len(finite) < len(flat):
        kappa = float(np.median(finite)) if len(finite) else math.nan
        spread = math.inf
    else:
        kappa = float(np.median(flat))
        spread = float((flat.max() - flat.min()) / abs(kappa))
    cal = Calibration(m, kappa, spread, estimates, radii, numeric, target)
    if raise_on_failure and not spread < tol:
        raise StructuralFailure(
            f"Casimir calibration spread {spread:.3g} exceeds {tol:g} for m={m}", cal.to_dict()
        )
    return cal


def fit_radial_operator(m: int, basis: LieBasis | None = None, functions: dict | None = None,
                        n_points: int = 20, r_range=(0.5, 2.0), seed: int = 0,
                        h_step: float = 1e-4) -> dict:
    """Least-squares fit casimir_apply ~ a r^2 F'' + b r F' on the calibration set.

    Unlike :func:`calibrate_casimir`, which tests one fixed shape, this
    recovers both coefficients and reports the relative fit residual.
    """
    functions = default_test_functions() if functions is None else functions
    basis = build_basis(m) if basis is None else basis
    radii = list(np.geomspace(r_range[0], r_range[1], n_points))
    elements = _sample_elements(m, radii, seed)
    rows, rhs = [], []
    for F in functions.values():
        for r, g in zip(radii, elements):
            _, d1, d2 = _radial_derivatives(F, r, h_step * r)
            rows.append([r * r * d2, r * d1])
            rhs.append(casimir_apply(F, g, m, h_step, basis, richardson=True))
    A, y = np.array(rows), np.array(rhs)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.abs(A @ coef - y).max() / np.abs(y).max())
    return {"m": m, "a": float(coef[0]), "b": float(coef[1]), "b_over_a": float(coef[1] / coef[0]),
            "max_relative_residual": resid}


# ---------------------------------------------------------------------------
# spectral parameter, indicial roots, alpha integrals, growth kernel


@dataclass(frozen=True)
class SpectralPoint:
    lam: float
    s: complex
    m: int

    @classmethod
    def from_lambda(cls, lam: float, m: int) -> "SpectralPoint":
        return cls(float(lam), spectral_parameter(lam, m), m)

    @property
    def tempered(self) -> bool:
        return self.lam >= 1.0


def spectral_parameter(lam: float, m: int):
    """s(lambda): real (m/2) sqrt(lambda) on [0, 1], m/2 + i t beyond."""
    if lam < 0:
        raise DomainError(f"lambda must be >= 0, got {lam}")
    if lam <= 1.0:
        return 0.5 * m * math.sqrt(lam)
    return complex(0.5 * m, 0.5 * m * math.sqrt(lam - 1.0))


def indicial_exponents(lam: float, m: int):
    """The two exponents alpha with r^alpha solving (4/m^2)(r^2 F'' + r F') = lambda F."""
    s = spectral_parameter(lam, m)
    return (s, -s)


def homogeneous_solutions(lam: float, m: int, family: str = "indicial"):
    """Candidate homogeneous solutions of the radial ODE.

    ``family="indicial"`` gives r^{+s}, r^{-s}; ``family="shifted"`` gives the
    r^{m-1+s}, r^{m-1-s} pair, which carries the extra Haar factor r^{m-1}.
    """
    s = spectral_parameter(lam, m)
    if isinstance(s, complex):
        raise DomainError("real-valued candidates need lambda <= 1")
    shift = {"indicial": 0.0, "shifted": m - 1.0}.get(family)
    if shift is None:
        raise DomainError(f"unknown family {family!r}")
    return (lambda r: r ** (shift + s)), (lambda r: r ** (shift - s))


def alpha_integral(T: float, s: float, m: int, sign: int, method: str = "closed") -> float:
    """int_0^T r^{m-1 +/- s} dr = T^{m +/- s} / (m +/- s)."""
    if T <= 0:
        raise DomainError("T must be positive")
    if sign not in (1, -1):
        raise DomainError("sign must be +1 or -1")
    p = m + sign * s
    if (p.real if isinstance(p, complex) else p) <= 0:
        raise DomainError(f"divergent integral: m + sign*s = {p} <= 0")
    if method == "closed":
        return T**p / p
    if method == "quadrature":
        if isinstance(p, complex):
            raise DomainError("quadrature path is real-valued only")
        # r = e^u turns the algebraic endpoint behaviour into an exponential tail
        val, _ = integrate.quad(lambda u: math.exp(p * u), -math.inf, math.log(T),
                                epsabs=0.0, epsrel=1e-13, limit=200)
        return val
    raise DomainError(f"unknown method {method!r}")


def growth_kernel(T: float, lam: float, m: int):
    """K_T(lambda) = alpha_-(T)/alpha_-(1); complex on the tempered line."""
    if T < 1:
        raise DomainError("T must be >= 1")
    s = spectral_parameter(lam, m)
    value = alpha_integral(T, s, m, -1) / alpha_integral(1.0, s, m, -1)
    if isinstance(value, complex):
        return value
    return float(value)


def printed_solution_residuals(m: int, lams, radii, h_step: float = 1e-4) -> list:
    """Residuals of both candidate families at each (lambda, r); the shifted family fails."""
    rows = []
    for lam in lams:
        plus_i, minus_i = homogeneous_solutions(lam, m, "indicial")
        plus_s, minus_s = homogeneous_solutions(lam, m, "shifted")
        for r in radii:
            rows.append({
                "lambda": lam,
                "r": r,
                "indicial_plus": radial_ode_residual(plus_i, lam, m, r, h_step) / plus_i(r),
                "indicial_minus": radial_ode_residual(minus_i, lam, m, r, h_step) / minus_i(r),
                "shifted_plus": radial_ode_residual(plus_s, lam, m, r, h_step) / plus_s(r),
                "shifted_minus": radial_ode_residual(minus_s, lam, m, r, h_step) / minus_s(r),
            })
    return rows
