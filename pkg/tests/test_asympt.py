import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from orbitlab.asympt import (
    AsymptoticModel,
    ball_volume,
    envelope_check,
    fit_error_exponent,
    fit_residual_slope,
    geometric_grid,
    jordan_totient,
    main_coefficient,
    main_term,
    zeta,
)
from orbitlab.counting import OrbitCounter, OrbitSpec, count_primitive
from orbitlab.errors import DomainError


def test_zeta_closed_forms():
    assert zeta(2) == pytest.approx(math.pi**2 / 6, rel=1e-14)
    assert zeta(4) == pytest.approx(math.pi**4 / 90, rel=1e-14)
    assert zeta(3) == pytest.approx(1.2020569031595942, rel=1e-14)
    assert zeta(6) == pytest.approx(math.pi**6 / 945, rel=1e-14)
    with pytest.raises(DomainError):
        zeta(1)


def test_ball_volume():
    assert ball_volume(2) == pytest.approx(math.pi, rel=1e-14)
    assert ball_volume(3) == pytest.approx(4 * math.pi / 3, rel=1e-14)
    assert ball_volume(6) == pytest.approx(math.pi**3 / 6, rel=1e-14)
    with pytest.raises(DomainError):
        ball_volume(0)


def test_jordan_totient():
    assert jordan_totient(2, 1) == 1
    assert jordan_totient(2, 2) == 3
    assert jordan_totient(3, 3) == 26
    assert jordan_totient(2, 12) == 144 * 3 // 4 * 8 // 9
    # direct count of primitive residue vectors
    for m, q in [(2, 6), (3, 4), (2, 9)]:
        direct = sum(1 for v in itertools.product(range(q), repeat=m) if math.gcd(q, *v) == 1)
        assert jordan_totient(m, q) == direct


def test_main_term_values():
    assert main_term(2, 1000) == pytest.approx(math.pi * 1e6 / (math.pi**2 / 6))
    assert main_term(3, 100) == pytest.approx(4 * math.pi / 3 * 1e6 / zeta(3))
    with pytest.raises(DomainError):
        main_term(2, 0)


@pytest.mark.parametrize("m,T", [(2, 1000), (3, 300), (4, 100)])
def test_ratio_close_to_one(m, T):
    assert count_primitive(m, T) / main_term(m, T) == pytest.approx(1.0, abs=0.01)


def test_congruence_main_term_ratio():
    spec = OrbitSpec(3, 3, (1, 2, 0))
    T = 150
    ratio = OrbitCounter(spec).count(T) / main_term(3, T, 3)
    assert ratio == pytest.approx(1.0, abs=0.01)
    assert main_coefficient(3, 3) == pytest.approx(main_coefficient(3) / 26)


def test_synthetic_slope_recovered():
    T = geometric_grid(100, 1e4, 20)
    counts = [main_term(2, t) + t**0.8 for t in T]
    rep = fit_error_exponent(2, T_grid=T, counts=counts)
    assert rep.fit.slope == pytest.approx(0.8, abs=0.05)
    assert rep.fit.theil_sen == pytest.approx(0.8, abs=0.05)


def test_fit_on_exact_counts_m2():
    T = geometric_grid(100, 1e4, 25)
    rep = fit_error_exponent(2, T_grid=T)
    assert rep.fit.slope <= 2 - 0.5
    d = rep.to_dict()
    assert set(d) >= {"m", "q", "T_grid", "counts", "main_terms", "residuals", "slope", "stderr", "eta_budget"}
    assert d["eta_budget"] == 1.5


def test_fit_on_exact_counts_m3():
    T = geometric_grid(50, 500, 20)
    rep = fit_error_exponent(3, T_grid=T)
    assert rep.fit.slope <= 3 - 3 / 7


def test_fit_errors():
    with pytest.raises(DomainError):
        fit_error_exponent(2, T_grid=[1, 2, 3])
    with pytest.raises(DomainError):
        fit_error_exponent(2, T_grid=list(range(10, 0, -1)))
    with pytest.raises(DomainError):
        fit_error_exponent(3, OrbitSpec(2), T_grid=geometric_grid(10, 100, 10))
    with pytest.raises(DomainError):
        fit_residual_slope([1, 2, 3, 4], [0, 0, 0, 1])


def test_envelope_passes_m2():
    T = geometric_grid(50, 5000, 20)
    counts = OrbitCounter(OrbitSpec(2)).counts(T)
    env = envelope_check(2, T, counts)
    assert env["passed"] and env["exponent"] == 1.5


def test_envelope_detects_excess_growth():
    T = geometric_grid(50, 5000, 20)
    counts = [main_term(2, t) + t**1.9 for t in T]
    assert not envelope_check(2, T, counts)["passed"]


def test_model_validation():
    model = AsymptoticModel.for_orbit(OrbitSpec(3))
    assert model.eta == Fraction(3, 7)
    assert model.error_exponent == pytest.approx(3 - 3 / 7)
    assert model.predict(10.0) == pytest.approx(main_term(3, 10.0))
    good = AsymptoticModel(3, 1.0, [(0.5, 2.5), (0.1, 1.8)])
    assert good.predict(2.0) == pytest.approx(8 + 0.5 * 2**2.5 + 0.1 * 2**1.8)
    with pytest.raises(DomainError):
        AsymptoticModel(3, 1.0, [(1.0, 1.2)])
    with pytest.raises(DomainError):
        AsymptoticModel(3, 1.0, [(1.0, 2.0), (1.0, 2.5)])
    with pytest.raises(DomainError):
        AsymptoticModel(3, 1.0, eta=Fraction(1, 2))


def test_geometric_grid():
    g = geometric_grid(100, 1e4, 5)
    np.testing.assert_allclose(g, [100, 100 * 10**0.5, 1000, 1000 * 10**0.5, 1e4])
