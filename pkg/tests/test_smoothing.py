from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orbitlab.counting import OrbitCounter, OrbitSpec
from orbitlab.errors import DomainError
from orbitlab.smoothing import (
    Mollifier,
    bump_derivative_bounds,
    error_balance,
    saving_exponent,
    exponent_identity,
    l2_budget,
    optimal_epsilon,
    sandwich_bounds,
    smoothed_count,
)


def test_mollifier_plateaus():
    mol = Mollifier(0.05, c_width=1.5)
    assert mol(1 - 2 * mol.half_width) == 1.0
    assert mol(1 - mol.half_width) == 1.0
    assert mol(1 + mol.half_width) == 0.0
    assert mol(1.0) == pytest.approx(0.5)
    u = np.linspace(0.8, 1.2, 1001)
    w = mol(u)
    assert np.all(np.diff(w) <= 0) and w.min() >= 0 and w.max() <= 1


def test_mollifier_validation():
    for eps in (0.0, 0.25, -0.1, 1.0):
        with pytest.raises(DomainError):
            Mollifier(eps)
    with pytest.raises(DomainError):
        Mollifier(0.1, c_width=0.0)
    with pytest.raises(DomainError):
        Mollifier(0.2, c_width=6.0)


@pytest.mark.parametrize("eps", [0.02, 0.1, 0.2])
def test_derivative_bounds_scale(eps):
    mol = Mollifier(eps)
    d1, d2 = bump_derivative_bounds(mol)
    # sup W' = (1/eps) * 35/32, sup W'' = (1/eps^2) * max |d/ds (1-s^2)^3| * 35/32
    assert d1 * eps == pytest.approx(35 / 32, rel=1e-3)
    assert d2 * eps**2 == pytest.approx(35 / 32 * 6 * 5**-0.5 * (4 / 5) ** 2, rel=1e-2)


def test_smoothed_limit_small_eps():
    spec = OrbitSpec(2)
    # no primitive vector has norm exactly 30.5
    c = OrbitCounter(spec)
    assert smoothed_count(spec, 30.5, Mollifier(1e-6), c) == pytest.approx(c.count(30.5))


def test_smoothed_between_sharp_counts_example():
    spec = OrbitSpec(2)
    mol = Mollifier(0.05)
    lo, hi = sandwich_bounds(spec, 30, mol)
    assert lo <= smoothed_count(spec, 30, mol) <= hi
    c = OrbitCounter(spec)
    assert (lo, hi) == (c.count(28.5), c.count(31.5))


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 3), st.floats(2.0, 200.0), st.sampled_from([0.02, 0.05, 0.1]),
       st.sampled_from([1, 2, 3]))
def test_sandwich_property(m, T, eps, q):
    spec = OrbitSpec(m, q, (1,) + (0,) * (m - 1)) if q > 1 else OrbitSpec(m)
    mol = Mollifier(eps)
    lo, hi = sandwich_bounds(spec, T, mol)
    value = smoothed_count(spec, T, mol)
    assert lo <= value <= hi


def test_smoothed_rejects_small_T():
    with pytest.raises(DomainError):
        smoothed_count(OrbitSpec(2), 0.5, Mollifier(0.1))


def test_l2_budget_examples():
    assert l2_budget(2, 0.01) == pytest.approx(100.0)
    assert l2_budget(3, 0.1) == pytest.approx(10**2.5)
    assert l2_budget(5, 1.0) == 1.0
    with pytest.raises(DomainError):
        l2_budget(3, 0.0)


def test_saving_exponent_values():
    assert [saving_exponent(m) for m in range(2, 7)] == [Fraction(1, 2), Fraction(3, 7), Fraction(4, 11),
                                             Fraction(5, 16), Fraction(3, 11)]
    with pytest.raises(DomainError):
        saving_exponent(1)


def test_exponent_identity_exact():
    assert all(exponent_identity(m) for m in range(2, 13))


def test_optimal_epsilon():
    assert optimal_epsilon(2, 1e4) == pytest.approx(1e-2)
    with pytest.raises(DomainError):
        optimal_epsilon(2, 1.0)


@pytest.mark.parametrize("m", [2, 3, 4, 6])
def test_error_terms_balance(m):
    a, b = error_balance(m, 1e5)
    assert a == pytest.approx(b, rel=1e-9)
    assert a == pytest.approx(1e5 ** (m - float(saving_exponent(m))), rel=1e-9)
