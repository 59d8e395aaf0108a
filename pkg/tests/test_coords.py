import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.linalg import expm

from orbitlab.coords import (
    CoordinateChart,
    FrobeniusBump,
    a_radial,
    chart_dims,
    compose,
    compose_arrays,
    decompose,
    haar_density,
    haar_density_arrays,
    haar_invariance_check,
    in_domain_arrays,
    so_compose_arrays,
    sphere_density_arrays,
    sphere_point_arrays,
)
from orbitlab.errors import ChartError, ChartSingularityError, DomainError
from orbitlab.liealg import build_basis


def random_charts(m, n, seed, scale=0.8):
    """Seeded chart vectors well inside the open domain."""
    rng = np.random.default_rng(seed)
    d = chart_dims(m)
    cols = [
        rng.uniform(-2, 2, (n, d["x"])),
        rng.uniform(-1, 1, (n, d["t"])),
        rng.uniform(-1.2, 1.2, (n, d["phi"])) * scale,
        rng.uniform(0.2, 5.0, (n, 1)),
        rng.uniform(-1.2, 1.2, (n, d["theta"])) * scale,
    ]
    vecs = np.concatenate(cols, axis=1)
    # the last angle of each sphere block ranges over (-pi, pi]
    vecs[:, -1] = rng.uniform(-3.0, 3.0, n)
    return vecs


def random_translation(m, scale, seed):
    rng = np.random.default_rng(seed)
    Y = rng.normal(size=(m, m))
    Y -= np.trace(Y) / m * np.eye(m)
    return expm(scale * Y / np.linalg.norm(Y))


def test_chart_dims_total():
    for m in range(2, 7):
        assert sum(chart_dims(m).values()) == m * m - 1


@pytest.mark.parametrize("m", [2, 3, 4, 5])
def test_zero_chart_is_identity(m):
    np.testing.assert_allclose(compose(CoordinateChart.zero(m)), np.eye(m), atol=1e-15)
    c = decompose(np.eye(m))
    assert c.r == pytest.approx(1.0)
    np.testing.assert_allclose(c.to_vector(), CoordinateChart.zero(m).to_vector(), atol=1e-14)


def test_radial_only_m3():
    np.testing.assert_allclose(compose(CoordinateChart.zero(3, r=2.0)), np.diag([2**-0.5, 2**-0.5, 2.0]))


def test_decompose_a4():
    c = decompose(a_radial(4.0, 3))
    assert c.r == pytest.approx(4.0)
    np.testing.assert_allclose(np.concatenate([c.x, c.t, c.phi, c.theta]), 0.0, atol=1e-14)


@pytest.mark.parametrize("m", [2, 3, 4, 5])
def test_last_row_norm_is_r(m):
    vecs = random_charts(m, 200, seed=m)
    gs = compose_arrays(vecs, m)
    r = vecs[:, chart_dims(m)["x"] + chart_dims(m)["t"] + chart_dims(m)["phi"]]
    np.testing.assert_allclose(np.linalg.norm(gs[:, -1, :], axis=1), r, rtol=1e-10)
    np.testing.assert_allclose(np.linalg.det(gs), 1.0, atol=1e-9)


@pytest.mark.parametrize("m", [2, 3, 4])
def test_round_trip_many(m):
    n = 10_000 if m < 4 else 2_000
    vecs = random_charts(m, n, seed=100 + m)
    gs = compose_arrays(vecs, m)
    worst = 0.0
    for g in gs:
        worst = max(worst, np.abs(compose(decompose(g)) - g).max())
    assert worst < 1e-9


@pytest.mark.parametrize("m", [2, 3, 4, 5])
def test_round_trip_recovers_coordinates(m):
    vecs = random_charts(m, 50, seed=7 * m)
    for v, g in zip(vecs, compose_arrays(vecs, m)):
        np.testing.assert_allclose(decompose(g).to_vector(), v, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 4), st.integers(0, 2**32 - 1))
def test_round_trip_exp_products(m, seed):
    rng = np.random.default_rng(seed)
    g = np.eye(m)
    for X in build_basis(m).elements:
        g = g @ expm(rng.uniform(-0.3, 0.3) * X)
    assert np.abs(compose(decompose(g)) - g).max() < 1e-9


@pytest.mark.parametrize("m", [3, 4, 5])
def test_kh_commutes_with_radial(m):
    rng = np.random.default_rng(m)
    for _ in range(10):
        phi = rng.uniform(-1, 1, (m - 1) * (m - 2) // 2)
        k = np.eye(m)
        k[: m - 1, : m - 1] = so_compose_arrays(phi, m - 1)[0]
        a = a_radial(rng.uniform(0.1, 10), m)
        np.testing.assert_allclose(k @ a, a @ k, atol=1e-12)


def test_decompose_errors():
    with pytest.raises(DomainError):
        decompose(np.diag([2.0, 2.0, 2.0]))
    with pytest.raises(DomainError):
        decompose(np.eye(3), m=2)
    # e_3 g = e_1: the first Euler cosine vanishes
    with pytest.raises(ChartSingularityError):
        decompose(np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]))


def test_chart_validation():
    with pytest.raises(DomainError):
        CoordinateChart([0.0], [], [], -1.0, [0.0])
    with pytest.raises(DomainError):
        CoordinateChart([0.0, 0.0], [], [], 1.0, [0.0])
    with pytest.raises(DomainError):
        compose(CoordinateChart.zero(3), m=4)


# ---------------------------------------------------------------------------
# Haar density


def test_density_at_identity():
    for m in (2, 3, 4):
        assert haar_density(CoordinateChart.zero(m)) == pytest.approx(1.0)


@pytest.mark.parametrize("m", [2, 3, 4, 5])
def test_closed_form_matches_jacobian(m):
    vecs = random_charts(m, 8, seed=50 + m, scale=0.6)
    for v in vecs:
        c = CoordinateChart.from_vector(v, m)
        assert haar_density(c, method="closed") == pytest.approx(haar_density(c, method="jacobian"), rel=1e-6)


def test_density_independent_of_x():
    for m in (2, 3, 4):
        vecs = random_charts(m, 100, seed=m)
        moved = vecs.copy()
        moved[:, : chart_dims(m)["x"]] = np.random.default_rng(1).normal(size=(100, chart_dims(m)["x"]))
        np.testing.assert_allclose(haar_density_arrays(vecs, m), haar_density_arrays(moved, m))


def test_density_independent_of_phi_m3():
    vecs = random_charts(3, 100, seed=3)
    moved = vecs.copy()
    moved[:, 4] = np.random.default_rng(2).uniform(-3, 3, 100)
    np.testing.assert_allclose(haar_density_arrays(vecs, 3), haar_density_arrays(moved, 3))


def test_density_depends_on_phi_m4_like_jacobian():
    # for m >= 4 the SO(m-1) Euler density makes the phi dependence genuine
    base = CoordinateChart.zero(4, r=1.5)
    tilted = CoordinateChart(base.x, base.t, [0.0, 0.7, 0.2], 1.5, base.theta)
    closed = haar_density(tilted) / haar_density(base)
    numeric = haar_density(tilted, method="jacobian") / haar_density(base, method="jacobian")
    assert closed == pytest.approx(math.cos(0.7), rel=1e-12)
    assert numeric == pytest.approx(closed, rel=1e-6)


@pytest.mark.parametrize("m", [2, 3, 4, 5])
def test_sphere_density_integrates_to_area(m):
    area = 2 * math.pi ** (m / 2) / math.gamma(m / 2)
    if m == 2:
        total = 2 * math.pi
    else:
        ranges = [(-math.pi / 2, math.pi / 2)] * (m - 2) + [(-math.pi, math.pi)]
        total, _ = integrate.nquad(lambda *th: sphere_density_arrays(np.array(th), m)[0], ranges)
    assert total == pytest.approx(area, rel=1e-8)


def test_sphere_density_bounded():
    theta = np.random.default_rng(0).uniform(-math.pi / 2, math.pi / 2, (10_000, 2))
    assert sphere_density_arrays(theta, 3).max() <= 1.0


def test_sphere_points_unit():
    theta = np.random.default_rng(1).uniform(-1.5, 1.5, (100, 4))
    np.testing.assert_allclose(np.linalg.norm(sphere_point_arrays(theta), axis=1), 1.0)


def test_singular_chart_density_rejected():
    c = CoordinateChart([0.0, 0.0, 0.0], [0.0], [0.0], 1.0, [math.pi / 2, 0.0])
    with pytest.raises(ChartSingularityError):
        haar_density(c)
    assert not in_domain_arrays(c.to_vector()[None, :], 3)[0]


# ---------------------------------------------------------------------------
# Monte-Carlo invariance


def test_identity_translation_is_noise():
    res = haar_invariance_check(2, np.eye(2), samples=200_000, seed=1)
    assert res.discrepancy < 4 * res.discrepancy_stderr


def test_m2_upper_triangular():
    g0 = np.array([[1.0, 0.12], [0.0, 1.0]]) @ np.diag([1.05, 1 / 1.05])
    res = haar_invariance_check(2, g0, samples=1_000_000, seed=11)
    assert res.discrepancy < 0.02


def test_m3_rotation():
    g0 = expm(0.1 * build_basis(3).k_part[0])
    res = haar_invariance_check(3, g0, samples=1_000_000, seed=12)
    assert res.discrepancy < 0.02


def test_two_seeds_consistent():
    g0 = random_translation(3, 0.15, 5)
    a = haar_invariance_check(3, g0, samples=300_000, seed=1)
    b = haar_invariance_check(3, g0, samples=300_000, seed=2)
    se = math.hypot(a.stderr_translated, b.stderr_translated)
    assert abs(a.integral_translated - b.integral_translated) < 3 * se


def test_deterministic_and_thread_independent():
    g0 = random_translation(2, 0.2, 3)
    a = haar_invariance_check(2, g0, samples=40_000, seed=9, blocks=4)
    b = haar_invariance_check(2, g0, samples=40_000, seed=9, blocks=4, workers=3)
    assert a == b


def test_wrong_density_is_detected():
    """Dropping the r^(m-1) factor must break invariance well beyond the noise."""
    def no_radial(vecs, m):
        r = vecs[:, chart_dims(m)["x"] + chart_dims(m)["t"] + chart_dims(m)["phi"]]
        return haar_density_arrays(vecs, m) / r ** (m - 1)

    g0 = expm(0.15 * build_basis(3).a_part)
    good = haar_invariance_check(3, g0, samples=200_000, seed=2)
    bad = haar_invariance_check(3, g0, samples=200_000, seed=2, density=no_radial)
    assert good.discrepancy < 4 * good.discrepancy_stderr
    assert bad.discrepancy > 10 * bad.discrepancy_stderr


def test_support_escaping_chart():
    with pytest.raises(ChartError):
        haar_invariance_check(3, np.eye(3), f=FrobeniusBump(radius=3.0), samples=1000)


def test_bump_values():
    f = FrobeniusBump(0.25)
    assert f(np.eye(3)[None])[0] == 1.0
    assert f(2 * np.eye(3)[None])[0] == 0.0
