import numpy as np
import pytest
from hypothesis import given, strategies as st

from curvlab.curvature import (christoffel, curvature_report, intermediate_curvature,
                               intermediate_scalar_curvature, riemann_tensor, sectional_matrix,
                               subset_average_factor, subset_sum)
from curvlab.errors import BadOrder
from curvlab.geometry import MetricChart
from curvlab.grassmann import random_algebraic_tensor
from curvlab.models import build_chart, constant_curvature_tensor


def rotate_blocks(rng, E, m):
    n = E.shape[1]
    Qa, _ = np.linalg.qr(rng.standard_normal((m, m)))
    Qb, _ = np.linalg.qr(rng.standard_normal((n - m, n - m)))
    out = E.copy()
    out[:, :m] = E[:, :m] @ Qa
    out[:, m:] = E[:, m:] @ Qb
    return out


def test_flat_torus_christoffel_zero():
    G = christoffel(build_chart("torus(3)"), np.array([0.1, 0.2, 0.3]))
    assert np.all(G == 0)


def test_sphere_christoffel_closed_form():
    chart = build_chart("sphere(2,1)")
    x = np.array([0.7, 1.1])
    expected = -np.sin(0.7) * np.cos(0.7)
    assert abs(christoffel(chart, x)[0, 1, 1] - expected) < 1e-12
    assert abs(christoffel(chart, x, path="fd")[0, 1, 1] - expected) < 1e-6


def test_conformal_christoffel_fd():
    chart = MetricChart(2, lambda x: np.exp(2 * np.asarray(x)[..., 0])[..., None, None] * np.eye(2))
    assert abs(christoffel(chart, np.array([0.3, 0.4]))[0, 0, 0] - 1.0) < 1e-7


def test_sphere_sign_convention():
    T = riemann_tensor(build_chart("sphere(2,1)"), np.array([1.0, 0.5]), basis="orthonormal")
    assert abs(T(0, 1, 0, 1) - 1.0) < 1e-12


@pytest.mark.parametrize("path", ["auto", "analytic", "fd"])
def test_unit_s3_sectional(path):
    T = riemann_tensor(build_chart("sphere(3,1)"), np.array([1.0, 1.2, 0.4]), basis="orthonormal", path=path)
    K = sectional_matrix(T, np.eye(3))
    off = K[~np.eye(3, dtype=bool)]
    np.testing.assert_allclose(off, 1.0, atol=1e-4 if path == "fd" else 1e-12)


def test_flat_torus_tensor_zero():
    T = riemann_tensor(build_chart("torus(4)"), np.full(4, 0.3), basis="orthonormal", path="analytic")
    assert np.all(T.matrix == 0)


def test_product_sectional_blocks(rng):
    chart = build_chart("product(sphere(2,1),torus(2))")
    x = np.array([1.0, 2.0, 0.3, 0.6])
    T = riemann_tensor(chart, x, basis="orthonormal")
    assert abs(T(0, 1, 0, 1) - 1.0) < 1e-12
    # a plane spanned by a sphere and a torus direction is flat
    coord = riemann_tensor(chart, x)
    for _ in range(5):
        u = np.concatenate([rng.standard_normal(2), np.zeros(2)])
        v = np.concatenate([np.zeros(2), rng.standard_normal(2)])
        assert abs(coord.sectional(u, v, chart.metric(x))) < 1e-12


@pytest.mark.parametrize("n,m", [(3, 1), (4, 2), (5, 2), (5, 4)])
def test_sphere_cm_formula(n, m, rng):
    T = constant_curvature_tensor(n)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    assert abs(intermediate_curvature(T, Q, m) - (m * n - m * (m + 1) / 2)) < 1e-12


def test_s4_examples():
    T = constant_curvature_tensor(4)
    assert abs(intermediate_curvature(T, np.eye(4), 2) - 5.0) < 1e-12
    assert abs(intermediate_scalar_curvature(T, np.eye(4), 2) - 2.0) < 1e-12


def test_torus_first_frame_zero():
    chart = build_chart("product(sphere(2,1),torus(2))")
    x = np.array([1.0, 2.0, 0.3, 0.6])
    T = riemann_tensor(chart, x, basis="orthonormal")
    E = np.eye(4)[:, [2, 3, 0, 1]]
    assert abs(intermediate_curvature(T, E, 2)) < 1e-12
    assert abs(intermediate_curvature(T, E, 3) - 1.0) < 1e-12


def test_full_order_scalar_complement_vanishes(rng):
    T = random_algebraic_tensor(rng, 5)
    assert intermediate_scalar_curvature(T, np.eye(5), 4) == 0.0
    assert abs(2 * intermediate_curvature(T, np.eye(5), 4) - T.scalar()) < 1e-12


def test_order_bounds(rng):
    T = random_algebraic_tensor(rng, 4)
    for m in (0, 4):
        with pytest.raises(BadOrder):
            intermediate_curvature(T, np.eye(4), m)


@given(st.integers(3, 6), st.data())
def test_scalar_identity_random_tensor(n, data):
    m = data.draw(st.integers(1, n - 1))
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    T = random_algebraic_tensor(rng, n)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    total = intermediate_scalar_curvature(T, Q, m) + 2 * intermediate_curvature(T, Q, m)
    assert abs(total - T.scalar()) < 1e-9


@given(st.integers(3, 6), st.data())
def test_span_invariance(n, data):
    m = data.draw(st.integers(1, n - 1))
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    T = random_algebraic_tensor(rng, n)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    base = intermediate_curvature(T, Q, m)
    assert abs(intermediate_curvature(T, rotate_blocks(rng, Q, m), m) - base) < 1e-9


@given(st.integers(3, 6), st.data())
def test_sectional_sum(n, data):
    m = data.draw(st.integers(1, n - 1))
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    T = random_algebraic_tensor(rng, n)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    direct = sum(T.sectional(Q[:, p], Q[:, q]) for p in range(m) for q in range(p + 1, n))
    assert abs(intermediate_curvature(T, Q, m) - direct) < 1e-9


@pytest.mark.parametrize("n,m", [(3, 1), (4, 2), (5, 3), (6, 2)])
def test_subset_average_proportional_to_scal(n, m, rng):
    factor = subset_average_factor(n, m)
    for _ in range(5):
        T = random_algebraic_tensor(rng, n)
        assert abs(subset_sum(T, np.eye(n), m) - factor * T.scalar()) < 1e-9


@pytest.mark.parametrize("model", ["sphere(3,1)", "product(sphere(2,1),torus(2))", "sphere(4,2.0)",
                                   "conformal(torus(3),[[0.05,[1,0,1],0.0],[0.03,[0,1,-1],0.7]])"])
def test_fd_matches_analytic(model):
    chart = build_chart(model)
    for x in chart.sample_points(3, seed=5):
        a = curvature_report(chart, x, path="analytic").tensor.matrix
        f = curvature_report(chart, x, path="fd").tensor.matrix
        assert np.max(np.abs(a - f)) < 1e-4


def test_report_trace():
    rep = curvature_report(build_chart("sphere(3,2.0)"), np.array([1.0, 1.0, 1.0]))
    assert abs(rep.scalar - 6 / 4) < 1e-12
    assert rep.trace_defect() < 1e-12
