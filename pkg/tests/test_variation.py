import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st
from scipy.integrate import quad

from curvlab import fixtures
from curvlab.errors import IterationLimit, NonpositiveWeight, NotCritical
from curvlab.models import build_chart, euclidean_polar_chart
from curvlab.variation import (DiscreteHypersurface, StabilityOperator, WeightField,
                               assemble_stability_operator, convergence_order, critical_residual,
                               fd_first_variation, fd_second_variation, first_eigenpair,
                               first_variation, minimize_weighted_area, second_variation,
                               second_variation_unweighted, stability_potential, weighted_area)

T3 = build_chart("torus(3)")


def z_weight(fn, dfn, ddfn):
    """Weight whose logarithm depends on the vertical coordinate only."""
    def grad(X):
        g = np.zeros(np.shape(X))
        g[..., 2] = dfn(np.asarray(X)[..., 2])
        return g

    def hess(X):
        H = np.zeros(np.shape(X) + (3,))
        H[..., 2, 2] = ddfn(np.asarray(X)[..., 2])
        return H

    return WeightField(lambda X: fn(np.asarray(X)[..., 2]), grad, hess)


EXP_Z = z_weight(lambda z: z, lambda z: np.ones_like(z), lambda z: np.zeros_like(z))


def smooth_function(hs, seed):
    rng = np.random.default_rng(seed)
    p = hs.base_points / np.array(hs.periods)
    f = np.full(len(p), rng.normal())
    for _ in range(3):
        k = rng.integers(-2, 3, size=p.shape[1])
        f += rng.normal() * np.cos(2 * np.pi * p @ k + rng.uniform(0, 2 * np.pi))
    return f


def sphere_graph(R, r):
    return DiscreteHypersurface(euclidean_polar_chart(), np.full((R, R), r), (2 * np.pi, 2 * np.pi),
                                height_axis=0, sheets=2)


def test_flat_area():
    hs = DiscreteHypersurface.flat(T3, 16)
    assert abs(weighted_area(hs) - 1.0) < 1e-14
    assert abs(weighted_area(hs, WeightField.constant_weight(2.0)) - 2.0) < 1e-14


def test_sine_graph_area_matches_quadrature():
    hs = DiscreteHypersurface.from_function(T3, 256, lambda p: 0.1 * np.sin(2 * np.pi * p[:, 0]))
    exact, _ = quad(lambda x: np.sqrt(1 + (0.2 * np.pi * np.cos(2 * np.pi * x)) ** 2), 0, 1,
                    epsabs=1e-13, limit=200)
    assert abs(weighted_area(hs) - exact) < 1e-8


def test_flat_first_variation_zero(rng):
    hs = DiscreteHypersurface.flat(T3, 16, level=0.2)
    assert abs(first_variation(hs, None, rng.standard_normal(hs.size))) < 1e-14


def test_exponential_weight_first_variation(rng):
    hs = DiscreteHypersurface.flat(T3, 16)
    f = rng.standard_normal(hs.size)
    np.testing.assert_allclose(critical_residual(hs, EXP_Z), 1.0, atol=1e-15)
    assert abs(first_variation(hs, EXP_Z, f) - hs.integrate(f)) < 1e-12


def test_horizontal_weight_is_critical():
    rho = WeightField.trig([(0.3, (1, 2, 0), 0.4)], (1.0, 1.0, 1.0))
    hs = DiscreteHypersurface.flat(T3, 16, level=0.4)
    assert np.max(np.abs(critical_residual(hs, rho))) < 1e-10


@pytest.mark.parametrize("r", [0.5, 1.5])
def test_round_sphere_mean_curvature(r):
    errs = []
    for R in (32, 64):
        hs = sphere_graph(R, r)
        np.testing.assert_allclose(hs.data.H, 2.0 / r, atol=1e-8)
        area = weighted_area(hs)
        assert abs(first_variation(hs) - 2.0 / r * area) < 1e-8
        errs.append(abs(area - 4 * np.pi * r * r))
    assert convergence_order([32, 64], errs) > 1.8


def test_flat_second_variation_is_dirichlet_energy():
    hs = fixtures.flat_subtorus(32)
    p = hs.base_points
    f = np.cos(2 * np.pi * p[:, 0]) + 0.5 * np.sin(4 * np.pi * p[:, 1])
    q = second_variation(hs, None, f)
    # (2 pi)^2 / 2 + 0.25 (4 pi)^2 / 2, up to 4th-order stencil error
    exact = 2 * np.pi ** 2 + 2 * np.pi ** 2
    assert q > 0
    assert abs(q - exact) / exact < 1e-3


def test_equator_second_variation():
    # exact against the discrete area; the area itself carries the O(h^2)
    # error of the polar kink
    hs = fixtures.equator_s3(64)
    q = second_variation(hs)
    assert abs(q + 2 * weighted_area(hs)) < 1e-10
    assert abs(q + 8 * np.pi) < 2e-2
    np.testing.assert_allclose(stability_potential(hs), -2.0, atol=1e-12)


def test_second_variation_requires_critical():
    hs = DiscreteHypersurface.flat(T3, 16)
    with pytest.raises(NotCritical):
        second_variation(hs, EXP_Z)
    with pytest.raises(NotCritical):
        assemble_stability_operator(hs, EXP_Z)


def test_constant_weight_reduction():
    sc = fixtures.random_scenario(3, critical=True)
    hs = sc.surface(32)
    f = sc.speed_on(hs)
    one = WeightField.constant_weight(1.0)
    assert abs(first_variation(hs, one, f) - hs.integrate(f * hs.data.H)) < 1e-12
    a = second_variation(hs, one, f, check=False)
    b = second_variation_unweighted(hs, f, check=False)
    assert abs(a - b) <= 1e-12 * max(1.0, abs(a))


@pytest.fixture(scope="module")
def scenario_operator():
    sc = fixtures.random_scenario(1, critical=True)
    hs = sc.surface(32)
    return hs, sc.rho, assemble_stability_operator(hs, sc.rho, check=False)


def test_operator_symmetry(scenario_operator):
    _, _, op = scenario_operator
    rng = np.random.default_rng(0)
    for _ in range(10):
        f, g = rng.standard_normal((2, op.mass.size))
        lhs, rhs = op.inner(op.apply(f), g), op.inner(f, op.apply(g))
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_quadratic_form_matches_second_variation(scenario_operator):
    hs, rho, op = scenario_operator
    for seed in range(100):
        f = smooth_function(hs, seed)
        a = second_variation(hs, rho, f, check=False)
        b = op.quadratic_form(f)
        assert abs(a - b) <= 1e-8 * abs(b)


def test_eigenfunction_positive(scenario_operator):
    _, _, op = scenario_operator
    rep = first_eigenpair(op)
    assert rep.positive and np.all(rep.eigenfunction > 0)


def test_flat_ground_state():
    rep = first_eigenpair(assemble_stability_operator(fixtures.flat_subtorus(32)))
    assert abs(rep.lambda_1) < 1e-10
    np.testing.assert_allclose(rep.eigenfunction, 1.0, atol=1e-10)


def test_equator_ground_state():
    rep = first_eigenpair(assemble_stability_operator(fixtures.equator_s3(32)))
    assert abs(rep.lambda_1 + 2.0) < 1e-2
    v = rep.eigenfunction
    assert np.ptp(v) / np.max(v) < 1e-6


def test_dense_eigensolver_oracle():
    rng = np.random.default_rng(7)
    base = assemble_stability_operator(fixtures.flat_subtorus(32))
    for _ in range(3):
        op = StabilityOperator(base.stiffness, base.mass, rng.uniform(0.1, 2.0, base.mass.size), base.shape)
        w = scipy.linalg.eigh(op.matrix().toarray(), np.diag(op.mass), eigvals_only=True,
                              subset_by_index=[0, 0])
        assert abs(first_eigenpair(op).lambda_1 - w[0]) < 1e-8


def test_eigen_iteration_limit():
    op = assemble_stability_operator(fixtures.equator_s3(32))
    with pytest.raises(IterationLimit) as exc:
        first_eigenpair(op, tol=1e-30, max_iter=3)
    assert exc.value.best is not None


def test_first_variation_fd_order():
    sc = fixtures.random_scenario(4)
    errs = []
    for R in (16, 32, 64):
        hs = sc.surface(R)
        f = sc.speed_on(hs)
        b = fd_first_variation(hs, sc.rho, f)
        errs.append(abs(first_variation(hs, sc.rho, f) - b) / abs(b))
    assert convergence_order([16, 32, 64], errs) >= 1.8


def test_second_variation_fd_equator():
    hs = fixtures.equator_s3(32)
    f = smooth_function(hs, 1)
    a, b = second_variation(hs, None, f), fd_second_variation(hs, None, f)
    assert abs(a - b) / abs(b) < 1e-4


def test_minimize_flat_graph():
    hs0 = DiscreteHypersurface.from_function(T3, 32, lambda p: 0.2 * np.sin(2 * np.pi * p[:, 0]))
    hs = minimize_weighted_area(hs0, None, spot_checks=0)
    assert np.ptp(hs.height) < 1e-6
    assert abs(weighted_area(hs) - 1.0) < 1e-10


def test_minimize_level_dependent_weight():
    eps = 0.3
    rho = z_weight(lambda z: eps * np.cos(2 * np.pi * z),
                   lambda z: -2 * np.pi * eps * np.sin(2 * np.pi * z),
                   lambda z: -(2 * np.pi) ** 2 * eps * np.cos(2 * np.pi * z))
    hs0 = DiscreteHypersurface.from_function(T3, 32, lambda p: 0.3 + 0.05 * np.cos(2 * np.pi * p[:, 1]))
    hs = minimize_weighted_area(hs0, rho, spot_checks=10)
    assert np.max(np.abs(critical_residual(hs, rho))) < 1e-6
    # the level where d(rho)/dz vanishes with rho minimal is z = 1/2
    np.testing.assert_allclose(hs.height, 0.5, atol=1e-6)
    assert hs.info["stability_min"] > 0


def test_weights():
    with pytest.raises(NonpositiveWeight):
        WeightField.constant_weight(0.0)
    with pytest.raises(NonpositiveWeight):
        WeightField.from_rho(lambda X: np.asarray(X)[..., 0] - 0.5).log(np.array([[0.2, 0.0, 0.0]]))
    rho = WeightField.trig([(0.2, (1, 0, 2), 0.1)], (1.0, 1.0, 1.0))
    fd = WeightField(rho.log_fn)
    X = np.random.default_rng(0).random((5, 3))
    np.testing.assert_allclose(fd.grad(X), rho.grad(X), atol=1e-9)
    np.testing.assert_allclose(fd.hess(X), rho.hess(X), rtol=1e-5, atol=1e-6)


@given(st.integers(0, 15), st.integers(0, 15), st.floats(0.1, 5.0))
def test_area_translation_and_scaling(i, j, c):
    hs = DiscreteHypersurface.from_function(
        T3, 16, lambda p: 0.1 * np.sin(2 * np.pi * p[:, 0]) * np.cos(2 * np.pi * p[:, 1]))
    base = weighted_area(hs, EXP_Z)
    assert abs(weighted_area(hs.shifted((i, j)), EXP_Z) - base) < 1e-13
    assert abs(weighted_area(hs, WeightField.constant_weight(c)) - c * weighted_area(hs)) < 1e-12 * c


def test_convergence_order_of_power_law():
    assert abs(convergence_order([32, 64, 128], [1.0, 0.25, 0.0625]) - 2.0) < 1e-12
