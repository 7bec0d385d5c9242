import numpy as np
import pytest

from curvlab import slicing as sl
from curvlab.errors import IncompleteSlicing, InfeasiblePair, WrongOrder
from curvlab.grassmann import certify
from curvlab.models import build_chart, bumpy_torus, sphere_torus
from curvlab.variation import DiscreteHypersurface, WeightField, assemble_stability_operator, hessian_normal

T3 = build_chart("torus(3)")


@pytest.fixture(scope="module")
def flat():
    return sl.build_slicing(T3, 2, resolution=32)


@pytest.fixture(scope="module")
def bumpy():
    return sl.build_slicing(build_chart(bumpy_torus()), 2, resolution=32)


def test_flat_slicing_trivial(flat):
    assert all(sl.slicing_invariants(flat).values())
    for L in flat.levels:
        assert abs(L.lambda_k) < 1e-10
        np.testing.assert_allclose(L.v, 1.0, atol=1e-10)
        np.testing.assert_allclose(L.surface.data.H, 0.0, atol=1e-12)
    tb = sl.main_inequality(flat)
    for arr in (tb.R, tb.E, tb.G, tb.Cm):
        assert np.max(np.abs(arr)) < 1e-12
    assert abs(tb.integral) < 1e-10


def test_flat_identities_vanish(flat):
    for k in (1, 2):
        assert np.max(np.abs(sl.first_slicing_identity_residual(flat, k))) < 1e-10
    assert np.max(np.abs(sl.second_slicing_identity_residual(flat, 1))) < 1e-10
    assert sl.gradient_estimate_check(flat)["min_slack"] >= -1e-12
    assert np.max(np.abs(sl.iterated_gauss_check(flat))) < 1e-12
    full = sl.full_slicing_form(flat)
    assert np.max(np.abs(full["lhs"])) < 1e-12 and np.max(np.abs(full["rhs"])) < 1e-12


def test_bumpy_invariants(bumpy):
    inv = sl.slicing_invariants(bumpy)
    assert all(inv.values()), inv
    for L in bumpy.levels:
        assert L.lambda_k >= -1e-6
        assert L.surface.info["stability_min"] >= L.lambda_k - 1e-9
    tb = sl.main_inequality(bumpy)
    assert np.all(np.isfinite(tb.R + tb.E + tb.G))
    assert tb.Lambda == bumpy.level(1).lambda_k


def test_eigen_form_consistency(bumpy):
    L = bumpy.level(1)
    eigen = sl.second_slicing_identity_residual(bumpy, 1, form="eigen")
    linear = sl.eigen_equation_residual(bumpy, 1)
    # same stored fields, rearranged; rounding scales with the operator norm
    scale = assemble_stability_operator(L.surface, L.weight_prev, check=False).norm_bound()
    assert np.max(np.abs(eigen - linear)) < 1e-12 * scale


def test_determinism():
    chart = build_chart(bumpy_torus())
    a = sl.build_slicing(chart, 2, resolution=32, seed=4)
    b = sl.build_slicing(chart, 2, resolution=32, seed=4)
    assert a.to_dict() == b.to_dict()


def test_order_one_flat():
    s = sl.build_slicing(T3, 1, resolution=32)
    tb = sl.main_inequality(s)
    assert abs(tb.integral) < 1e-12
    with pytest.raises(WrongOrder):
        sl.full_slicing_form(s)
    with pytest.raises(IncompleteSlicing):
        sl.second_slicing_identity_residual(s, 1)


def test_refusals():
    with pytest.raises(WrongOrder):
        sl.build_slicing(build_chart("torus(4)"), 2)
    with pytest.raises(WrongOrder):
        sl.build_slicing(T3, 3)
    with pytest.raises(WrongOrder):
        sl.build_slicing(build_chart(sphere_torus(3, 1)), 2)
    with pytest.raises(InfeasiblePair):
        sl.theorem_gate(build_chart("torus(8)"), 8, 3)


def test_analytic_level_set_identity():
    eps = 0.2
    rho = WeightField(lambda X: eps * np.cos(2 * np.pi * np.asarray(X)[..., 2]))
    for level, critical in ((0.3, False), (0.5, True)):
        hs = DiscreteHypersurface.flat(T3, 32, level=level)
        D = hs.data
        closed = -eps * (2 * np.pi) ** 2 * np.cos(2 * np.pi * level)
        # both sides by hand: Delta_S log rho = 0, Hess(nu, nu) = Delta log rho = closed, H = 0
        assert np.max(np.abs(hs.divergence_laplacian(rho.log(D.X)))) < 1e-10
        assert np.max(np.abs(hessian_normal(rho, D) - closed)) < 1e-5
        assert np.max(np.abs(sl.ambient_laplacian(rho, D) - closed)) < 1e-5
        res = sl.laplacian_split_residual(hs, rho, critical=critical)
        assert np.max(np.abs(res)) < 1e-10


def test_gate_flat_consistent(flat):
    cert = certify(T3, 2, {"count": 4, "seed": 0}, restarts=4)
    gate = sl.theorem_gate(T3, 3, 2, slicing=flat, certificate=cert)
    assert gate["slicing_valid"] and gate["consistent"]
    assert gate["certificate_verdict"] == "nonnegative"


def test_gate_flags_contradiction(flat):
    class Positive:
        verdict = "positive"
        minima = np.array([1.0])

    gate = sl.theorem_gate(T3, 3, 2, slicing=flat, certificate=Positive())
    assert gate["contradiction"] and not gate["consistent"]
