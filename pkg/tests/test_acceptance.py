"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is echoed in the terminal summary.
"""

import time

import numpy as np
import pytest

from curvlab import fixtures, lemmas
from curvlab import slicing as sl
from curvlab.curvature import curvature_report, intermediate_curvature, intermediate_scalar_curvature
from curvlab.errors import WrongOrder
from curvlab.geometry import complete_frame, haar_random_frame
from curvlab.grassmann import certify, random_algebraic_tensor
from curvlab.models import build_chart, bumpy_torus, hopf_chart, sphere_torus
from curvlab.variation import (assemble_stability_operator, convergence_order, fd_first_variation,
                               fd_second_variation, first_eigenpair, first_variation,
                               gauss_curvature_defect, second_variation)

RESULTS = {}
FD_TOL = 5e-4


def record(n, ok, detail):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def flat_slicing():
    return sl.build_slicing(build_chart("torus(3)"), 2, resolution=128)


@pytest.fixture(scope="module")
def bumpy_slicings():
    chart = build_chart(bumpy_torus(0.05))
    return {R: sl.build_slicing(chart, 2, resolution=R) for R in (32, 64, 128)}


def test_criterion_01_dimension_condition():
    t0 = time.perf_counter()
    by = {(r.n, r.m): r for r in lemmas.dimension_table(50)}
    low = all(by[(n, m)].feasible for n in range(2, 8) for m in range(1, n))
    eight = not by[(8, 3)].feasible and not by[(8, 4)].feasible
    edge = all(by[(n, m)].feasible for n in range(2, 51) for m in {1, 2, n - 2, n - 1} if 1 <= m <= n - 1)
    dt = time.perf_counter() - t0
    record(1, low and eight and edge and dt < 1.0,
           f"n<=7 feasible={low}, (8,3)/(8,4) infeasible={eight}, edge orders={edge}, {dt:.3f} s")


def test_criterion_02_sphere_torus_certificates():
    t0 = time.perf_counter()
    worst_pos, worst_non = 0.0, (np.inf, -np.inf)
    ok = True
    for n, m in [(4, 2), (5, 2), (5, 3), (6, 3)]:
        chart = build_chart(sphere_torus(n, m))
        pos = certify(chart, m + 1, {"count": 10, "seed": n * 10 + m}, restarts=16, seed=1)
        non = certify(chart, m, {"count": 10, "seed": n * 10 + m}, restarts=16, seed=2)
        dev = float(np.max(np.abs(pos.minima - (n - m - 1))))
        worst_pos = max(worst_pos, dev)
        worst_non = (min(worst_non[0], non.minima.min()), max(worst_non[1], non.minima.max()))
        ok &= pos.verdict == "positive" and dev <= 1e-4
        ok &= non.verdict == "nonnegative" and non.minima.min() >= -1e-7 and non.minima.max() <= 1e-6
    dt = time.perf_counter() - t0
    record(2, ok and dt < 120, f"order m+1 max |min - (n-m-1)| = {worst_pos:.2e}; "
           f"order m minima in [{worst_non[0]:.1e}, {worst_non[1]:.1e}]; {dt:.1f} s")


SCALAR_MODELS = ["sphere(3,1)", "sphere(4,2.0)", "product(sphere(2,1),torus(2))",
                 "product(sphere(3,1.5),sphere(2,1))", "product(sphere(2,1),torus(3))",
                 "conformal(torus(4),[[0.1,[1,0,1,0],0.2],[0.05,[0,1,1,-1],1.0]])"]


def scalar_charts():
    return [build_chart(t) for t in SCALAR_MODELS] + [build_chart(bumpy_torus()), hopf_chart()]


def test_criterion_03_scalar_relation():
    rng = np.random.default_rng(3)
    charts = scalar_charts()
    worst_a, worst_fd = 0.0, 0.0
    for trial in range(1000):
        chart = charts[trial % len(charts)]
        x = chart.sample_points(1, seed=trial)[0]
        n = chart.dim
        m = int(rng.integers(1, n))
        E = complete_frame(haar_random_frame(trial, chart, x, n)).completed
        rep = curvature_report(chart, x, frame=E, path="auto")
        I = np.eye(n)
        lhs = intermediate_scalar_curvature(rep.tensor, I, m) + 2 * intermediate_curvature(rep.tensor, I, m)
        worst_a = max(worst_a, abs(lhs - rep.scalar))
        fd = curvature_report(chart, x, frame=E, path="fd").tensor
        lhs_fd = intermediate_scalar_curvature(fd, I, m) + 2 * intermediate_curvature(fd, I, m)
        worst_fd = max(worst_fd, abs(lhs_fd - rep.scalar))
    record(3, worst_a < 1e-9 and worst_fd < 1e-4,
           f"analytic max residual {worst_a:.1e} (<1e-9), FD {worst_fd:.1e} (<1e-4), 1000 triples")


def test_criterion_04_span_invariance():
    rng = np.random.default_rng(4)
    charts = scalar_charts()
    worst = 0.0
    for trial in range(1000):
        if trial % 2:
            chart = charts[trial % len(charts)]
            x = chart.sample_points(1, seed=trial)[0]
            T = curvature_report(chart, x).tensor
        else:
            T = random_algebraic_tensor(rng, int(rng.integers(3, 7)))
        n = T.dim
        m = int(rng.integers(1, n))
        Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        A, _ = np.linalg.qr(rng.standard_normal((m, m)))
        B, _ = np.linalg.qr(rng.standard_normal((n - m, n - m)))
        Q2 = Q.copy()
        Q2[:, :m] = Q[:, :m] @ A
        Q2[:, m:] = Q[:, m:] @ B
        worst = max(worst, abs(intermediate_curvature(T, Q2, m) - intermediate_curvature(T, Q, m)))
    record(4, worst < 1e-9, f"max change {worst:.1e} over 1000 rotations (<1e-9)")


def test_criterion_05_variation_fd_agreement():
    t0 = time.perf_counter()
    ladder = [32, 64, 128]
    worst1, worst2, min_order = 0.0, 0.0, np.inf
    for seed in range(20):
        sc = fixtures.random_scenario(seed)
        errs = []
        for R in ladder:
            hs = sc.surface(R)
            f = sc.speed_on(hs)
            b = fd_first_variation(hs, sc.rho, f)
            errs.append(abs(first_variation(hs, sc.rho, f) - b) / abs(b))
        worst1 = max(worst1, errs[-1])
        min_order = min(min_order, convergence_order(ladder, errs))
        sc2 = fixtures.random_scenario(seed, critical=True)
        hs = sc2.surface(128)
        f = sc2.speed_on(hs)
        b = fd_second_variation(hs, sc2.rho, f)
        worst2 = max(worst2, abs(second_variation(hs, sc2.rho, f) - b) / abs(b))
    dt = time.perf_counter() - t0
    record(5, worst1 <= 1e-6 and worst2 <= 1e-4 and min_order >= 1.8 and dt < 300,
           f"first rel {worst1:.1e} (<=1e-6), second rel {worst2:.1e} (<=1e-4), "
           f"min order {min_order:.2f} (>=1.8), {dt:.0f} s")


def test_criterion_06_stability_spectrum():
    eq = first_eigenpair(assemble_stability_operator(fixtures.equator_s3(128)))
    flat = first_eigenpair(assemble_stability_operator(fixtures.flat_subtorus(128)))
    v = flat.eigenfunction
    ok = (abs(eq.lambda_1 + 2) <= 1e-2 and abs(flat.lambda_1) <= 1e-10 and np.all(v > 0)
          and np.ptp(v) <= 1e-10 * np.max(v))
    record(6, ok, f"equator lambda_1 = {eq.lambda_1:.6f}, flat lambda_1 = {flat.lambda_1:.1e}, "
           f"flat eigenfunction spread {np.ptp(v):.1e}")


def test_criterion_07_lemma_sweep():
    t0 = time.perf_counter()
    violations, min_slack, worst_eq = 0, np.inf, 0.0
    pairs = [(n, m) for n in range(3, 9) for m in range(2, n) if lemmas.is_feasible(n, m)]
    for n, m in pairs:
        for s in lemmas.sweep_pair(n, m, trials=10**5, seed=7):
            violations += s.violations
            min_slack = min(min_slack, s.min_slack)
        for s in lemmas.equality_checks(n, m):
            worst_eq = max(worst_eq, abs(s.min_slack))
    flip = {s.name: s for s in lemmas.sweep_pair(8, 3, trials=10**4, seed=7)}["V_m >= 0 (sign flip)"]
    dt = time.perf_counter() - t0
    ok = violations == 0 and min_slack >= -1e-12 and worst_eq < 1e-10 and flip.violations > 0 and dt < 600
    record(7, ok, f"{len(pairs)} feasible pairs x 1e5 trials: {violations} violations, min slack "
           f"{min_slack:.1e}; equality |slack| {worst_eq:.1e}; (8,3) sign-flip witnesses "
           f"{flip.violations}/{flip.trials}; {dt:.0f} s")


def test_criterion_08_iterated_gauss():
    rng = np.random.default_rng(8)
    synth = 0.0
    for trial in range(10):
        n = 3 + trial % 6
        m = 2 + trial % (n - 2)
        R = lemmas.random_tensors(rng, n, 1000)
        h = lemmas.random_levels(rng, n, m, 1000)
        synth = max(synth, float(np.max(np.abs(lemmas.iterated_gauss_residual(R, h[:m - 1], m)))))
    ladder = [32, 64, 128]
    errs = [float(np.max(np.abs(gauss_curvature_defect(fixtures.hopf_graph(R))))) for R in ladder]
    order = convergence_order(ladder, errs)
    record(8, synth < 1e-12 and errs[-1] < 1e-3 and order >= 1.8,
           f"synthetic max {synth:.1e} over 1e4 trials; geometric {errs[-1]:.1e} at R=128, order {order:.2f}")


def slicing_summary(s):
    tb = sl.main_inequality(s)
    full = sl.full_slicing_form(s, tb)
    return tb, full, all(sl.slicing_invariants(s).values())


def test_criterion_09_end_to_end_slicing(flat_slicing, bumpy_slicings):
    t0 = time.perf_counter()
    ok = True
    parts = []
    for name, s in (("flat", flat_slicing), ("bumpy", bumpy_slicings[128])):
        tb, full, inv = slicing_summary(s)
        ok &= inv and tb.integral <= FD_TOL and full["min_slack"] >= -FD_TOL
        ok &= full["two_cm_minus_scal"] <= 1e-4
        parts.append(f"{name}: invariants={inv}, integral {tb.integral:.2e}, full slack "
                     f"{full['min_slack']:.1e}, |2C2-scal| {full['two_cm_minus_scal']:.0e}")
    record(9, ok, "; ".join(parts) + f"; {time.perf_counter() - t0:.0f} s after build")


def test_slicing_identities_refine(bumpy_slicings):
    ladder = sorted(bumpy_slicings)
    first = [max(float(np.max(np.abs(sl.first_slicing_identity_residual(bumpy_slicings[R], k))))
                 for k in (1, 2)) for R in ladder]
    second = [float(np.max(np.abs(sl.second_slicing_identity_residual(bumpy_slicings[R], 1))))
              for R in ladder]
    gauss = [float(np.max(np.abs(sl.iterated_gauss_check(bumpy_slicings[R])))) for R in ladder]
    print(f"first identity {first}, second identity {second}, iterated Gauss {gauss}")
    assert first[-1] < FD_TOL and second[-1] < FD_TOL
    assert convergence_order(ladder, first) >= 1.8
    assert convergence_order(ladder, second) >= 1.8
    assert gauss[-1] < FD_TOL
    s = bumpy_slicings[128]
    assert sl.main_inequality(s).cross_check_gap < FD_TOL
    assert sl.gradient_estimate_check(s)["min_slack"] >= -1e-6


def test_criterion_10_theorem_gate(flat_slicing, bumpy_slicings):
    gates = []
    for name, chart, s in (("flat", build_chart("torus(3)"), flat_slicing),
                           ("bumpy", build_chart(bumpy_torus(0.05)), bumpy_slicings[128])):
        g = sl.theorem_gate(chart, 3, 2, slicing=s, sample_count=8, restarts=8)
        gates.append((name, g["certificate_verdict"], g["slicing_valid"], g["consistent"]))
    # positive C_2 on S^2 x S^1: the certificate is positive and no slicing is produced
    chart = build_chart(sphere_torus(3, 1))
    cert = certify(chart, 2, {"count": 8, "seed": 0}, restarts=8)
    try:
        sl.build_slicing(chart, 2, resolution=32)
        refused = False
    except WrongOrder:
        refused = True
    gates.append(("S2xS1", cert.verdict, not refused, cert.verdict != "positive" or refused))
    ok = all(g[3] for g in gates)
    record(10, ok, "; ".join(f"{n}: certificate {v}, slicing {'valid' if s else 'none'}"
                             for n, v, s, _ in gates) + " -> no contradiction" if ok else "")
