"""Discrete stable weighted slicings and the checks built on them.

A slicing of order ``m`` in a three-dimensional periodic chart is built
level by level: ``Sigma_1`` is a minimising graph surface, ``Sigma_2`` a
minimising graph curve inside ``Sigma_1`` for the weight ``rho_1``.  Each
level below the ambient is given its own chart (coordinates of the graph
base, induced metric), so the same hypersurface code runs at every level.

Fields living on a level (heights, ``log rho_k``) are interpolated by
trigonometric polynomials when they must be evaluated off-grid.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import grids, lemmas
from .curvature import metric_derivatives, riemann_coordinate
from .errors import IncompleteSlicing, IterationLimit, WrongOrder
from .geometry import MetricChart
from .variation import (DiscreteHypersurface, StabilityReport, WeightField, assemble_stability_operator,
                        critical_residual, first_eigenpair, graph_geometry, hessian_normal,
                        minimize_weighted_area, ricci_normal, second_variation)

SLICE_TOL = 1e-9       # Newton target for each level
CRITICAL_TOL = 1e-5    # invariant on stored levels
STABLE_TOL = 1e-6      # lambda_k >= -STABLE_TOL
FD_TOL = 5e-4          # geometric residual budget at R = 128


# ---------------------------------------------------------------------------
# the chart of a graph hypersurface

def graph_chart(ambient: MetricChart, height: grids.FourierField, height_axis=None, name=None) -> MetricChart:
    """Chart of the graph ``x_h = u(x')`` with coordinates ``x'``.

    The metric is the induced one, ``T G T^T`` with ``T_i = e_i + u_i e_h``.
    First and second metric derivatives come from the product rule applied
    to third-order jets of ``u`` and the ambient metric derivatives.
    """
    d = ambient.dim
    b = d - 1
    h = d - 1 if height_axis is None else height_axis
    base = [a for a in range(d) if a != h]

    def lift(x, order):
        x = np.asarray(x, float)
        flat = x.reshape(-1, b)
        jets = height.jets(flat, order)
        N = flat.shape[0]
        X = np.empty((N, d))
        X[:, base] = flat
        X[:, h] = jets[0]
        T = np.zeros((N, b, d))
        for i, a in enumerate(base):
            T[:, i, a] = 1.0
        T[:, :, h] = jets[1]
        return X, T, jets

    def metric_fn(x):
        x = np.asarray(x, float)
        X, T, _ = lift(x, 1)
        G = ambient.metric_fn(X)
        return np.einsum("nia,nab,njb->nij", T, G, T).reshape(x.shape[:-1] + (b, b))

    def derivatives(x):
        x = np.asarray(x, float)
        X, T, J = lift(x, 3)
        G, dg, ddg, _ = metric_derivatives(ambient, X)
        N = X.shape[0]
        dT = np.zeros((N, b, b, d))          # dT[n, k, i] = d_k T_i
        dT[..., h] = J[2]
        ddT = np.zeros((N, b, b, b, d))      # ddT[n, k, l, i] = d_k d_l T_i
        ddT[..., h] = J[3]
        Gk = np.einsum("nkc,ncab->nkab", T, dg)
        Gkl = (np.einsum("nkc,nle,nceab->nklab", T, T, ddg, optimize=True)
               + np.einsum("nkl,nab->nklab", J[2], dg[:, h]))
        A = np.einsum("nkia,nab,njb->nkij", dT, G, T)
        dgam = A + np.swapaxes(A, -1, -2) + np.einsum("nia,nkab,njb->nkij", T, Gk, T)
        t1 = np.einsum("nklia,nab,njb->nklij", ddT, G, T)
        t2 = np.einsum("nkia,nlab,njb->nklij", dT, Gk, T)      # dT_k G_l T^T
        t4 = np.einsum("nlia,nkab,njb->nklij", dT, Gk, T)      # dT_l G_k T^T
        t3 = np.einsum("nkia,nab,nljb->nklij", dT, G, dT)      # dT_k G dT_l^T
        t5 = np.einsum("nia,nklab,njb->nklij", T, Gkl, T)
        # the nine product-rule terms pair up under i <-> j, except T G_kl T^T
        sym = t1 + t2 + t4 + t3
        ddgam = sym + np.swapaxes(sym, -1, -2) + t5
        shp = x.shape[:-1]
        return dgam.reshape(shp + (b, b, b)), ddgam.reshape(shp + (b, b, b, b))

    periods = tuple(ambient.periods[a] for a in base)
    domain = tuple(ambient.domain[a] for a in base)
    labels = tuple(ambient.labels[a] for a in base) if ambient.labels else ()
    return MetricChart(b, metric_fn, derivatives, None, periods, domain,
                       name or f"graph in {ambient.name}", labels)


def graph_data_at(ambient: MetricChart, height: grids.FourierField, points, height_axis=None):
    """Hypersurface geometry of an interpolated graph at arbitrary base points."""
    h = ambient.dim - 1 if height_axis is None else height_axis
    jets = height.jets(points, 2)
    return graph_geometry(ambient, h, points, jets[0], jets[1], jets[2])


# ---------------------------------------------------------------------------
# data model

@dataclass(frozen=True, eq=False)
class SliceLevel:
    """Level ``k >= 1``: ``Sigma_k`` inside the chart of ``Sigma_{k-1}``.

    ``weight_prev`` is ``rho_{k-1}`` on that chart; ``rho`` holds
    ``rho_k = rho_{k-1} v_k`` on the grid of ``Sigma_k``; ``chart`` and
    ``weight`` are the chart of ``Sigma_k`` and ``rho_k`` on it.
    """

    k: int
    surface: DiscreteHypersurface
    weight_prev: WeightField
    stability: StabilityReport
    rho: np.ndarray
    chart: MetricChart
    weight: WeightField
    height: grids.FourierField

    @property
    def lambda_k(self) -> float:
        return self.stability.lambda_1

    @property
    def v(self) -> np.ndarray:
        return self.stability.eigenfunction


@dataclass(frozen=True, eq=False)
class Slicing:
    ambient: MetricChart
    m: int
    levels: list
    resolution: int
    complete: bool = True
    info: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.ambient.dim

    def level(self, k) -> SliceLevel:
        return self.levels[k - 1]

    def to_dict(self) -> dict:
        out = {"ambient": self.ambient.name, "m": self.m, "resolution": self.resolution,
               "complete": self.complete, "levels": []}
        for L in self.levels:
            hs = L.surface
            out["levels"].append({
                "k": L.k,
                "lambda": L.lambda_k,
                "eigen_residual": L.stability.residual,
                "eigenfunction_min": float(np.min(L.v)),
                "critical_residual": float(np.max(np.abs(critical_residual(hs, L.weight_prev)))),
                "weighted_area": hs.info.get("area"),
                "newton_iterations": hs.info.get("iterations"),
                "stability_spot_min": hs.info.get("stability_min"),
                "height_sha256": hashlib.sha256(np.ascontiguousarray(hs.height).tobytes()).hexdigest(),
                "rho_sha256": hashlib.sha256(np.ascontiguousarray(L.rho).tobytes()).hexdigest(),
            })
        return out


def _log_weight(values, periods, name):
    return WeightField.fourier(grids.FourierField(np.log(values), periods), name=name)


def build_slicing(chart: MetricChart, m: int, resolution=64, seed=0, tol=SLICE_TOL, max_iters=60,
                  spot_checks=50) -> Slicing:
    """Stable weighted slicing of order ``m`` (1 or 2) of a fully periodic 3-dimensional chart.

    Each level minimises the ``rho_{k-1}``-weighted area among graphs,
    takes the ground state ``v_k`` of the weighted Jacobi operator and sets
    ``rho_k = rho_{k-1} v_k``.  A failing solver raises
    :class:`IterationLimit` whose ``best`` is the partial slicing.
    """
    if chart.dim != 3 or m not in (1, 2):
        raise WrongOrder("the discrete slicing supports a 3-dimensional ambient and m in {1, 2}")
    if not all(chart.periods):
        raise WrongOrder(f"{chart.name} has non-periodic coordinates; graph slicings need a torus chart")
    levels = []
    current = chart
    weight = WeightField.constant_weight(1.0)
    for k in range(1, m + 1):
        hs0 = DiscreteHypersurface.flat(current, resolution)
        try:
            hs = minimize_weighted_area(hs0, weight, max_iters=max_iters, tol=tol,
                                        spot_checks=spot_checks, seed=seed + k)
            op = assemble_stability_operator(hs, weight)
            rep = first_eigenpair(op)
        except IterationLimit as exc:
            partial = Slicing(chart, m, levels, resolution, complete=False, info={"failed_level": k})
            raise IterationLimit(f"level {k}: {exc}", best=partial, residual=exc.residual) from None
        prev = weight.rho(hs.data.X)
        rho = prev * rep.eigenfunction.ravel()
        height = grids.FourierField(hs.height, hs.periods, hs.offset)
        sub = graph_chart(current, height, hs.height_axis, name=f"Sigma_{k}")
        w_new = _log_weight(rho.reshape(hs.shape), hs.periods, f"rho_{k}")
        levels.append(SliceLevel(k, hs, weight, rep, rho.reshape(hs.shape), sub, w_new, height))
        current, weight = sub, w_new
    return Slicing(chart, m, levels, resolution, True, {"seed": seed, "tol": tol})


def slicing_invariants(s: Slicing) -> dict:
    """Pass/fail of the structural invariants of a slicing."""
    checks = {}
    first = s.levels[0] if s.levels else None
    checks["rho_0 constant"] = bool(first is None or first.weight_prev.constant)
    for L in s.levels:
        crit = float(np.max(np.abs(critical_residual(L.surface, L.weight_prev))))
        checks[f"level {L.k} critical"] = crit < CRITICAL_TOL
        checks[f"level {L.k} stable"] = L.lambda_k >= -STABLE_TOL
        checks[f"level {L.k} v positive"] = bool(np.all(L.v > 0))
        prev = L.weight_prev.rho(L.surface.data.X).reshape(L.surface.shape)
        checks[f"level {L.k} rho product"] = bool(np.array_equal(L.rho, prev * L.v))
    checks["complete"] = s.complete and len(s.levels) == s.m
    return checks


def _require_complete(s: Slicing):
    if not s.complete or len(s.levels) != s.m:
        raise IncompleteSlicing(f"slicing has {len(s.levels)} of {s.m} levels")


# ---------------------------------------------------------------------------
# slicing identities

def ambient_laplacian(weight: WeightField, data) -> np.ndarray:
    """``Delta log rho`` of the ambient chart at the embedding points."""
    grad = weight.grad(data.X)
    hess = weight.hess(data.X) - np.einsum("ncab,nc->nab", data.gamma_sym, grad)
    return np.einsum("nab,nab->n", data.g_inv, hess)


def laplacian_split_residual(hs: DiscreteHypersurface, weight: WeightField, critical=True) -> np.ndarray:
    """``Delta_S f + Hess f(nu, nu) - Delta f - H^2`` for ``f = log rho``.

    With ``critical=False`` the last term is ``-H <D f, nu>`` instead
    (the general submanifold formula, valid off critical points).
    """
    D = hs.data
    f = weight.log(D.X)
    lap_s = hs.divergence_laplacian(f)
    hess_nu = hessian_normal(weight, D)
    lap = ambient_laplacian(weight, D)
    if critical:
        tail = D.H ** 2
    else:
        tail = -D.H * np.einsum("na,na->n", weight.grad(D.X), D.nu)
    return (lap_s + hess_nu - lap - tail).reshape(hs.shape)


def first_slicing_identity_residual(s: Slicing, k: int) -> np.ndarray:
    """Residual of the Laplacian splitting for ``log rho_{k-1}`` on ``Sigma_k``."""
    if not 1 <= k <= len(s.levels):
        raise IncompleteSlicing(f"level {k} not available")
    L = s.level(k)
    return laplacian_split_residual(L.surface, L.weight_prev)


def _level_fields(L: SliceLevel):
    hs = L.surface
    D = hs.data
    ricci = hs.ricci_nu
    hess = np.zeros(hs.size) if L.weight_prev.constant else hessian_normal(L.weight_prev, D)
    logp = L.weight_prev.log(D.X)
    return hs, D, ricci, hess, logp


def second_slicing_identity_residual(s: Slicing, k: int, form="direct") -> np.ndarray:
    """Residual of the identity for ``Delta_{Sigma_k} log rho_k`` on ``Sigma_k``.

    ``form="direct"`` differentiates ``log rho_k`` and ``w_k`` on the grid
    (the residual then measures discretisation error).  ``form="eigen"``
    expands ``log rho_k = log rho_{k-1} + log v_k`` through ``v_k`` so that
    the residual equals the eigen-equation residual divided by ``v_k``.
    """
    if not 1 <= k <= s.m - 1 or k > len(s.levels):
        raise IncompleteSlicing(f"second identity needs 1 <= k <= m - 1 = {s.m - 1}")
    L = s.level(k)
    hs, D, ricci, hess, logp = _level_fields(L)
    lam = L.lambda_k
    v = L.v.ravel()
    lap_prev = hs.divergence_laplacian(logp)
    if form == "direct":
        logr = np.log(L.rho.ravel())
        w = np.log(v)
        lhs = hs.divergence_laplacian(logr)
        cross = hs.grad_dot(logr, w)
    elif form == "eigen":
        r = L.weight_prev.rho(D.X)
        div_w = hs.divergence_laplacian(v, weight=r)
        gp = hs.grad_dot(logp, v) / v
        gv = hs.grad_dot(v, v) / v ** 2
        lhs = lap_prev + div_w / v - gp - gv
        cross = gp + gv
    else:
        raise ValueError(f"unknown form {form!r}")
    rhs = lap_prev + hess - (lam + D.h_norm2 + ricci + cross)
    return (lhs - rhs).reshape(hs.shape)


def eigen_equation_residual(s: Slicing, k: int, form="linear") -> np.ndarray:
    """Residual of the ground-state equation on level ``k``.

    ``"linear"``: ``(lambda v - L v) / v`` with the assembled operator.
    ``"log"``: the same equation written for ``w = log v`` and
    differentiated on the grid.
    """
    L = s.level(k)
    hs, D, ricci, hess, logp = _level_fields(L)
    v = L.v.ravel()
    if form == "linear":
        op = assemble_stability_operator(hs, L.weight_prev, check=False)
        return ((L.lambda_k * v - op.apply(v)) / v).reshape(hs.shape)
    w = np.log(v)
    rhs = (-hs.divergence_laplacian(w) - hs.grad_dot(logp, w) - (D.h_norm2 + ricci) + hess
           - hs.grad_dot(w, w))
    return (L.lambda_k - rhs).reshape(hs.shape)


# ---------------------------------------------------------------------------
# terms on the bottom slice

@dataclass(frozen=True)
class TermBreakdown:
    """Per-cell terms on ``Sigma_m`` and their ``rho_{m-1}^{-1}`` integrals."""

    m: int
    Lambda: float
    R: np.ndarray
    E: np.ndarray
    G: np.ndarray
    Cm: np.ndarray
    scal: np.ndarray
    V: list
    h_frame: list          # h_k in the frame e_{k+1}..e_n, per cell
    H: list                # H_k at the cells of Sigma_m, k = 1..m
    inv_weight: np.ndarray
    integrals: dict
    integral: float
    cross_check: float
    cross_check_gap: float

    def to_dict(self):
        return {"m": self.m, "Lambda": self.Lambda, "integrals": self.integrals, "integral": self.integral,
                "cross_check": self.cross_check, "cross_check_gap": self.cross_check_gap,
                "min_R_E_G_minus_Cm": float(np.min(self.R + self.E + self.G - self.Cm)),
                "min_Cm": float(np.min(self.Cm)), "max_Cm": float(np.max(self.Cm)),
                "V_min": [float(np.min(v)) for v in self.V]}


def _curvature_in_frame(ambient, X, E):
    """Sectional matrix ``K[n, p, q]`` of the ambient for frame columns ``E``."""
    R, _ = riemann_coordinate(ambient, X)
    return np.einsum("nabcd,nap,nbq,ncp,ndq->npq", R, E, E, E, E, optimize=True), R


def _bottom_geometry(s: Slicing):
    """Frame and level data at the cells of the bottom slice (order 2)."""
    amb = s.ambient
    L1, L2 = s.level(1), s.level(2)
    hs2 = L2.surface
    D2 = hs2.data
    pts = D2.X                       # Sigma_1 coordinates of the curve
    D1 = graph_data_at(amb, L1.height, pts, L1.surface.height_axis)
    tau = D2.T[:, 0, :] / np.sqrt(D2.gamma[:, 0, 0])[:, None]
    nu2 = D2.nu
    e1 = D1.nu
    e2 = np.einsum("ni,nia->na", nu2, D1.T)
    e3 = np.einsum("ni,nia->na", tau, D1.T)
    E = np.stack([e1, e2, e3], axis=2)
    h1 = np.empty((pts.shape[0], 2, 2))
    B = np.stack([nu2, tau], axis=2)
    h1[:] = np.einsum("nip,nij,njq->npq", B, D1.h, B)
    return {"D1": D1, "D2": D2, "ric1": ricci_normal(amb, D1), "ric2": hs2.ricci_nu, "E": E,
            "X": D1.X, "bottom": hs2, "h1": h1, "pts": pts}


def _orthonormalise(E, g):
    out = np.empty_like(E)
    for j in range(E.shape[2]):
        v = E[:, :, j].copy()
        for i in range(j):
            v -= np.einsum("na,nab,nb->n", v, g, out[:, :, i])[:, None] * out[:, :, i]
        out[:, :, j] = v / np.sqrt(np.einsum("na,nab,nb->n", v, g, v))[:, None]
    return out


def main_inequality(s: Slicing) -> TermBreakdown:
    """Terms ``Lambda, R, E, G`` on the bottom slice and the weighted integral.

    ``Lambda`` sums ``lambda_k`` for ``k <= m - 1``.  The cross-check
    evaluates the same integral as ``-Q(1/rho_{m-1}) + int H_1^2 / rho_{m-1}``
    with ``Q`` the discrete second variation on ``Sigma_m``; both agree up
    to discretisation error.
    """
    _require_complete(s)
    amb = s.ambient
    m = s.m
    if m == 1:
        L1 = s.level(1)
        hs = L1.surface
        D = hs.data
        ric = hs.ricci_nu
        R = ric
        E_term = D.h_norm2
        G = np.zeros(hs.size)
        Lam = 0.0
        K, Rc = _curvature_in_frame(amb, D.X, _frame_m1(D))
        Cm = np.sum(np.triu(K, 1)[:, :1, :], axis=(1, 2))
        scal = np.einsum("nac,nbd,nabcd->n", D.g_inv, D.g_inv, Rc)
        inv = np.ones(hs.size)
        V, h_frame, H = [], [], [D.H]
        bottom, f, H1 = hs, inv, D.H
    else:
        geo = _bottom_geometry(s)
        L1, L2 = s.level(1), s.level(2)
        hs = L2.surface
        D1, D2 = geo["D1"], geo["D2"]
        Lam = L1.lambda_k
        R = geo["ric1"] + geo["ric2"]
        E_term = D1.h_norm2 + D2.h_norm2 - D2.H ** 2
        gl = L1.weight.grad(geo["pts"])
        G = np.einsum("nij,ni,nj->n", D2.g_inv, gl, gl)   # w_1 = log rho_1 since rho_0 = 1
        K, Rc = _curvature_in_frame(amb, geo["X"], geo["E"])
        Cm = np.sum(np.triu(K, 1)[:, :2, :], axis=(1, 2))
        scal = np.einsum("nac,nbd,nabcd->n", D1.g_inv, D1.g_inv, Rc)
        h1 = geo["h1"]
        h2 = D2.h[:, :1, :1] / D2.gamma[:, :1, :1]
        vk = lemmas.vk_terms([h1, h2], 3, 2, check_trace=False)
        V = vk["V"]
        h_frame = [h1, h2]
        H = [D1.H, D2.H]
        inv = 1.0 / L1.weight.rho(geo["pts"])
        bottom, f, H1 = hs, inv, D1.H
    integrand = Lam + R + E_term + G
    integrals = {name: bottom.integrate(inv * val) for name, val in
                 (("Lambda", np.full(bottom.size, Lam)), ("R", R), ("E", E_term), ("G", G))}
    total = bottom.integrate(inv * integrand)
    weight_prev = s.level(m).weight_prev
    Q = second_variation(bottom, weight_prev, f, check=False)
    cross = -Q + bottom.integrate(inv * H1 ** 2)
    return TermBreakdown(m, Lam, R, E_term, G, Cm, scal, V, h_frame, H, inv, integrals, total, cross,
                         abs(total - cross))


def _frame_m1(D):
    T = D.T
    E = np.concatenate([D.nu[:, :, None], np.swapaxes(T, 1, 2)], axis=2)
    return _orthonormalise(E, D.g)


# ---------------------------------------------------------------------------
# pointwise checks on the slicing

def gradient_estimate_check(s: Slicing, tb: Optional[TermBreakdown] = None) -> dict:
    """``G`` against ``sum_{k>=2} (1/2 + 1/(2(k-1))) H_k^2`` per cell."""
    tb = main_inequality(s) if tb is None else tb
    rhs = np.zeros_like(tb.G)
    for k in range(2, s.m + 1):
        rhs = rhs + (0.5 + 0.5 / (k - 1)) * tb.H[k - 1] ** 2
    slack = tb.G - rhs
    return {"lhs": tb.G, "rhs": rhs, "slack": slack, "min_slack": float(np.min(slack)),
            "alpha_identity_failures": lemmas.alpha_identity_failures(100)}


def iterated_gauss_check(s: Slicing, tb: Optional[TermBreakdown] = None) -> np.ndarray:
    """``R - C_m - sum_k sum_p sum_q (h_k(p,p) h_k(q,q) - h_k(p,q)^2)`` per cell."""
    tb = main_inequality(s) if tb is None else tb
    corr = lemmas.gauss_correction(tb.h_frame[:max(s.m - 1, 0)], s.n, s.m) if s.m > 1 else 0.0
    return tb.R - tb.Cm - corr


def full_slicing_form(s: Slicing, tb: Optional[TermBreakdown] = None) -> dict:
    """Lower bound of ``R + E + G`` for a slicing of order ``n - 1``."""
    if s.m != s.n - 1:
        raise WrongOrder(f"full slicing needs m = n - 1 = {s.n - 1}, got {s.m}")
    tb = main_inequality(s) if tb is None else tb
    lhs = tb.R + tb.E + tb.G
    norms = [tb.h_frame[k][:, :, :] for k in range(s.m)]
    sq = sum(np.einsum("nij,nij->n", h, h) for h in norms)
    rhs = 0.5 * tb.scal + 0.5 * sq + sum(tb.H[k - 1] ** 2 / (2 * (k - 1)) for k in range(2, s.m + 1))
    slack = lhs - rhs
    return {"lhs": lhs, "rhs": rhs, "slack": slack, "min_slack": float(np.min(slack)),
            "two_cm_minus_scal": float(np.max(np.abs(2 * tb.Cm - tb.scal)))}


def theorem_gate(chart: MetricChart, n: int, m: int, slicing: Optional[Slicing] = None, certificate=None,
                 tol=FD_TOL, resolution=64, seed=0, sample_count=8, restarts=8) -> dict:
    """Consistency of a positivity certificate with a stable slicing.

    Refuses infeasible ``(n, m)``.  Evaluates ``R + E + G >= C_m`` per cell
    and the integrated main inequality; a positive certificate together
    with a valid slicing is reported as a contradiction.
    """
    from .grassmann import certify

    lemmas.require_feasible(n, m)
    if chart.dim != n:
        raise WrongOrder(f"chart has dimension {chart.dim}, expected {n}")
    s = build_slicing(chart, m, resolution=resolution, seed=seed) if slicing is None else slicing
    cert = certify(chart, m, {"count": sample_count, "seed": seed}, restarts=restarts, seed=seed) \
        if certificate is None else certificate
    inv = slicing_invariants(s)
    valid = all(inv.values())
    tb = main_inequality(s)
    pointwise = tb.R + tb.E + tb.G - tb.Cm
    contradiction = bool(valid and cert.verdict == "positive")
    return {
        "n": n, "m": m,
        "slicing_valid": valid,
        "invariants": inv,
        "certificate_verdict": cert.verdict,
        "certificate_min": float(cert.minima.min()),
        "pointwise_min_slack": float(np.min(pointwise)),
        "pointwise_ok": bool(np.min(pointwise) >= -tol),
        "integral": tb.integral,
        "integral_ok": bool(tb.integral <= tol),
        "min_cm_on_slice": float(np.min(tb.Cm)),
        "contradiction": contradiction,
        "consistent": not contradiction,
    }
