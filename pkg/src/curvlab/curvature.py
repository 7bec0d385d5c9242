"""Christoffel symbols, Riemann tensor and intermediate curvatures.

The Riemann tensor uses ``Rm(X, Y, Z, W) = -g(D_X D_Y Z - D_Y D_X Z -
D_[X,Y] Z, W)``, so the round sphere has ``Rm(e1, e2, e1, e2) = +1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import BadOrder, SingularMetric
from .geometry import CurvatureTensor, MetricChart, OrthonormalFrame, cholesky_frame, complete_frame

EPS = np.finfo(float).eps
# steps for Richardson-extrapolated (fourth-order) central differences
H1 = EPS ** (1.0 / 5.0)
H2 = EPS ** (1.0 / 6.0)


# ---------------------------------------------------------------------------
# metric derivatives

def _unit(n, k):
    e = np.zeros(n)
    e[k] = 1.0
    return e


def fd_metric_derivatives(metric_fn, x, second=True):
    """Fourth-order central-difference ``dg`` and ``ddg`` of a vectorised metric."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    g0 = metric_fn(x)
    scale = np.maximum(1.0, np.abs(x))

    def first(k, h):
        e = _unit(n, k)
        return (metric_fn(x + h * e) - metric_fn(x - h * e)) / (2 * h[..., None])

    def diag(k, h):
        e = _unit(n, k)
        return (metric_fn(x + h * e) - 2 * g0 + metric_fn(x - h * e)) / (h ** 2)[..., None]

    def mixed(k, l, hk, hl):
        ek, el = _unit(n, k), _unit(n, l)
        num = (metric_fn(x + hk * ek + hl * el) - metric_fn(x + hk * ek - hl * el)
               - metric_fn(x - hk * ek + hl * el) + metric_fn(x - hk * ek - hl * el))
        return num / (4 * (hk * hl)[..., None])

    dg = np.empty(x.shape[:-1] + (n, n, n))
    for k in range(n):
        h = H1 * scale[..., k:k + 1]
        dg[..., k, :, :] = (4 * first(k, h) - first(k, 2 * h)) / 3
    if not second:
        return g0, dg, None
    ddg = np.empty(x.shape[:-1] + (n, n, n, n))
    for k in range(n):
        hk = H2 * scale[..., k:k + 1]
        ddg[..., k, k, :, :] = (4 * diag(k, hk) - diag(k, 2 * hk)) / 3
        for l in range(k + 1, n):
            hl = H2 * scale[..., l:l + 1]
            val = (4 * mixed(k, l, hk, hl) - mixed(k, l, 2 * hk, 2 * hl)) / 3
            ddg[..., k, l, :, :] = val
            ddg[..., l, k, :, :] = val
    return g0, dg, ddg


def metric_derivatives(chart: MetricChart, x, second=True, path="auto"):
    """Return ``(g, dg, ddg, source)`` at ``x`` (analytic when possible)."""
    x = np.asarray(x, dtype=float)
    g = chart.metric(x)
    if chart.derivative_oracle is not None and path in ("auto", "analytic"):
        dg, ddg = chart.derivative_oracle(x)
        return g, np.asarray(dg, float), (np.asarray(ddg, float) if second else None), "analytic-oracle"
    _, dg, ddg = fd_metric_derivatives(chart.metric_fn, x, second=second)
    return g, dg, ddg, "finite-difference"


def christoffel_from(g, dg) -> np.ndarray:
    """``Gamma[..., k, i, j] = 1/2 g^{kl}(d_i g_jl + d_j g_il - d_l g_ij)``."""
    g_inv = np.linalg.inv(g)
    S = (np.einsum("...ijl->...lij", dg) + np.einsum("...jil->...lij", dg) - dg)
    return 0.5 * np.einsum("...kl,...lij->...kij", g_inv, S)


def christoffel(chart: MetricChart, point, path="auto") -> np.ndarray:
    """Levi-Civita Christoffel symbols ``Gamma^k_ij`` at ``point``."""
    g, dg, _, _ = metric_derivatives(chart, point, second=False, path=path)
    return christoffel_from(g, dg)


def riemann_from_derivatives(g, dg, ddg) -> np.ndarray:
    """Coordinate components ``Rm[..., a, b, c, d]`` from metric jets."""
    g_inv = np.linalg.inv(g)
    S = (np.einsum("...ijl->...lij", dg) + np.einsum("...jil->...lij", dg) - dg)
    Gam = 0.5 * np.einsum("...kl,...lij->...kij", g_inv, S)
    dS = (np.einsum("...mijl->...mlij", ddg) + np.einsum("...mjil->...mlij", ddg) - ddg)
    dginv = -np.einsum("...ka,...mab,...bl->...mkl", g_inv, dg, g_inv)
    dGam = 0.5 * (np.einsum("...mkl,...lij->...mkij", dginv, S)
                  + np.einsum("...kl,...mlij->...mkij", g_inv, dS))
    # R^a_{bcd} = d_c Gam^a_{db} - d_d Gam^a_{cb} + Gam^a_{ce} Gam^e_{db} - Gam^a_{de} Gam^e_{cb}
    Rup = (np.einsum("...cadb->...abcd", dGam) - np.einsum("...dacb->...abcd", dGam)
           + np.einsum("...ace,...edb->...abcd", Gam, Gam)
           - np.einsum("...ade,...ecb->...abcd", Gam, Gam))
    # Rm(c, d, b, w) = -g_wa R^a_{bcd}
    Rm = -np.einsum("...wa,...abcd->...cdbw", g, Rup)
    return Rm


def riemann_coordinate(chart: MetricChart, x, path="auto"):
    """Coordinate Riemann components at (batched) points and their source.

    ``path`` is ``"auto"`` (curvature oracle, then derivative oracle, then
    finite differences), ``"oracle"``, ``"analytic"`` or ``"fd"``.
    """
    x = np.asarray(x, dtype=float)
    if path in ("auto", "oracle") and chart.curvature_oracle is not None:
        chart.metric(x)
        return np.asarray(chart.curvature_oracle(x), float), "analytic-oracle"
    if path == "oracle":
        raise ValueError(f"{chart.name} has no curvature oracle")
    g, dg, ddg, source = metric_derivatives(chart, x, path="analytic" if path == "analytic" else
                                            ("fd" if path == "fd" else "auto"))
    return riemann_from_derivatives(g, dg, ddg), source


def riemann_tensor(chart: MetricChart, point, basis="coordinate", path="auto") -> CurvatureTensor:
    """Riemann tensor at a single point.

    ``basis`` is ``"coordinate"``, ``"orthonormal"`` (Cholesky frame), an
    :class:`OrthonormalFrame` (its completion is used) or an ``n x n`` array
    whose columns form the evaluation basis.
    """
    point = np.asarray(point, dtype=float)
    R, _ = riemann_coordinate(chart, point, path=path)
    if isinstance(basis, str) and basis == "coordinate":
        return CurvatureTensor.from_array(R, "coordinate")
    if isinstance(basis, str) and basis == "orthonormal":
        E = cholesky_frame(chart.metric(point))
    elif isinstance(basis, OrthonormalFrame):
        E = complete_frame(basis).completed
    else:
        E = np.asarray(basis, float)
    return CurvatureTensor.from_array(
        np.einsum("abcd,ap,bq,cr,ds->pqrs", R, E, E, E, E, optimize=True), "orthonormal")


# ---------------------------------------------------------------------------
# intermediate curvatures

def _basis_of(frame, n):
    if isinstance(frame, OrthonormalFrame):
        if frame.completed is None:
            frame = complete_frame(frame)
        return np.asarray(frame.completed)
    E = np.asarray(frame, float)
    if E.shape != (n, n):
        raise ValueError(f"frame must be a completed {n}x{n} basis")
    return E


def sectional_matrix(tensor: CurvatureTensor, E) -> np.ndarray:
    """``K[p, q] = Rm(E_p, E_q, E_p, E_q)`` for the columns of ``E``."""
    R = tensor.full
    return np.einsum("abcd,ap,bq,cp,dq->pq", R, E, E, E, E, optimize=True)


def _check_order(m, n):
    if not 1 <= m <= n - 1:
        raise BadOrder(f"order m={m} outside [1, {n - 1}]")


def intermediate_curvature(tensor: CurvatureTensor, frame, m: int) -> float:
    """m-intermediate curvature: sum over p <= m, q > p of Rm(e_p, e_q, e_p, e_q).

    For ``m = 1`` this is Ric(e_1, e_1); for ``m = n - 1`` it is half the
    scalar curvature.
    """
    n = tensor.dim
    _check_order(m, n)
    K = sectional_matrix(tensor, _basis_of(frame, n))
    return float(np.sum(np.triu(K, 1)[:m, :]))


def intermediate_scalar_curvature(tensor: CurvatureTensor, frame, m: int) -> float:
    """(m, n)-intermediate scalar curvature over the complement e_{m+1}..e_n."""
    n = tensor.dim
    _check_order(m, n)
    K = sectional_matrix(tensor, _basis_of(frame, n))
    C = K[m:, m:]
    return float(np.sum(C) - np.trace(C))


def subset_average_factor(n: int, m: int) -> float:
    """Ratio of the subset sum of C_m to scal, calibrated on the unit sphere.

    Sums ``C_m(e_{p_1}, ..., e_{p_m})`` over all m-subsets of an orthonormal
    basis and divides by the scalar curvature.
    """
    from .models import constant_curvature_tensor

    T = constant_curvature_tensor(n, 1.0)
    return subset_sum(T, np.eye(n), m) / T.scalar()


def subset_sum(tensor: CurvatureTensor, E, m: int) -> float:
    """Sum of C_m over all m-subsets of the columns of ``E``."""
    n = tensor.dim
    total = 0.0
    for subset in combinations(range(n), m):
        rest = [i for i in range(n) if i not in subset]
        total += intermediate_curvature(tensor, E[:, list(subset) + rest], m)
    return total


@dataclass(frozen=True)
class CurvatureReport:
    """Ricci and scalar curvature at a point, in an orthonormal basis."""

    point: np.ndarray
    tensor: CurvatureTensor
    ricci: np.ndarray
    scalar: float
    source: str

    def trace_defect(self) -> float:
        return abs(self.scalar - float(np.trace(self.ricci)))


def curvature_report(chart: MetricChart, point, frame=None, path="auto") -> CurvatureReport:
    """Evaluate Rm, Ric and scal at ``point`` in an orthonormal basis."""
    point = np.asarray(point, float)
    R, source = riemann_coordinate(chart, point, path=path)
    if frame is None:
        E = cholesky_frame(chart.metric(point))
    else:
        E = _basis_of(frame, chart.dim)
    T = CurvatureTensor.from_array(np.einsum("abcd,ap,bq,cr,ds->pqrs", R, E, E, E, E, optimize=True))
    ric = T.ricci()
    return CurvatureReport(point, T, ric, float(np.trace(ric)), source)


__all__ = [
    "CurvatureReport", "SingularMetric", "christoffel", "christoffel_from", "curvature_report",
    "fd_metric_derivatives", "intermediate_curvature", "intermediate_scalar_curvature",
    "metric_derivatives", "riemann_coordinate", "riemann_from_derivatives", "riemann_tensor",
    "sectional_matrix", "subset_average_factor", "subset_sum",
]
