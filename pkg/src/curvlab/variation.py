"""Weighted area of periodic graph hypersurfaces and its variations.

A hypersurface is the graph ``x_h = u(x')`` over a periodic grid of the
remaining coordinates of an ambient chart.  Geometry uses the upward unit
normal ``nu`` and ``h(X, Y) = <D_X nu, Y>``, so the round sphere of radius
``r`` (outward normal) has ``H = (d - 1) / r``.

Derivatives of ``u`` are fourth-order periodic differences and integrals
are cell-midpoint sums evaluated with ``math.fsum``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import grids
from .curvature import EPS, christoffel_from, metric_derivatives, riemann_coordinate
from .errors import IterationLimit, NonpositiveWeight, NotCritical
from .geometry import MetricChart

# second-order central-difference steps for weight fallbacks
H1 = EPS ** (1.0 / 3.0)
H2 = EPS ** (1.0 / 4.0)

CRITICAL_TOL = 1e-5
EIGEN_TOL = 1e-8
AREA_SLACK = 1e-9


# ---------------------------------------------------------------------------
# weights

@dataclass(frozen=True)
class WeightField:
    """Positive weight ``rho = exp(log_fn)`` on ambient coordinates.

    ``grad_fn`` and ``hess_fn`` give coordinate partials of ``log rho``;
    missing ones fall back to central differences.
    """

    log_fn: Callable
    grad_fn: Optional[Callable] = None
    hess_fn: Optional[Callable] = None
    name: str = "weight"
    constant: bool = False

    def log(self, X):
        X = np.asarray(X, float)
        v = np.asarray(self.log_fn(X), float)
        if not np.all(np.isfinite(v)):
            raise NonpositiveWeight(f"{self.name} is not positive and finite at every sample")
        return np.broadcast_to(v, X.shape[:-1])

    def rho(self, X):
        return np.exp(self.log(X))

    def grad(self, X):
        X = np.asarray(X, float)
        if self.grad_fn is not None:
            return np.broadcast_to(self.grad_fn(X), X.shape).astype(float)
        d = X.shape[-1]
        out = np.empty(X.shape)
        for a in range(d):
            e = np.zeros(d)
            e[a] = H1
            out[..., a] = (self.log(X + e) - self.log(X - e)) / (2 * H1)
        return out

    def hess(self, X):
        X = np.asarray(X, float)
        d = X.shape[-1]
        if self.hess_fn is not None:
            return np.broadcast_to(self.hess_fn(X), X.shape + (d,)).astype(float)
        out = np.empty(X.shape + (d,))
        for a in range(d):
            e = np.zeros(d)
            e[a] = H2
            out[..., a, :] = (self.grad(X + e) - self.grad(X - e)) / (2 * H2)
        return 0.5 * (out + np.swapaxes(out, -1, -2))

    @classmethod
    def constant_weight(cls, value=1.0):
        if not value > 0:
            raise NonpositiveWeight(f"constant weight must be positive, got {value}")
        c = math.log(value)
        return cls(lambda X: np.full(np.shape(X)[:-1], c),
                   lambda X: np.zeros(np.shape(X)),
                   lambda X: np.zeros(np.shape(X) + (np.shape(X)[-1],)),
                   name=f"const({value})", constant=True)

    @classmethod
    def from_rho(cls, rho_fn, name="rho"):
        """Weight from a direct (positive) evaluator; derivatives by differences."""
        def log_fn(X):
            r = np.asarray(rho_fn(X), float)
            if np.any(~(r > 0)):
                raise NonpositiveWeight(f"{name} takes nonpositive values")
            return np.log(r)
        return cls(log_fn, name=name)

    @classmethod
    def trig(cls, terms, periods, linear=None, name="trig"):
        """``log rho = c.x + sum a cos(2 pi k.x / P + phase)`` with exact derivatives.

        The optional linear part ``c`` is only meaningful near a fixed
        sheet of a torus (the weight need not be periodic).
        """
        from .models import trig_field
        u, du, ddu = trig_field(terms, periods)
        c = np.zeros(len(periods)) if linear is None else np.asarray(linear, float)
        return cls(lambda X: u(X) + np.asarray(X, float) @ c,
                   lambda X: du(X) + c, ddu, name=name)

    @classmethod
    def fourier(cls, ff: grids.FourierField, name="interpolated"):
        """Weight whose logarithm is a Fourier interpolant on chart coordinates."""
        def log_fn(X):
            X = np.asarray(X, float)
            flat = X.reshape(-1, X.shape[-1])
            return ff(flat, [()])[0].reshape(X.shape[:-1])

        def grad_fn(X):
            X = np.asarray(X, float)
            flat = X.reshape(-1, X.shape[-1])
            return ff.jets(flat, 1)[1].reshape(X.shape)

        def hess_fn(X):
            X = np.asarray(X, float)
            flat = X.reshape(-1, X.shape[-1])
            return ff.jets(flat, 2)[2].reshape(X.shape + (X.shape[-1],))

        return cls(log_fn, grad_fn, hess_fn, name=name)


def factorize(M):
    """Sparse LU with a symmetric fill-reducing ordering."""
    return splu(sp.csc_matrix(M), permc_spec="MMD_AT_PLUS_A")


def _as_weight(rho):
    if rho is None:
        return WeightField.constant_weight(1.0)
    if isinstance(rho, (int, float)):
        return WeightField.constant_weight(float(rho))
    return rho


# ---------------------------------------------------------------------------
# graph geometry

@dataclass
class GraphData:
    X: np.ndarray          # embedding points (N, d)
    T: np.ndarray          # tangents T_i (N, b, d)
    g: np.ndarray
    g_inv: np.ndarray
    gamma_sym: np.ndarray  # Christoffel symbols of the ambient (N, d, d, d)
    omega: np.ndarray      # defining covector of the graph (N, d)
    wnorm: np.ndarray      # |omega|_g; normal speed f moves u by f * wnorm
    nu: np.ndarray         # upward unit normal (N, d)
    gamma: np.ndarray      # induced metric (N, b, b)
    gamma_inv: np.ndarray
    sqrt_det: np.ndarray
    h: np.ndarray          # second fundamental form (N, b, b)
    H: np.ndarray
    h_norm2: np.ndarray


def graph_geometry(ambient: MetricChart, height_axis: int, xb, U, dU, ddU) -> GraphData:
    """Induced geometry of a graph from pointwise height jets."""
    xb = np.asarray(xb, float)
    N, b = xb.shape
    d = b + 1
    base_axes = [a for a in range(d) if a != height_axis]
    X = np.empty((N, d))
    X[:, base_axes] = xb
    X[:, height_axis] = U
    T = np.zeros((N, b, d))
    for i, a in enumerate(base_axes):
        T[:, i, a] = 1.0
    T[:, :, height_axis] = dU
    g, dg, _, _ = metric_derivatives(ambient, X, second=False)
    g_inv = np.linalg.inv(g)
    Gam = christoffel_from(g, dg)
    omega = np.zeros((N, d))
    omega[:, height_axis] = 1.0
    omega[:, base_axes] = -dU
    nu_up = np.einsum("nab,nb->na", g_inv, omega)
    wnorm = np.sqrt(np.einsum("na,na->n", omega, nu_up))
    nu = nu_up / wnorm[:, None]
    gamma = np.einsum("nia,nab,njb->nij", T, g, T)
    gamma_inv = np.linalg.inv(gamma)
    sqrt_det = np.sqrt(np.linalg.det(gamma))
    gam_tt = np.einsum("nc,ncab,nia,njb->nij", omega, Gam, T, T, optimize=True)
    h = -(ddU + gam_tt) / wnorm[:, None, None]
    H = np.einsum("nij,nij->n", gamma_inv, h)
    hu = np.einsum("nik,nkj->nij", gamma_inv, h)
    h_norm2 = np.einsum("nij,nji->n", hu, hu)
    return GraphData(X, T, g, g_inv, Gam, omega, wnorm, nu, gamma, gamma_inv, sqrt_det, h, H, h_norm2)


def ricci_normal(ambient: MetricChart, data: GraphData, path="auto"):
    """``Ric(nu, nu)`` of the ambient at the embedding points."""
    R, _ = riemann_coordinate(ambient, data.X, path=path)
    ric = np.einsum("nac,nabcd->nbd", data.g_inv, R)
    return np.einsum("nbd,nb,nd->n", ric, data.nu, data.nu)


def hessian_normal(rho: WeightField, data: GraphData):
    """Covariant ``Hess(log rho)(nu, nu)`` at the embedding points."""
    grad = rho.grad(data.X)
    hess = rho.hess(data.X) - np.einsum("ncab,nc->nab", data.gamma_sym, grad)
    return np.einsum("nab,na,nb->n", hess, data.nu, data.nu)


@dataclass(frozen=True, eq=False)
class DiscreteHypersurface:
    """Periodic graph ``x_h = u(x')`` over a cell-centred grid.

    ``sheets`` divides all integrals (for charts that cover the surface
    more than once, such as polar coordinates with the polar angle running
    over a full period).
    """

    ambient: MetricChart
    height: np.ndarray
    periods: tuple
    height_axis: Optional[int] = None
    sheets: int = 1
    offset: Optional[tuple] = None
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        u = np.array(self.height, dtype=float)
        u.setflags(write=False)
        object.__setattr__(self, "height", u)
        object.__setattr__(self, "periods", tuple(float(p) for p in self.periods))
        if self.height_axis is None:
            object.__setattr__(self, "height_axis", self.ambient.dim - 1)
        if self.offset is None:
            object.__setattr__(self, "offset", (0.0,) * u.ndim)
        if u.ndim != self.ambient.dim - 1 or len(self.periods) != u.ndim:
            raise ValueError("height grid must have one axis per base coordinate")

    @classmethod
    def flat(cls, ambient, resolution, periods=None, level=0.0, **kw):
        b = ambient.dim - 1
        res = (resolution,) * b if np.isscalar(resolution) else tuple(resolution)
        if periods is None:
            axes = [a for a in range(ambient.dim) if a != kw.get("height_axis", ambient.dim - 1)]
            periods = tuple(ambient.periods[a] or 1.0 for a in axes)
        return cls(ambient, np.full(res, float(level)), periods, **kw)

    @classmethod
    def from_function(cls, ambient, resolution, fn, periods=None, **kw):
        hs = cls.flat(ambient, resolution, periods, **kw)
        return hs.with_height(np.asarray(fn(hs.base_points), float).reshape(hs.shape))

    def with_height(self, u, **info) -> "DiscreteHypersurface":
        return replace(self, height=np.asarray(u, float).reshape(self.shape), info=dict(info))

    @property
    def shape(self):
        return self.height.shape

    @property
    def size(self):
        return self.height.size

    @property
    def spacing(self):
        return tuple(p / r for p, r in zip(self.periods, self.shape))

    @property
    def quad(self) -> float:
        """Quadrature weight of one cell (including the sheet count)."""
        return float(np.prod(self.spacing)) / self.sheets

    @cached_property
    def base_points(self):
        return grids.cell_points(self.shape, self.periods, self.offset)

    @cached_property
    def height_derivatives(self):
        du, ddu = grids.derivatives(self.height, self.spacing)
        b = self.height.ndim
        return du.reshape(-1, b), ddu.reshape(-1, b, b)

    @cached_property
    def data(self) -> GraphData:
        dU, ddU = self.height_derivatives
        return graph_geometry(self.ambient, self.height_axis, self.base_points, self.height.ravel(), dU, ddU)

    @cached_property
    def ricci_nu(self):
        return ricci_normal(self.ambient, self.data)

    @cached_property
    def operators(self):
        return grids.derivative_operators(self.shape, self.spacing)

    def embedding(self):
        return self.data.X

    # grid calculus on the induced metric -----------------------------------

    def grid_gradient(self, f):
        f = np.asarray(f, float).reshape(self.shape)
        return np.stack([grids.d1(f, i, self.spacing[i]).ravel() for i in range(f.ndim)], axis=-1)

    def grad_dot(self, f1, f2):
        """``<D_Sigma f1, D_Sigma f2>`` per cell."""
        a, b = self.grid_gradient(f1), self.grid_gradient(f2)
        return np.einsum("nij,ni,nj->n", self.data.gamma_inv, a, b)

    def divergence_laplacian(self, f, weight=None):
        """``(1/(w sqrt g)) d_i(w sqrt g g^ij d_j f)`` in difference form."""
        D = self.data
        w = np.ones(self.size) if weight is None else np.asarray(weight, float).ravel()
        flux = (w * D.sqrt_det)[:, None] * np.einsum("nij,nj->ni", D.gamma_inv, self.grid_gradient(f))
        div = sum(grids.d1(flux[:, i].reshape(self.shape), i, self.spacing[i]).ravel()
                  for i in range(self.height.ndim))
        return div / (w * D.sqrt_det)

    def integrate(self, values) -> float:
        """``int values dmu``."""
        return math.fsum(np.asarray(values, float).ravel() * self.data.sqrt_det) * self.quad

    def shifted(self, steps) -> "DiscreteHypersurface":
        """Surface with the height grid rolled by integer cell counts."""
        return self.with_height(np.roll(self.height, steps, axis=tuple(range(self.height.ndim))))


# ---------------------------------------------------------------------------
# functional and its variations

def weighted_area(hs: DiscreteHypersurface, rho=None) -> float:
    """Cell-midpoint quadrature of ``int rho dmu``."""
    rho = _as_weight(rho)
    return hs.integrate(rho.rho(hs.data.X))


def critical_residual(hs: DiscreteHypersurface, rho=None) -> np.ndarray:
    """``H + <D log rho, nu>`` per cell (grid-shaped)."""
    rho = _as_weight(rho)
    D = hs.data
    return (D.H + np.einsum("na,na->n", rho.grad(D.X), D.nu)).reshape(hs.shape)


def first_variation(hs: DiscreteHypersurface, rho=None, f=None) -> float:
    """``int rho f (H + <D log rho, nu>) dmu`` for normal speed ``f``."""
    rho = _as_weight(rho)
    f = np.ones(hs.size) if f is None else np.asarray(f, float).ravel()
    return hs.integrate(rho.rho(hs.data.X) * f * critical_residual(hs, rho).ravel())


def normal_variation(hs: DiscreteHypersurface, f, s) -> DiscreteHypersurface:
    """Graph moved with normal speed ``f`` for time ``s`` (to first order)."""
    step = np.asarray(f, float).ravel() * hs.data.wnorm
    return hs.with_height(hs.height.ravel() + s * step)


def fd_first_variation(hs, rho=None, f=None, s=1e-4) -> float:
    """Fourth-order central difference of the weighted area along ``f``."""
    rho = _as_weight(rho)
    f = np.ones(hs.size) if f is None else f
    A = [weighted_area(normal_variation(hs, f, k * s), rho) for k in (-2, -1, 1, 2)]
    return (A[0] - 8 * A[1] + 8 * A[2] - A[3]) / (12 * s)


def fd_second_variation(hs, rho=None, f=None, s=1e-3) -> float:
    rho = _as_weight(rho)
    f = np.ones(hs.size) if f is None else f
    A = [weighted_area(normal_variation(hs, f, k * s), rho) for k in (-2, -1, 0, 1, 2)]
    return (-A[0] + 16 * A[1] - 30 * A[2] + 16 * A[3] - A[4]) / (12 * s * s)


def stability_potential(hs: DiscreteHypersurface, rho=None) -> np.ndarray:
    """``-(|h|^2 + Ric(nu, nu)) + Hess(log rho)(nu, nu)`` per cell."""
    rho = _as_weight(rho)
    pot = -(hs.data.h_norm2 + hs.ricci_nu)
    if not rho.constant:
        pot = pot + hessian_normal(rho, hs.data)
    return pot


def _require_critical(hs, rho, check):
    if check:
        res = float(np.max(np.abs(critical_residual(hs, rho))))
        if res > CRITICAL_TOL:
            raise NotCritical(f"criticality defect {res:.3e} exceeds {CRITICAL_TOL:g}")


def second_variation(hs: DiscreteHypersurface, rho=None, f=None, check=True) -> float:
    """Second variation of weighted area at a critical graph.

    ``int rho (-f Delta f - f <D log rho, D f> + V f^2) dmu`` with the two
    derivative terms evaluated together as ``-(f / rho) div(rho D f)``.
    """
    rho = _as_weight(rho)
    _require_critical(hs, rho, check)
    f = np.ones(hs.size) if f is None else np.asarray(f, float).ravel()
    r = rho.rho(hs.data.X)
    lap_rho = hs.divergence_laplacian(f, weight=r)
    return hs.integrate(r * (-f * lap_rho + stability_potential(hs, rho) * f * f))


def second_variation_unweighted(hs: DiscreteHypersurface, f=None, check=True) -> float:
    """``int (-f Delta f - (|h|^2 + Ric(nu, nu)) f^2) dmu`` (no weight)."""
    one = WeightField.constant_weight(1.0)
    _require_critical(hs, one, check)
    f = np.ones(hs.size) if f is None else np.asarray(f, float).ravel()
    return hs.integrate(-f * hs.divergence_laplacian(f) - (hs.data.h_norm2 + hs.ricci_nu) * f * f)


# ---------------------------------------------------------------------------
# stability operator

@dataclass(frozen=True, eq=False)
class StabilityOperator:
    """``L v = -(1/rho) div(rho D v) + V v`` in the ``rho dmu`` inner product.

    Stored as ``(stiffness + diag(mass * V)) v = lambda mass v`` with a
    symmetric stiffness matrix.
    """

    stiffness: sp.csr_matrix
    mass: np.ndarray
    potential: np.ndarray
    shape: tuple
    description: str = "weighted Jacobi operator, 4th-order differences"

    def matrix(self):
        return (self.stiffness + sp.diags(self.mass * self.potential)).tocsc()

    def apply(self, f):
        f = np.asarray(f, float).ravel()
        return (self.stiffness @ f) / self.mass + self.potential * f

    def inner(self, f, g) -> float:
        return math.fsum(self.mass * np.asarray(f, float).ravel() * np.asarray(g, float).ravel())

    def quadratic_form(self, f) -> float:
        f = np.asarray(f, float).ravel()
        return float(f @ (self.stiffness @ f)) + math.fsum(self.mass * self.potential * f * f)

    def norm_bound(self) -> float:
        S = self.matrix()
        return float(np.max(np.asarray(abs(S).sum(axis=1)).ravel() / self.mass))

    def descriptor(self) -> dict:
        return {"description": self.description, "size": int(self.mass.size),
                "grid": list(self.shape), "nnz": int(self.stiffness.nnz)}


def assemble_stability_operator(hs: DiscreteHypersurface, rho=None, check=True) -> StabilityOperator:
    rho = _as_weight(rho)
    _require_critical(hs, rho, check)
    D = hs.data
    r = rho.rho(D.X)
    mass = r * D.sqrt_det * hs.quad
    D1, _ = hs.operators
    b = len(D1)
    A = sp.csr_matrix((hs.size, hs.size))
    for i in range(b):
        for j in range(b):
            W = sp.diags(mass * D.gamma_inv[:, i, j])
            A = A + D1[i].T @ W @ D1[j]
    A = (0.5 * (A + A.T)).tocsr()
    return StabilityOperator(A, mass, stability_potential(hs, rho), hs.shape)


@dataclass(frozen=True)
class StabilityReport:
    lambda_1: float
    eigenfunction: np.ndarray
    residual: float
    operator: dict
    positive: bool
    iterations: int

    def to_dict(self):
        return {"lambda_1": self.lambda_1, "residual": self.residual, "positive": self.positive,
                "iterations": self.iterations, "operator": self.operator,
                "eigenfunction_min": float(np.min(self.eigenfunction))}


def spectral_lower_bound(op: StabilityOperator) -> float:
    """Lower bound for the spectrum: the stiffness part is positive
    semidefinite and the potential part is diagonal, so ``min V`` bounds
    ``lambda_1`` from below; the Gershgorin bound of the full matrix is
    used when it is sharper."""
    S = op.matrix().tocsr()
    s = 1.0 / np.sqrt(op.mass)
    Sn = sp.diags(s) @ S @ sp.diags(s)
    diag = Sn.diagonal()
    off = np.asarray(abs(Sn).sum(axis=1)).ravel() - np.abs(diag)
    return max(float(np.min(diag - off)), float(np.min(op.potential)))


def first_eigenpair(op: StabilityOperator, tol=EIGEN_TOL, max_iter=100, polish=True) -> StabilityReport:
    """Ground state by shifted inverse iteration.

    The initial shift sits one unit below :func:`spectral_lower_bound`;
    when convergence is slow the shift moves to ``RQ - 2 |r|``.  The
    residual is relative to ``max(1, |L|_inf)``; with ``polish`` the
    iteration continues past ``tol`` while the residual still drops
    markedly, since the absolute residual grows with the operator norm.
    """
    S = op.matrix()
    M = op.mass
    n = M.size
    scale = max(1.0, op.norm_bound())
    sigma = spectral_lower_bound(op) - 1.0
    lu = factorize(S - sp.diags(sigma * M))
    x = np.ones(n)
    mu, res = np.inf, np.inf
    best = None
    for it in range(1, max_iter + 1):
        y = lu.solve(M * x)
        k = int(np.argmax(np.abs(y)))
        x = y / y[k]
        Sx = S @ x
        mu = float(x @ Sx) / float(x @ (M * x))
        r = Sx / M - mu * x
        prev, res = res, float(np.max(np.abs(r))) / scale
        if best is None or res < best[0]:
            best = (res, mu, x.copy(), it)
        if res < tol and (not polish or res > 0.5 * prev or res < 1e-15):
            break
        if it % 10 == 0 and res >= tol:
            rn = math.sqrt(float(r @ (M * r)) / float(x @ (M * x)))
            sigma = mu - 2.0 * rn
            lu = factorize(S - sp.diags(sigma * M))
    res, mu, x, it = best
    if res >= tol:
        raise IterationLimit(f"inverse iteration stalled at residual {res:.2e}",
                             best=(mu, x.reshape(op.shape)), residual=res)
    v = x.reshape(op.shape)
    return StabilityReport(mu, v, res, op.descriptor(), bool(np.all(v > 0)), it)


# ---------------------------------------------------------------------------
# minimisation

def _pointwise_residual(hs: DiscreteHypersurface, rho: WeightField):
    """Residual as a function of the local height jet ``(U, dU, ddU)``."""
    xb = hs.base_points

    def F(U, dU, ddU):
        data = graph_geometry(hs.ambient, hs.height_axis, xb, U, dU, ddU)
        return data.H + np.einsum("na,na->n", rho.grad(data.X), data.nu)

    return F


def residual_jacobian(hs: DiscreteHypersurface, rho=None, delta=1e-6):
    """Sparse Jacobian of :func:`critical_residual` with respect to the heights.

    The residual depends on the height only through its local jet, so the
    Jacobian is assembled from pointwise sensitivities and the difference
    operators.
    """
    rho = _as_weight(rho)
    F = _pointwise_residual(hs, rho)
    U = hs.height.ravel()
    dU, ddU = hs.height_derivatives
    b = dU.shape[1]
    D1, D2 = hs.operators

    def sens(bump):
        return (F(*bump(+delta)) - F(*bump(-delta))) / (2 * delta)

    J = sp.diags(sens(lambda e: (U + e, dU, ddU)))
    for i in range(b):
        def bump(e, i=i):
            d = dU.copy()
            d[:, i] += e
            return U, d, ddU
        J = J + sp.diags(sens(bump)) @ D1[i]
    for i in range(b):
        for j in range(i, b):
            def bump(e, i=i, j=j):
                dd = ddU.copy()
                dd[:, i, j] += e
                if i != j:
                    dd[:, j, i] += e
                return U, dU, dd
            J = J + sp.diags(sens(bump)) @ D2[i][j]
    return J.tocsc()


def best_level(hs: DiscreteHypersurface, rho, levels=64) -> DiscreteHypersurface:
    """Shift ``hs`` vertically to the periodic level of least weighted area."""
    P = hs.ambient.periods[hs.height_axis]
    if not P:
        return hs
    base = weighted_area(hs, rho)
    best, shift = base, 0.0
    for k in range(1, levels):
        c = k * P / levels
        a = weighted_area(hs.with_height(hs.height + c), rho)
        if a < best - 1e-12 * abs(base):
            best, shift = a, c
    return hs.with_height(hs.height + shift) if shift else hs


def resample(hs: DiscreteHypersurface, resolution) -> DiscreteHypersurface:
    """Same graph on another grid, by trigonometric interpolation of the height."""
    res = (resolution,) * hs.height.ndim if np.isscalar(resolution) else tuple(resolution)
    ff = grids.FourierField(hs.height, hs.periods, hs.offset)
    pts = grids.cell_points(res, hs.periods, hs.offset)
    return replace(hs, height=ff(pts, [()])[0].reshape(res), info={})


COARSEST = 32


def minimize_weighted_area(hs0: DiscreteHypersurface, rho=None, max_iters=60, tol=1e-6,
                           level_search=True, spot_checks=50, seed=0,
                           coarse_start=True) -> DiscreteHypersurface:
    """Damped Newton (Levenberg-Marquardt) descent of the weighted area.

    With ``coarse_start`` the problem is first solved on a grid with half
    the resolution (recursively, down to 32 cells per axis) and the result
    is interpolated as the starting graph.

    Steps solve ``(J + mu I) du = -residual``; a step is kept when it lowers
    the weighted area (or, at rounding level, the residual).  Large ``mu``
    turns the step into a diagonally preconditioned gradient step.
    Raises :class:`IterationLimit` carrying the best iterate when the
    residual does not reach ``tol``.
    """
    rho = _as_weight(rho)
    if coarse_start and min(hs0.shape) >= 2 * COARSEST and all(r % 2 == 0 for r in hs0.shape):
        half = tuple(r // 2 for r in hs0.shape)
        try:
            coarse = minimize_weighted_area(resample(hs0, half), rho, max_iters, tol, level_search,
                                            spot_checks=0, coarse_start=True)
        except IterationLimit as exc:
            coarse = exc.best
        hs0, level_search = resample(coarse, hs0.shape), False
    hs = best_level(hs0, rho) if level_search else hs0
    area = weighted_area(hs, rho)
    res = critical_residual(hs, rho).ravel()
    rmax = float(np.max(np.abs(res)))
    J = residual_jacobian(hs, rho)
    dscale = float(np.mean(np.abs(J.diagonal()))) or 1.0
    mu = 1e-6 * dscale
    it = 0
    I = sp.identity(hs.size, format="csc")
    history = []
    while rmax >= tol and it < max_iters:
        it += 1
        step = factorize(J + mu * I).solve(-res)
        cand = hs.with_height(hs.height.ravel() + step)
        a_new = weighted_area(cand, rho)
        r_new = critical_residual(cand, rho).ravel()
        rm_new = float(np.max(np.abs(r_new)))
        # the discrete residual is not the exact gradient of the discrete area,
        # so near the root tiny area increases are tolerated
        flat = a_new - area <= AREA_SLACK * (1.0 + abs(area))
        if np.isfinite(rm_new) and (a_new < area or (flat and rm_new < rmax)):
            hs, area, res, rmax = cand, a_new, r_new, rm_new
            J = residual_jacobian(hs, rho)
            mu = max(mu / 10.0, 1e-12 * dscale)
        else:
            mu *= 10.0
            if mu > 1e12 * dscale:
                break
        history.append(rmax)
    info = {"converged": rmax < tol, "iterations": it, "residual": rmax, "area": area,
            "history": history}
    if spot_checks and rmax < CRITICAL_TOL:
        info["stability_min"] = stability_spot_check(hs, rho, spot_checks, seed)
    hs = hs.with_height(hs.height, **info)
    if rmax >= tol:
        raise IterationLimit(f"weighted-area descent stopped at residual {rmax:.2e}", best=hs, residual=rmax)
    return hs


def stability_spot_check(hs, rho=None, count=50, seed=0) -> float:
    """Smallest ``Q(f) / |f|^2_rho`` over random smooth test functions.

    Only graphical variations are probed; this is the discrete stability
    notion used throughout.
    """
    rho = _as_weight(rho)
    op = assemble_stability_operator(hs, rho, check=False)
    rng = np.random.default_rng(seed)
    pts = hs.base_points
    worst = np.inf
    for _ in range(count):
        k = rng.integers(-3, 4, size=pts.shape[1])
        phase = rng.uniform(0, 2 * np.pi)
        f = 1.0 + rng.normal() * np.cos(2 * np.pi * (pts / np.array(hs.periods)) @ k + phase)
        worst = min(worst, op.quadratic_form(f) / op.inner(f, f))
    return float(worst)


# ---------------------------------------------------------------------------
# diagnostics

def gauss_curvature_defect(hs: DiscreteHypersurface):
    """Intrinsic Gauss curvature (differences of the induced metric) minus
    ambient sectional curvature plus the extrinsic term, per cell.

    Only for two-dimensional surfaces.
    """
    from .curvature import riemann_from_derivatives
    if hs.height.ndim != 2:
        raise ValueError("Gauss check needs a two-dimensional surface")
    D = hs.data
    gam = D.gamma.reshape(hs.shape + (2, 2))
    dg = np.empty(hs.shape + (2, 2, 2))
    ddg = np.empty(hs.shape + (2, 2, 2, 2))
    for i in range(2):
        for j in range(2):
            d, dd = grids.derivatives(gam[..., i, j], hs.spacing)
            dg[..., :, i, j] = d
            ddg[..., :, :, i, j] = dd
    Rin = riemann_from_derivatives(gam.reshape(-1, 2, 2), dg.reshape(-1, 2, 2, 2),
                                   ddg.reshape(-1, 2, 2, 2, 2))
    det = np.linalg.det(D.gamma)
    k_in = Rin[:, 0, 1, 0, 1] / det
    Ramb, _ = riemann_coordinate(hs.ambient, D.X)
    T1, T2 = D.T[:, 0], D.T[:, 1]
    sec = np.einsum("nabcd,na,nb,nc,nd->n", Ramb, T1, T2, T1, T2, optimize=True)
    ext = D.h[:, 0, 0] * D.h[:, 1, 1] - D.h[:, 0, 1] ** 2
    k_ex = (sec + ext) / det
    return (k_in - k_ex).reshape(hs.shape)


def convergence_order(resolutions, errors) -> float:
    """Least-squares slope of ``-log(error)`` against ``log(R)``."""
    x = np.log(np.asarray(resolutions, float))
    y = np.log(np.asarray(errors, float))
    return float(-np.polyfit(x, y, 1)[0])
