"""Metric charts, orthonormal frames and symmetry-aware curvature storage.

All arrays follow the convention that vectors are columns expressed in the
chart's coordinate basis.  Metric functions are vectorised: they accept an
array of points with shape ``(..., n)`` and return ``(..., n, n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DegenerateInput, SingularMetric

ORTHONORMAL_TOL = 1e-12
PIVOT_TOL = 1e-10


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MetricChart:
    """A coordinate chart carrying a smooth metric field.

    ``derivative_oracle(x)`` returns ``(dg, ddg)`` with ``dg[..., k, i, j] =
    d_k g_ij`` and ``ddg[..., k, l, i, j] = d_k d_l g_ij``.
    ``curvature_oracle(x)`` returns the coordinate components
    ``Rm[..., a, b, c, d]`` with the sign convention
    ``Rm(X, Y, Z, W) = -g(R(X, Y) Z, W)``.
    """

    dim: int
    metric_fn: Callable[[np.ndarray], np.ndarray]
    derivative_oracle: Optional[Callable] = None
    curvature_oracle: Optional[Callable] = None
    periods: tuple = ()
    domain: tuple = ()
    name: str = "chart"
    labels: tuple = ()

    def __post_init__(self):
        if not self.periods:
            object.__setattr__(self, "periods", (None,) * self.dim)
        if not self.domain:
            dom = tuple((0.0, p) if p else (-1.0, 1.0) for p in self.periods)
            object.__setattr__(self, "domain", dom)
        if len(self.periods) != self.dim or len(self.domain) != self.dim:
            raise ValueError("periods/domain length must equal dim")

    def metric(self, x) -> np.ndarray:
        """Evaluate g at ``x`` and verify positivity via Cholesky."""
        x = np.asarray(x, dtype=float)
        g = np.asarray(self.metric_fn(x), dtype=float)
        try:
            np.linalg.cholesky(g)
        except np.linalg.LinAlgError:
            raise SingularMetric(f"metric of {self.name} is not positive definite", point=x)
        return g

    def wrap(self, x) -> np.ndarray:
        """Reduce periodic coordinates into their fundamental domain."""
        x = np.array(x, dtype=float)
        for i, p in enumerate(self.periods):
            if p:
                x[..., i] = np.mod(x[..., i], p)
        return x

    def sample_points(self, count, seed=0, mode="random") -> np.ndarray:
        """Sample points inside ``domain`` (random or a tensor grid)."""
        lo = np.array([d[0] for d in self.domain])
        hi = np.array([d[1] for d in self.domain])
        if mode == "random":
            rng = np.random.default_rng(seed)
            return lo + (hi - lo) * rng.random((count, self.dim))
        if mode == "grid":
            per_axis = max(1, int(np.ceil(count ** (1.0 / self.dim))))
            axes = [lo[i] + (hi[i] - lo[i]) * (np.arange(per_axis) + 0.5) / per_axis
                    for i in range(self.dim)]
            mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
            return mesh[:count]
        raise ValueError(f"unknown sampler mode {mode!r}")


def cholesky_frame(g) -> np.ndarray:
    """Columns of ``L^{-T}`` where ``g = L L^T``: a g-orthonormal basis."""
    g = np.asarray(g, dtype=float)
    try:
        L = np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        raise SingularMetric("metric is not positive definite")
    eye = np.broadcast_to(np.eye(g.shape[-1]), g.shape)
    return np.swapaxes(np.linalg.solve(L, eye), -1, -2)


# ---------------------------------------------------------------------------
# curvature tensors

def _pair_index(n):
    pairs = list(combinations(range(n), 2))
    lookup = {}
    for k, (p, q) in enumerate(pairs):
        lookup[(p, q)] = (k, 1.0)
        lookup[(q, p)] = (k, -1.0)
    return pairs, lookup


def array_to_bivector(R) -> np.ndarray:
    """Pack ``R[..., p, q, r, s]`` into the symmetric bivector matrix.

    The result is symmetrised over the pair swap; antisymmetry within pairs
    is imposed by averaging the two orderings.
    """
    R = np.asarray(R, dtype=float)
    n = R.shape[-1]
    p, q = np.triu_indices(n, 1)
    A = 0.5 * (R - np.swapaxes(R, -4, -3))
    A = 0.5 * (A - np.swapaxes(A, -2, -1))
    Q = A[..., p[:, None], q[:, None], p[None, :], q[None, :]]
    return 0.5 * (Q + np.swapaxes(Q, -1, -2))


def bivector_to_array(Q, n) -> np.ndarray:
    """Expand a bivector matrix into the full ``n^4`` component array."""
    Q = np.asarray(Q, dtype=float)
    p, q = np.triu_indices(n, 1)
    R = np.zeros(Q.shape[:-2] + (n, n, n, n))
    P, Qi = p[:, None], q[:, None]
    Rr, S = p[None, :], q[None, :]
    R[..., P, Qi, Rr, S] = Q
    R[..., Qi, P, Rr, S] = -Q
    R[..., P, Qi, S, Rr] = -Q
    R[..., Qi, P, S, Rr] = Q
    return R


@dataclass(frozen=True)
class CurvatureTensor:
    """(0,4) Riemann tensor stored as a symmetric bivector matrix.

    Entry ``matrix[I, J]`` holds ``Rm(p, q, r, s)`` for the pairs
    ``I = (p < q)`` and ``J = (r < s)``, so the antisymmetries and the pair
    symmetry hold exactly by construction.
    """

    dim: int
    matrix: np.ndarray
    basis_tag: str = "orthonormal"
    _full: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        N = self.dim * (self.dim - 1) // 2
        M = np.asarray(self.matrix, dtype=float)
        if M.shape != (N, N):
            raise ValueError(f"bivector matrix must be {N}x{N}, got {M.shape}")
        M = 0.5 * (M + M.T)
        object.__setattr__(self, "matrix", _frozen(M))
        object.__setattr__(self, "_full", _frozen(bivector_to_array(M, self.dim)))

    @classmethod
    def from_array(cls, R, basis_tag="orthonormal") -> "CurvatureTensor":
        R = np.asarray(R, dtype=float)
        return cls(R.shape[-1], array_to_bivector(R), basis_tag)

    @classmethod
    def zero(cls, n, basis_tag="orthonormal") -> "CurvatureTensor":
        N = n * (n - 1) // 2
        return cls(n, np.zeros((N, N)), basis_tag)

    @property
    def full(self) -> np.ndarray:
        return self._full

    def __call__(self, p, q, r, s) -> float:
        return float(self._full[p, q, r, s])

    def __add__(self, other):
        if self.basis_tag != other.basis_tag:
            raise ValueError("cannot add tensors in different bases")
        return CurvatureTensor(self.dim, self.matrix + other.matrix, self.basis_tag)

    def __mul__(self, s):
        return CurvatureTensor(self.dim, float(s) * self.matrix, self.basis_tag)

    __rmul__ = __mul__

    def bianchi_defect(self) -> float:
        """Max |Rm(p,q,r,s) + Rm(q,r,p,s) + Rm(r,p,q,s)|."""
        R = self._full
        cyc = R + np.transpose(R, (1, 2, 0, 3)) + np.transpose(R, (2, 0, 1, 3))
        return float(np.max(np.abs(cyc))) if R.size else 0.0

    def sectional(self, u, v, g=None) -> float:
        """Sectional curvature of span(u, v); ``g`` defaults to identity."""
        u = np.asarray(u, float)
        v = np.asarray(v, float)
        g = np.eye(self.dim) if g is None else np.asarray(g, float)
        num = np.einsum("abcd,a,b,c,d->", self._full, u, v, u, v)
        den = (u @ g @ u) * (v @ g @ v) - (u @ g @ v) ** 2
        return float(num / den)

    def ricci(self, g_inv=None) -> np.ndarray:
        """Ric_bd = g^{ac} Rm(a, b, c, d)."""
        g_inv = np.eye(self.dim) if g_inv is None else np.asarray(g_inv, float)
        return np.einsum("ac,abcd->bd", g_inv, self._full)

    def scalar(self, g_inv=None) -> float:
        g_inv = np.eye(self.dim) if g_inv is None else np.asarray(g_inv, float)
        return float(np.einsum("bd,bd->", g_inv, self.ricci(g_inv)))

    def in_basis(self, E, basis_tag="orthonormal") -> "CurvatureTensor":
        """Components against the columns of ``E``."""
        E = np.asarray(E, float)
        R = np.einsum("abcd,ap,bq,cr,ds->pqrs", self._full, E, E, E, E)
        return CurvatureTensor.from_array(R, basis_tag)


# ---------------------------------------------------------------------------
# frames

@dataclass(frozen=True)
class OrthonormalFrame:
    """``m`` g-orthonormal vectors at ``point`` (columns of ``vectors``)."""

    point: np.ndarray
    vectors: np.ndarray
    chart: Optional[MetricChart] = None
    completed: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "point", _frozen(self.point))
        object.__setattr__(self, "vectors", _frozen(self.vectors))
        if self.completed is not None:
            object.__setattr__(self, "completed", _frozen(self.completed))

    @property
    def m(self) -> int:
        return self.vectors.shape[1]

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    def gram(self, full=False) -> np.ndarray:
        V = self.completed if full else self.vectors
        g = _metric_at(self.chart, self.point, V.shape[0])
        return V.T @ g @ V


def _metric_at(chart, point, n):
    if chart is None:
        return np.eye(n)
    return chart.metric(point)


def _gs_columns(V, g, basis=None):
    """Modified Gram-Schmidt (two passes) of the columns of V in metric g."""
    n, k = V.shape
    out = [] if basis is None else [basis[:, i] for i in range(basis.shape[1])]
    start = len(out)
    for j in range(k):
        v = V[:, j].astype(float).copy()
        norm0 = np.sqrt(max(v @ g @ v, 0.0))
        if norm0 == 0.0:
            raise DegenerateInput(f"vector {j} is zero")
        for _ in range(2):
            for e in out:
                v = v - (e @ g @ v) * e
        norm = np.sqrt(max(v @ g @ v, 0.0))
        if norm < PIVOT_TOL * norm0:
            raise DegenerateInput(f"vector {j} is numerically dependent (pivot {norm / norm0:.2e})")
        out.append(v / norm)
    return np.column_stack(out[start:]) if k else np.zeros((n, 0))


def gram_schmidt(raw_vectors, chart: Optional[MetricChart], point) -> OrthonormalFrame:
    """Orthonormalise ``raw_vectors`` in the chart metric at ``point``.

    ``raw_vectors`` is a list of coordinate vectors or an ``n x k`` array of
    columns.  Raises :class:`DegenerateInput` when the vectors are
    dependent to within the pivot tolerance.
    """
    V = np.asarray(raw_vectors, dtype=float)
    if isinstance(raw_vectors, (list, tuple)):
        V = V.T
    if V.ndim == 1:
        V = V[:, None]
    n = V.shape[0]
    if V.shape[1] > n:
        raise DegenerateInput("more vectors than dimensions")
    g = _metric_at(chart, point, n)
    return OrthonormalFrame(np.asarray(point, float), _gs_columns(V, g), chart)


def complete_frame(frame: OrthonormalFrame, seed=0, max_tries=8) -> OrthonormalFrame:
    """Extend ``frame`` to a full g-orthonormal basis.

    The first ``m`` columns are kept bitwise.  Candidates are taken from the
    Euclidean null space of ``V^T g``; random candidates are used on retry.
    """
    V = np.asarray(frame.vectors)
    n, m = V.shape
    g = _metric_at(frame.chart, frame.point, n)
    if m == n:
        return OrthonormalFrame(frame.point, V, frame.chart, V.copy())
    rng = np.random.default_rng(seed)
    if m:
        _, _, vt = np.linalg.svd(V.T @ g)
        cand = vt[m:].T
    else:
        cand = np.eye(n)
    for _ in range(max_tries):
        try:
            rest = _gs_columns(cand, g, basis=V)
        except DegenerateInput:
            cand = rng.standard_normal((n, n - m))
            continue
        full = np.column_stack([V, rest])
        return OrthonormalFrame(frame.point, V, frame.chart, full)
    raise DegenerateInput("frame completion failed after retries")


def haar_random_frame(seed, chart: Optional[MetricChart], point, m, n=None) -> OrthonormalFrame:
    """Random g-orthonormal m-frame, Haar distributed on the Stiefel manifold.

    Gaussian coefficients are taken against the Cholesky orthonormal basis,
    so the law is invariant under g-orthogonal rotations.
    """
    n = chart.dim if chart is not None else int(n)
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    g = _metric_at(chart, point, n)
    E = cholesky_frame(g)
    Z = np.random.default_rng(seed).standard_normal((n, m))
    return OrthonormalFrame(np.asarray(point, float), _gs_columns(E @ Z, g), chart)


def haar_stiefel(rng, n, m, size) -> np.ndarray:
    """``size`` Haar-random Euclidean n x m Stiefel matrices (batched QR)."""
    Z = rng.standard_normal((size, n, m))
    Qm, Rm = np.linalg.qr(Z)
    s = np.sign(np.diagonal(Rm, axis1=-2, axis2=-1))
    s[s == 0] = 1.0
    return Qm * s[:, None, :]
