"""Minimisation of the m-intermediate curvature over m-planes.

The objective for an orthonormal ``n x m`` matrix ``Y`` (in an orthonormal
basis of the tangent space) is

    C_m(Y) = tr(Ric P) - 1/2 Rm_abcd P_ac P_bd,    P = Y Y^T,

which depends on ``Y`` only through its span.  Restarts are optimised in
one batch with Barzilai-Borwein steps, Armijo backtracking and a QR
retraction.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .curvature import intermediate_curvature
from .errors import BadOrder, SingularMetric
from .geometry import (CurvatureTensor, MetricChart, OrthonormalFrame, cholesky_frame,
                       complete_frame, haar_stiefel)

TOL_POS = 1e-6
GRAD_TOL = 1e-7
ARMIJO_C = 1e-4
SHRINK = 0.5


@dataclass(frozen=True)
class MinimizationResult:
    point: Optional[np.ndarray]
    m: int
    min_value: float
    argmin_frame: OrthonormalFrame
    restarts_used: int
    converged: bool
    gradient_norm_at_end: float

    def to_dict(self):
        return {
            "point": None if self.point is None else [float(v) for v in self.point],
            "m": self.m,
            "min_value": self.min_value,
            "argmin_frame": np.asarray(self.argmin_frame.vectors).tolist(),
            "restarts_used": self.restarts_used,
            "converged": self.converged,
            "gradient_norm_at_end": self.gradient_norm_at_end,
        }


@dataclass(frozen=True)
class PositivityCertificate:
    chart_id: str
    m: int
    sample_points: np.ndarray
    results: list
    verdict: str
    tol_pos: float = TOL_POS
    witness: Optional[OrthonormalFrame] = None
    witness_point: Optional[int] = None
    note: str = "sampled evidence at finitely many points, not a global proof"

    @property
    def minima(self) -> np.ndarray:
        return np.array([r.min_value for r in self.results])

    def to_dict(self):
        d = {
            "chart": self.chart_id,
            "m": self.m,
            "verdict": self.verdict,
            "tol_pos": self.tol_pos,
            "note": self.note,
            "min_over_points": float(self.minima.min()),
            "max_over_points": float(self.minima.max()),
            "all_converged": bool(all(r.converged for r in self.results)),
            "points": [r.to_dict() for r in self.results],
        }
        if self.witness is not None:
            d["witness_point_index"] = self.witness_point
            d["witness_frame"] = np.asarray(self.witness.vectors).tolist()
        return d


# ---------------------------------------------------------------------------
# objective

def _ricci(R):
    return np.einsum("abad->bd", R)


def cm_objective(R, Y):
    """C_m for a batch of orthonormal matrices ``Y`` (..., n, m)."""
    P = Y @ np.swapaxes(Y, -1, -2)
    return (np.einsum("ab,...ab->...", _ricci(R), P)
            - 0.5 * np.einsum("abcd,...ac,...bd->...", R, P, P, optimize=True))


def cm_gradient(R, Y):
    """Riemannian (horizontal) gradient of :func:`cm_objective`."""
    P = Y @ np.swapaxes(Y, -1, -2)
    M = np.einsum("abcd,...bd->...ac", R, P, optimize=True)
    G = 2.0 * (_ricci(R) - M) @ Y
    return G - Y @ (np.swapaxes(Y, -1, -2) @ G)


def qr_retract(Y):
    Q, Rr = np.linalg.qr(Y)
    s = np.sign(np.diagonal(Rr, axis1=-2, axis2=-1))
    s[s == 0] = 1.0
    return Q * s[..., None, :]


def derived_seed(seed, index) -> int:
    """Scheduling-independent child seed for task ``index``."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def restart_starts(seed, n, m, restarts):
    """Haar starts; restart ``i`` uses the seed sequence ``(seed, i)``."""
    return np.stack([haar_stiefel(np.random.default_rng([int(seed), i]), n, m, 1)[0]
                     for i in range(restarts)])


def _descend(R, Y, max_iters, tol):
    """Batched Riemannian gradient descent; returns (Y, f, gnorm, iters)."""
    B = Y.shape[0]
    f = cm_objective(R, Y)
    G = cm_gradient(R, Y)
    gn = np.linalg.norm(G, axis=(1, 2))
    t = np.full(B, 0.5)
    Y_prev, G_prev = None, None
    it = 0
    for it in range(1, max_iters + 1):
        active = gn >= tol
        if not active.any():
            break
        if Y_prev is not None:
            S = Y - Y_prev
            D = G - G_prev
            sd = np.einsum("bij,bij->b", S, D)
            ss = np.einsum("bij,bij->b", S, S)
            bb = np.where(sd > 1e-300, ss / np.where(sd > 1e-300, sd, 1.0), 0.5)
            t = np.clip(bb, 1e-6, 1e3)
        step = t.copy()
        Y_new = Y.copy()
        f_new = f.copy()
        pending = active.copy()
        for _ in range(60):
            if not pending.any():
                break
            idx = np.flatnonzero(pending)
            cand = qr_retract(Y[idx] - step[idx, None, None] * G[idx])
            fc = cm_objective(R, cand)
            ok = fc <= f[idx] - ARMIJO_C * step[idx] * gn[idx] ** 2
            # objective differences below rounding are accepted as ties
            ok |= np.abs(fc - f[idx]) <= 1e-15 * (1 + np.abs(f[idx]))
            good = idx[ok]
            Y_new[good] = cand[ok]
            f_new[good] = fc[ok]
            pending[good] = False
            step[idx[~ok]] *= SHRINK
        Y_prev, G_prev = Y, G
        Y, f = Y_new, f_new
        G = cm_gradient(R, Y)
        gn = np.linalg.norm(G, axis=(1, 2))
    return Y, f, gn, it


def minimize_cm(tensor: CurvatureTensor, m: int, restarts=32, max_iters=2000, seed=0,
                step=None, point=None, basis=None, chart=None) -> MinimizationResult:
    """Minimise C_m over orthonormal m-frames of an orthonormal-basis tensor.

    ``basis`` (columns, coordinate components) maps the optimiser's
    orthonormal coordinates back to chart vectors for the returned frame.
    """
    n = tensor.dim
    if not 1 <= m <= n - 1:
        raise BadOrder(f"order m={m} outside [1, {n - 1}]")
    R = tensor.full
    Y0 = restart_starts(seed, n, m, restarts)
    Y, f, gn, _ = _descend(R, Y0, max_iters, GRAD_TOL)
    best = int(np.argmin(f))
    Yb = Y[best]
    frame = complete_frame(OrthonormalFrame(np.zeros(n) if point is None else point, Yb))
    value = intermediate_curvature(tensor, frame.completed, m)
    if basis is not None:
        vec = np.asarray(basis) @ Yb
        arg = OrthonormalFrame(point, vec, chart, np.asarray(basis) @ frame.completed)
    else:
        arg = frame
    return MinimizationResult(None if point is None else np.asarray(point, float), m, value, arg,
                              restarts, bool(gn[best] < GRAD_TOL), float(gn[best]))


def frame_tensor(chart: MetricChart, point):
    """Curvature tensor at ``point`` in the Cholesky orthonormal basis."""
    from .curvature import riemann_coordinate
    point = np.asarray(point, float)
    E = cholesky_frame(chart.metric(point))
    Rc, _ = riemann_coordinate(chart, point)
    R = np.einsum("abcd,ap,bq,cr,ds->pqrs", Rc, E, E, E, E, optimize=True)
    return CurvatureTensor.from_array(R), E


def certify(chart: MetricChart, m: int, sampler=None, restarts=32, max_iters=2000, seed=0,
            tol_pos=TOL_POS, threads=1) -> PositivityCertificate:
    """Sampled positivity verdict for C_m on ``chart``.

    ``sampler`` is a dict ``{"mode": "random"|"grid", "count": int,
    "seed": int}`` or an explicit array of points.
    """
    sampler = sampler if sampler is not None else {}
    if isinstance(sampler, dict):
        pts = chart.sample_points(sampler.get("count", 50), seed=sampler.get("seed", seed),
                                  mode=sampler.get("mode", "random"))
    else:
        pts = np.atleast_2d(np.asarray(sampler, float))

    def run(i):
        try:
            T, E = frame_tensor(chart, pts[i])
        except SingularMetric as exc:
            raise SingularMetric(f"{exc} (sample {i})", point=pts[i]) from None
        return minimize_cm(T, m, restarts=restarts, max_iters=max_iters, seed=derived_seed(seed, i),
                           point=pts[i], basis=E, chart=chart)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(len(pts))))
    else:
        results = [run(i) for i in range(len(pts))]

    minima = np.array([r.min_value for r in results])
    witness, widx = None, None
    if np.all(minima > tol_pos):
        verdict = "positive"
    elif np.any(minima < -tol_pos):
        verdict = "indefinite"
        widx = int(np.argmin(minima))
        witness = results[widx].argmin_frame
    else:
        verdict = "nonnegative"
    return PositivityCertificate(chart.name, m, pts, results, verdict, tol_pos, witness, widx)


# ---------------------------------------------------------------------------
# random tensors and brute force

def random_algebraic_tensor(rng, n, normalize=True) -> CurvatureTensor:
    """Generic algebraic curvature tensor from a Gaussian 4-array.

    Antisymmetrise both pairs, symmetrise under pair swap and remove the
    cyclic (Bianchi) part.
    """
    A = rng.standard_normal((n, n, n, n))
    A = A - A.transpose(1, 0, 2, 3)
    A = A - A.transpose(0, 1, 3, 2)
    A = A + A.transpose(2, 3, 0, 1)
    cyc = A + A.transpose(1, 2, 0, 3) + A.transpose(2, 0, 1, 3)
    A = A - cyc / 3.0
    if normalize:
        A = A / np.linalg.norm(A)
    return CurvatureTensor.from_array(A)


def brute_force_min(tensor: CurvatureTensor, m: int, samples=10**6, seed=0, chunk=100_000):
    """Minimum of C_m over Haar-random m-frames; returns (value, frame)."""
    rng = np.random.default_rng(seed)
    R = tensor.full
    n = tensor.dim
    best, arg = np.inf, None
    done = 0
    while done < samples:
        k = min(chunk, samples - done)
        Y = haar_stiefel(rng, n, m, k)
        f = cm_objective(R, Y)
        i = int(np.argmin(f))
        if f[i] < best:
            best, arg = float(f[i]), Y[i]
        done += k
    return best, arg


def product_tensor(blocks) -> CurvatureTensor:
    """Block-diagonal orthonormal tensor from factor tensors (4-arrays)."""
    n = sum(b.shape[0] for b in blocks)
    R = np.zeros((n,) * 4)
    o = 0
    for b in blocks:
        k = b.shape[0]
        R[o:o + k, o:o + k, o:o + k, o:o + k] = b
        o += k
    return CurvatureTensor.from_array(R)


def cylinder_tensor(n, k) -> CurvatureTensor:
    """Tensor of S^{k-1} x R^{n-k+1} with the unit round factor."""
    from .models import constant_curvature_tensor
    blocks = [constant_curvature_tensor(k - 1).full] if k - 1 >= 2 else [np.zeros((max(k - 1, 0),) * 4)]
    blocks.append(np.zeros((n - k + 1,) * 4))
    return product_tensor([b for b in blocks if b.shape[0] > 0])
