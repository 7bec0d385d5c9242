"""Algebraic layer of the slicing argument, checked on synthetic data.

Conventions: at a point of the bottom slice the orthonormal frame is
``e_1..e_n`` with ``e_j`` the unit normal of slice ``j`` inside slice
``j - 1`` for ``j <= m``.  The second fundamental form of slice ``k`` is a
symmetric ``(n - k) x (n - k)`` matrix over ``e_{k+1}..e_n``; in code
index ``0`` of ``h_k`` is ``e_{k+1}``.  Gradients ``a_k = D log rho_k``
(taken inside slice ``k``) are full ``n``-vectors supported on
``e_{k+1}..e_n``.

Everything here is batched over a leading trial axis.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .errors import BadOrder, BadShape, InfeasiblePair, NotTraceless

SYNTH_TOL = 1e-12
TRACE_TOL = 1e-10


# ---------------------------------------------------------------------------
# exact arithmetic

@dataclass(frozen=True)
class FeasibilityRow:
    n: int
    m: int
    lhs: int
    rhs: int
    feasible: bool
    coefficient: Optional[Fraction]

    def as_csv_row(self):
        num = "" if self.coefficient is None else self.coefficient.numerator
        den = "" if self.coefficient is None else self.coefficient.denominator
        return [self.n, self.m, self.lhs, self.rhs, int(self.feasible), num, den]

    def to_dict(self):
        return {"n": self.n, "m": self.m, "lhs": self.lhs, "rhs": self.rhs, "feasible": self.feasible,
                "coefficient": None if self.coefficient is None else str(self.coefficient)}


def is_feasible(n: int, m: int) -> bool:
    """``n (m - 2) <= m^2 - 2`` in integer arithmetic."""
    return n * (m - 2) <= m * m - 2


def coefficient(n: int, m: int) -> Fraction:
    """``(m^2 - 2 - n (m - 2)) / (2 (n - m)(m - 1))`` for ``2 <= m <= n - 1``."""
    if not 2 <= m <= n - 1:
        raise BadOrder(f"coefficient needs 2 <= m <= n - 1, got (n, m) = ({n}, {m})")
    return Fraction(m * m - 2 - n * (m - 2), 2 * (n - m) * (m - 1))


def dimension_table(n_max: int) -> list:
    """Feasibility rows for ``2 <= n <= n_max`` and ``1 <= m <= n - 1``."""
    if n_max < 2:
        raise ValueError("n_max must be at least 2")
    rows = []
    for n in range(2, n_max + 1):
        for m in range(1, n):
            rows.append(FeasibilityRow(n, m, n * (m - 2), m * m - 2, is_feasible(n, m),
                                       coefficient(n, m) if m >= 2 else None))
    return rows


def table_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "m", "lhs", "rhs", "feasible", "coefficient_num", "coefficient_den"])
    for r in rows:
        w.writerow(r.as_csv_row())
    return buf.getvalue()


def require_feasible(n: int, m: int):
    if not 1 <= m <= n - 1:
        raise BadOrder(f"order m={m} outside [1, {n - 1}]")
    if not is_feasible(n, m):
        raise InfeasiblePair(f"(n, m) = ({n}, {m}) violates n(m-2) <= m^2-2: "
                             f"{n * (m - 2)} > {m * m - 2}")


def alpha(k: int) -> Fraction:
    """Weights ``(k - 1) / (2k)`` of the gradient estimate."""
    return Fraction(k - 1, 2 * k)


def alpha_identity_failures(k_max: int = 100) -> list:
    """Indices ``2 <= k <= k_max`` where ``1 - alpha_{k-1} != 1 / (4 alpha_k)``."""
    return [k for k in range(2, k_max + 1) if 1 - alpha(k - 1) != 1 / (4 * alpha(k))]


# ---------------------------------------------------------------------------
# extrinsic terms V_k

def _check_levels(h_list, n, m, check_trace=True):
    if not 2 <= m <= n - 1:
        raise BadOrder(f"extrinsic terms need 2 <= m <= n - 1, got (n, m) = ({n}, {m})")
    if len(h_list) != m:
        raise BadShape(f"expected {m} second fundamental forms, got {len(h_list)}")
    out = []
    for k, h in enumerate(h_list, start=1):
        h = np.asarray(h, float)
        if h.ndim < 2 or h.shape[-2:] != (n - k, n - k):
            raise BadShape(f"h_{k} must be {(n - k, n - k)}, got {h.shape[-2:]}")
        if not np.allclose(h, np.swapaxes(h, -1, -2), atol=1e-12, rtol=0):
            raise BadShape(f"h_{k} is not symmetric")
        out.append(h)
    tr = np.abs(np.trace(out[0], axis1=-2, axis2=-1))
    if check_trace and np.any(tr > TRACE_TOL):
        raise NotTraceless(f"h_1 has trace {float(np.max(tr)):.3e}; the top slice must be minimal")
    return out


def _pair_mask(size, p_count):
    """Mask of pairs ``p < q`` with ``p < p_count`` (local indices)."""
    i = np.arange(size)
    return (i[:, None] < i[None, :]) & (i[:, None] < p_count)


def _cross(h, p_count):
    d = np.diagonal(h, axis1=-2, axis2=-1)
    M = _pair_mask(h.shape[-1], p_count)
    return np.einsum("pq,...pq->...", M, d[..., :, None] * d[..., None, :] - h * h)


def _mean_weight(k):
    """``1/2 - 1/(2(k - 1))`` for ``k >= 2``."""
    return 0.5 - 0.5 / (k - 1)


def vk_terms(h_list, n: int, m: int, check_trace=True) -> dict:
    """Extrinsic terms ``V_1..V_m``, their lower bounds and slacks.

    ``h_list[k - 1]`` is ``h_k`` (optionally batched).  Returns a dict with
    lists ``V``, ``bounds``, ``slacks`` and the exact ``coefficient``.
    ``check_trace=False`` skips the minimality test on ``h_1`` (for
    discretised data whose trace is only small).
    """
    hs = _check_levels(h_list, n, m, check_trace)
    c = float(coefficient(n, m))
    V, bounds = [], []
    for k, h in enumerate(hs, start=1):
        norm2 = np.einsum("...ij,...ij->...", h, h)
        d = np.diagonal(h, axis1=-2, axis2=-1)
        cross = _cross(h, m - k)
        if k == 1:
            V.append(norm2 + cross)
            bounds.append(c * np.sum(d[..., :m - 1], axis=-1) ** 2)
        else:
            H = np.sum(d, axis=-1)
            V.append(norm2 - _mean_weight(k) * H * H + cross)
            bounds.append(c * np.sum(d[..., m - k:], axis=-1) ** 2)
    return {"V": V, "bounds": bounds, "slacks": [v - b for v, b in zip(V, bounds)],
            "coefficient": coefficient(n, m)}


def random_levels(rng, n, m, trials, scale=1.0):
    """Gaussian symmetric ``h_1..h_m`` with ``h_1`` traceless."""
    out = []
    for k in range(1, m + 1):
        A = rng.standard_normal((trials, n - k, n - k)) * scale
        h = 0.5 * (A + np.swapaxes(A, -1, -2))
        if k == 1:
            tr = np.trace(h, axis1=-2, axis2=-1) / (n - 1)
            h = h - tr[:, None, None] * np.eye(n - 1)
        out.append(h)
    return out


def bottom_equality_levels(n, m, H=1.0):
    """Levels with ``h_m = (H / (n - m)) Id`` (all other levels zero).

    Saturates the trace estimate, so ``V_m`` equals its bound.
    """
    levels = [np.zeros((1, n - k, n - k)) for k in range(1, m + 1)]
    levels[-1] = (H / (n - m)) * np.eye(n - m)[None]
    return levels


def sign_flip_witnesses(n, m, count=16, seed=0, noise=1e-3):
    """Bottom-slice data with ``V_m < 0`` when the coefficient is negative.

    Near-umbilic ``h_m`` gives ``V_m ~ c(n, m) H^2``; for infeasible pairs
    this is negative, so the nonnegativity used by the argument fails.
    Returns ``(V_m, H)`` arrays.
    """
    rng = np.random.default_rng(seed)
    s = rng.uniform(0.5, 2.0, size=count)
    A = rng.standard_normal((count, n - m, n - m)) * noise
    h = s[:, None, None] * np.eye(n - m) + 0.5 * (A + np.swapaxes(A, -1, -2))
    H = np.trace(h, axis1=-2, axis2=-1)
    V = np.einsum("tij,tij->t", h, h) - _mean_weight(m) * H * H
    return V, H


# ---------------------------------------------------------------------------
# proof steps as standalone inequalities

def cauchy_schwarz_slack(x):
    """``sum x^2 - (sum x)^2 / len(x)`` along the last axis."""
    x = np.asarray(x, float)
    return np.sum(x * x, axis=-1) - np.sum(x, axis=-1) ** 2 / x.shape[-1]


def young_slack(a, b, m, k):
    """``ab + (m-1)/(2(m-k)) a^2 + (m-k)/(2(m-1)) b^2``."""
    return a * b + (m - 1) / (2 * (m - k)) * a * a + (m - k) / (2 * (m - 1)) * b * b


def trace_slack(h):
    """``|h|^2 - (tr h)^2 / dim`` for symmetric ``h``."""
    return np.einsum("...ij,...ij->...", h, h) - np.trace(h, axis1=-2, axis2=-1) ** 2 / h.shape[-1]


def offdiagonal_slack(h, m, k):
    """``V_k`` minus its diagonal-only lower estimate (first step of the bounds)."""
    d = np.diagonal(h, axis1=-2, axis2=-1)
    M = _pair_mask(h.shape[-1], m - k)
    full = np.einsum("...ij,...ij->...", h, h) + _cross(h, m - k)
    diag = np.sum(d * d, axis=-1) + np.einsum("pq,...p,...q->...", M, d, d)
    return full - diag


# ---------------------------------------------------------------------------
# gradient terms

def random_gradients(rng, n, m, trials, scale=1.0):
    """``a_1..a_{m-1}`` with ``a_k`` supported on ``e_{k+1}..e_n``."""
    out = []
    for k in range(1, m):
        a = rng.standard_normal((trials, n)) * scale
        a[:, :k] = 0.0
        out.append(a)
    return out


def gradient_terms(a_list, n, m) -> dict:
    """Gradient term, its lower estimate and the completed-square slack.

    ``b_k = D_{Sigma_k} log rho_{k-1}`` is ``a_{k-1}`` with the ``e_k``
    component removed (``b_1 = 0`` because ``rho_0`` is constant), and
    ``H_{k+1} = -<a_k, e_{k+1}>`` by criticality.
    """
    if len(a_list) != m - 1:
        raise BadShape(f"expected {m - 1} gradients, got {len(a_list)}")
    a = [np.asarray(v, float) for v in a_list]
    trials = a[0].shape[0] if a else 1
    for k, v in enumerate(a, start=1):
        if v.shape[-1] != n:
            raise BadShape(f"a_{k} must have {n} components")
        if np.any(v[..., :k] != 0):
            raise BadShape(f"a_{k} must vanish on e_1..e_{k}")
    b = [np.zeros((trials, n))]
    for k in range(2, m + 1):
        v = a[k - 2].copy()
        v[..., k - 1] = 0.0
        b.append(v)
    H = {k + 1: -a[k - 1][..., k] for k in range(1, m)}
    G = np.zeros(trials)
    for k in range(1, m):
        G = G + np.einsum("ti,ti->t", a[k - 1], a[k - 1] - b[k - 1])
    rhs = np.zeros(trials)
    for k in range(2, m + 1):
        rhs = rhs + (0.5 + 0.5 / (k - 1)) * H[k] ** 2
    squares = np.zeros(trials)
    if m >= 2:
        squares = squares + float(1 - alpha(m - 1)) * np.einsum("ti,ti->t", b[m - 1], b[m - 1])
    for k in range(2, m):
        al = float(alpha(k))
        r = a[k - 1] - b[k - 1] / (2 * al)
        squares = squares + al * np.einsum("ti,ti->t", r, r)
    return {"G": G, "rhs": rhs, "slack": G - rhs, "squares": squares,
            "H": [H[k] for k in range(2, m + 1)]}


def gradient_equality_witness(n, m, t=1.0, s=None):
    """Gradients for which every completed square vanishes.

    ``a_{m-1} = t e_m`` and ``a_{k-1} = s_k e_k + 2 alpha_k a_k``.
    """
    s = [0.3 * (k + 1) for k in range(m)] if s is None else s
    a = [None] * (m - 1)
    if m >= 2:
        v = np.zeros((1, n))
        v[0, m - 1] = t
        a[m - 2] = v
    for k in range(m - 1, 1, -1):
        v = 2 * float(alpha(k)) * a[k - 1]
        v = v.copy()
        v[0, k - 1] += s[k - 1]
        a[k - 2] = v
    return a


# ---------------------------------------------------------------------------
# iterated Gauss equations and full slicing

def _embed(h, n, k):
    """``h_k`` as an ``n x n`` matrix acting on ``e_{k+1}..e_n``."""
    out = np.zeros(h.shape[:-2] + (n, n))
    out[..., k:, k:] = h
    return out


def slice_ricci_terms(R, h_list, m):
    """``Ric_{Sigma_{p-1}}(e_p, e_p)`` for ``p = 1..m`` by applying the Gauss
    equation one level at a time (the oracle).

    ``R`` is an ``n^4`` orthonormal tensor (optionally batched).
    """
    R = np.asarray(R, float)
    n = R.shape[-1]
    Rk = R.copy()
    out = []
    for p in range(1, m + 1):
        q = np.arange(p, n)
        out.append(np.sum(Rk[..., p - 1, q, p - 1, q], axis=-1))
        if p <= len(h_list) and p < m:
            E = _embed(np.asarray(h_list[p - 1], float), n, p)
            Rk = (Rk + np.einsum("...ac,...bd->...abcd", E, E)
                  - np.einsum("...ad,...bc->...abcd", E, E))
    return out


def cm_batched(R, m):
    """``C_m`` in the standard frame for a batch of tensors."""
    n = R.shape[-1]
    K = np.einsum("...pqpq->...pq", R)
    mask = np.triu(np.ones((n, n), bool), 1)
    mask[m:, :] = False
    return np.einsum("pq,...pq->...", mask, K)


def gauss_correction(h_list, n, m):
    """``sum_k sum_{p=k+1}^m sum_{q>p} (h_k(e_p,e_p) h_k(e_q,e_q) - h_k(e_p,e_q)^2)``."""
    total = 0.0
    for k in range(1, m):
        h = np.asarray(h_list[k - 1], float)
        total = total + _cross(h, m - k)
    return total


def iterated_gauss_residual(R, h_list, m):
    """``R_sum - C_m - correction`` for synthetic data (``h_list`` holds
    ``h_1..h_{m-1}``; further levels are ignored)."""
    R = np.asarray(R, float)
    n = R.shape[-1]
    ric = sum(slice_ricci_terms(R, h_list, m))
    return ric - cm_batched(R, m) - gauss_correction(h_list, n, m)


def random_tensors(rng, n, trials):
    """Batch of algebraic curvature tensors (unit Frobenius norm)."""
    A = rng.standard_normal((trials, n, n, n, n))
    A = A - A.transpose(0, 2, 1, 3, 4)
    A = A - A.transpose(0, 1, 2, 4, 3)
    A = A + A.transpose(0, 3, 4, 1, 2)
    A = A - (A + A.transpose(0, 2, 3, 1, 4) + A.transpose(0, 3, 1, 2, 4)) / 3.0
    return A / np.linalg.norm(A.reshape(trials, -1), axis=1)[:, None, None, None, None]


def full_slicing_terms(R, h_list, a_list):
    """Both branches of the full-slicing rewrite (``m = n - 1``).

    Returns ``lhs = R + E + G`` (Gauss oracle), the exact rewrite
    ``1/2 scal + 1/2 sum |h_k|^2 - 1/2 sum H_k^2 + G`` and the lower bound
    ``1/2 scal + 1/2 sum |h_k|^2 + sum_{k>=2} H_k^2 / (2(k-1))``.
    """
    R = np.asarray(R, float)
    n = R.shape[-1]
    m = n - 1
    if len(h_list) != m:
        raise BadShape(f"full slicing needs {m} levels")
    ric = sum(slice_ricci_terms(R, h_list, m))
    norms = [np.einsum("...ij,...ij->...", h, h) for h in h_list]
    Hs = [np.trace(h, axis1=-2, axis2=-1) for h in h_list]
    E = sum(norms) - sum(H * H for H in Hs[1:])
    grad = gradient_terms(a_list, n, m)
    G = grad["G"]
    scal = np.einsum("...abab->...", R)
    lhs = ric + E + G
    rewrite = 0.5 * scal + 0.5 * sum(norms) - 0.5 * sum(H * H for H in Hs) + G
    bound = 0.5 * scal + 0.5 * sum(norms) + sum(Hs[k - 1] ** 2 / (2 * (k - 1)) for k in range(2, m + 1))
    return {"lhs": lhs, "rewrite": rewrite, "bound": bound, "slack": lhs - bound,
            "identity_residual": lhs - rewrite}


def consistent_full_slicing(rng, n, trials):
    """Random levels and gradients tied together by criticality.

    ``h_1`` is traceless and ``H_{k+1} = -<a_k, e_{k+1}>``; the last
    level is ``1 x 1`` so ``|h|^2 = H^2`` holds automatically.
    """
    m = n - 1
    h = random_levels(rng, n, m, trials)
    a = random_gradients(rng, n, m, trials)
    for k in range(1, m):
        hk = h[k]  # level k + 1
        H = -a[k - 1][:, k]
        tr = np.trace(hk, axis1=-2, axis2=-1)
        hk = hk + ((H - tr) / hk.shape[-1])[:, None, None] * np.eye(hk.shape[-1])
        h[k] = hk
    return h, a


# ---------------------------------------------------------------------------
# bottom slice gradient cancellation

def bottom_gradient_terms(rho, grad_rho, lap_rho):
    """The two gradient contributions of ``psi = 1/rho`` in the stability form.

    Computes ``-Delta(1/rho)`` and ``-<D log rho, D(1/rho)>`` by the chain
    rule and splits off ``rho^{-1} Delta log rho``.  Returns
    ``(grad_part_1, grad_part_2)``; they cancel.
    """
    rho = np.asarray(rho, float)
    g2 = np.einsum("...i,...i->...", grad_rho, grad_rho)
    lap_inv = -lap_rho / rho ** 2 + 2 * g2 / rho ** 3
    lap_log = lap_rho / rho - g2 / rho ** 2
    part1 = -lap_inv - lap_log / rho
    dlog = grad_rho / rho[..., None]
    dinv = -grad_rho / rho[..., None] ** 2
    part2 = -np.einsum("...i,...i->...", dlog, dinv)
    return part1, part2


# ---------------------------------------------------------------------------
# sweeps

@dataclass
class CheckStat:
    name: str
    trials: int
    min_slack: float
    violations: int
    tolerance: float
    expect_violations: bool = False

    @property
    def passed(self) -> bool:
        return self.violations > 0 if self.expect_violations else self.violations == 0

    def to_dict(self):
        return {"name": self.name, "trials": self.trials, "min_slack": self.min_slack,
                "violations": self.violations, "tolerance": self.tolerance,
                "expect_violations": self.expect_violations, "pass": self.passed}


def _stat(name, slack, tol=SYNTH_TOL, expect=False):
    slack = np.asarray(slack, float).ravel()
    return CheckStat(name, int(slack.size), float(np.min(slack)) if slack.size else 0.0,
                     int(np.sum(slack < -tol)), tol, expect)


def _residual_stat(name, residual, tol=SYNTH_TOL):
    r = np.abs(np.asarray(residual, float).ravel())
    return CheckStat(name, int(r.size), -float(np.max(r)) if r.size else 0.0, int(np.sum(r > tol)), tol)


def sweep_pair(n, m, trials=10**5, seed=0, chunk=20_000, zero=False) -> list:
    """Random verification of every inequality of the bounds for ``(n, m)``.

    Feasible pairs must show zero violations.  For infeasible pairs the
    bounds themselves still hold (they are identities plus Cauchy-Schwarz
    and Young) but the bottom term can be negative; this is reported as an
    expected violation of ``V_m >= 0``.
    """
    if not 2 <= m <= n - 1:
        raise BadOrder(f"sweep needs 2 <= m <= n - 1, got ({n}, {m})")
    feasible = is_feasible(n, m)
    acc = {}

    def add(stat):
        if stat.name in acc:
            old = acc[stat.name]
            acc[stat.name] = CheckStat(old.name, old.trials + stat.trials, min(old.min_slack, stat.min_slack),
                                       old.violations + stat.violations, old.tolerance, old.expect_violations)
        else:
            acc[stat.name] = stat

    done = 0
    index = 0
    while done < trials:
        t = min(chunk, trials - done)
        rng = np.random.default_rng([int(seed), n, m, index])
        scale = 0.0 if zero else 1.0
        h = random_levels(rng, n, m, t, scale)
        res = vk_terms(h, n, m)
        for k in range(1, m + 1):
            add(_stat(f"V_{k} bound", res["slacks"][k - 1]))
            add(_stat(f"off-diagonal discard k={k}", offdiagonal_slack(h[k - 1], m, k)))
        if feasible:
            for k in range(1, m + 1):
                add(_stat(f"V_{k} >= 0", res["V"][k - 1]))
        d = [np.diagonal(hk, axis1=-2, axis2=-1) for hk in h]
        add(_stat("trace estimate (bottom)", trace_slack(h[-1])))
        add(_stat("Cauchy-Schwarz (top, tangential)", cauchy_schwarz_slack(d[0][:, :m - 1])))
        add(_stat("Cauchy-Schwarz (top, normal)", cauchy_schwarz_slack(d[0][:, m - 1:])))
        for k in range(2, m):
            dk = d[k - 1]
            add(_stat(f"Cauchy-Schwarz k={k}", cauchy_schwarz_slack(dk[:, :m - k])))
            add(_stat(f"Young k={k}", young_slack(dk[:, :m - k].sum(-1), dk[:, m - k:].sum(-1), m, k)))
        a = random_gradients(rng, n, m, t, scale)
        g = gradient_terms(a, n, m)
        add(_stat("gradient estimate", g["slack"]))
        add(_residual_stat("gradient completed squares", g["slack"] - g["squares"]))
        R = random_tensors(rng, n, min(t, 2000)) * (0.0 if zero else 1.0)
        add(_residual_stat("iterated Gauss", iterated_gauss_residual(R, [x[:R.shape[0]] for x in h[:m - 1]], m)))
        done += t
        index += 1
    if not feasible:
        V, _ = sign_flip_witnesses(n, m, seed=seed)
        add(_stat("V_m >= 0 (sign flip)", V, expect=True))
    return list(acc.values())


def equality_checks(n, m) -> list:
    """Equality witnesses for the trace estimate and the gradient estimate."""
    out = []
    lv = bottom_equality_levels(n, m, H=1.7)
    res = vk_terms(lv, n, m)
    out.append(_residual_stat("V_m trace-estimate equality", res["slacks"][-1], 1e-10))
    g = gradient_terms(gradient_equality_witness(n, m), n, m)
    out.append(_residual_stat("gradient estimate equality", g["slack"], 1e-10))
    return out
