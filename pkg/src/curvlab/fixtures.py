"""Reproducible hypersurface scenarios for the variational checks.

Random scenarios put a trigonometric graph into a flat or conformally
perturbed three-torus.  For second-variation checks the weight is built
around the graph so that the graph is critical:

    log rho = psi(x') + c(x') (z - u(x')),   c = -(H + dpsi(nu)) / |omega|,

where ``omega = dz - du`` is the defining covector.  On the graph
``<D log rho, nu> = dpsi(nu) + c |omega|``, which cancels ``H``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import grids
from .geometry import MetricChart
from .models import Conformal, FlatTorus, build_chart, hopf_chart
from .variation import DiscreteHypersurface, WeightField, graph_geometry

FINE = 64  # sampling grid for the interpolated weight coefficient


def _trig_terms(rng, count, dims, amp, kmax=2):
    terms = []
    for _ in range(count):
        k = tuple(int(v) for v in rng.integers(-kmax, kmax + 1, size=dims))
        if not any(k):
            k = (1,) + (0,) * (dims - 1)
        terms.append((float(amp * rng.uniform(0.5, 1.0)), k, float(rng.uniform(0, 2 * np.pi))))
    return tuple(terms)


def _sample(terms, periods, res):
    """Cell samples of ``sum a cos(2 pi k.x / P + phase)`` on a grid."""
    pts = grids.cell_points(res, periods)
    out = np.zeros(len(pts))
    for a, k, ph in terms:
        out += a * np.cos(2 * np.pi * (pts / np.array(periods)) @ np.array(k, float) + ph)
    return out.reshape(res)


def graph_weight(ambient: MetricChart, height: grids.FourierField, psi: Optional[grids.FourierField] = None,
                 height_axis=None, critical=True, slope=0.0, name="graph-weight") -> WeightField:
    """Weight ``psi + c (z - u)`` adapted to the graph of ``height``.

    With ``critical`` the coefficient ``c`` cancels the mean curvature;
    otherwise ``c`` is the constant ``slope``.
    """
    d = ambient.dim
    ax = d - 1 if height_axis is None else height_axis
    base = [a for a in range(d) if a != ax]
    periods = height.periods
    if psi is None:
        psi = grids.FourierField(np.zeros(height.shape), periods)
    if critical:
        res = (FINE,) * len(periods)
        pts = grids.cell_points(res, periods)
        U, dU, ddU = height.jets(pts, 2)
        data = graph_geometry(ambient, ax, pts, U, dU, ddU)
        dpsi = np.zeros((len(pts), d))
        dpsi[:, base] = psi.jets(pts, 1)[1]
        c = -(data.H + np.einsum("na,na->n", dpsi, data.nu)) / data.wnorm
        coef = grids.FourierField(c.reshape(res), periods)
    else:
        coef = grids.FourierField(np.full(height.shape, float(slope)), periods)

    def jets(X, order):
        X = np.asarray(X, float)
        flat = X.reshape(-1, d)
        xb, z = flat[:, base], flat[:, ax]
        u = height.jets(xb, order)
        c = coef.jets(xb, order)
        p = psi.jets(xb, order)
        return X.shape, flat, z - u[0], u, c, p

    def log_fn(X):
        shape, _, dz, u, c, p = jets(X, 0)
        return (p[0] + c[0] * dz).reshape(shape[:-1])

    def grad_fn(X):
        shape, flat, dz, u, c, p = jets(X, 1)
        g = np.zeros_like(flat)
        g[:, base] = p[1] + c[1] * dz[:, None] - c[0][:, None] * u[1]
        g[:, ax] = c[0]
        return g.reshape(shape)

    def hess_fn(X):
        shape, flat, dz, u, c, p = jets(X, 2)
        n = len(flat)
        Hm = np.zeros((n, d, d))
        cross = np.einsum("ni,nj->nij", c[1], u[1])
        hb = p[2] + c[2] * dz[:, None, None] - cross - np.swapaxes(cross, 1, 2) - c[0][:, None, None] * u[2]
        Hm[np.ix_(np.arange(n), base, base)] = hb
        Hm[:, base, ax] = c[1]
        Hm[:, ax, base] = c[1]
        return Hm.reshape(shape + (d,))

    return WeightField(log_fn, grad_fn, hess_fn, name=name)


@dataclass(frozen=True)
class VariationScenario:
    """A graph, a weight and a normal speed, resolvable on any grid."""

    name: str
    ambient: MetricChart
    height: grids.FourierField
    rho: WeightField
    speed: Callable
    periods: tuple

    def surface(self, resolution) -> DiscreteHypersurface:
        hs = DiscreteHypersurface.flat(self.ambient, resolution, self.periods)
        return hs.with_height(self.height(hs.base_points, [()])[0].reshape(hs.shape))

    def speed_on(self, hs: DiscreteHypersurface) -> np.ndarray:
        return np.asarray(self.speed(hs.base_points), float)


def random_scenario(seed: int, critical: bool = False) -> VariationScenario:
    """Random graph in a flat or conformally perturbed unit three-torus.

    Non-critical scenarios carry a weight with a constant slope across
    the graph and a positive speed, so the first variation stays well
    away from zero.
    """
    rng = np.random.default_rng(seed)
    periods = (1.0, 1.0)
    if rng.random() < 0.5:
        spec = FlatTorus(3)
    else:
        spec = Conformal(FlatTorus(3), _trig_terms(rng, 3, 3, 0.05))
    ambient = build_chart(spec)
    u_terms = _trig_terms(rng, 3, 2, 0.08, kmax=1)
    height = grids.FourierField(_sample(u_terms, periods, (32, 32)), periods)
    psi = grids.FourierField(_sample(_trig_terms(rng, 2, 2, 0.2), periods, (32, 32)), periods)
    slope = float(rng.uniform(1.0, 2.0))
    rho = graph_weight(ambient, height, psi, critical=critical, slope=slope,
                       name=f"scenario-{seed}-weight")
    f_terms = _trig_terms(rng, 2, 2, 0.3)
    f0 = 1.0

    def speed(pts):
        out = np.full(len(pts), f0)
        for a, k, ph in f_terms:
            out += a * np.cos(2 * np.pi * pts @ np.array(k, float) + ph)
        return out

    kind = "critical" if critical else "generic"
    return VariationScenario(f"{kind}-{seed}:{ambient.name}", ambient, height, rho, speed, periods)


def flat_subtorus(resolution, level=0.3) -> DiscreteHypersurface:
    """The horizontal sub-torus ``z = level`` of the flat unit three-torus."""
    return DiscreteHypersurface.flat(build_chart("torus(3)"), resolution, level=level)


def equator_s3(resolution) -> DiscreteHypersurface:
    """Equatorial two-sphere of the unit three-sphere.

    The graph ``theta_1 = pi/2`` over ``(theta_2, phi)`` with ``theta_2``
    running over a full period covers the equator twice.
    """
    S3 = build_chart("sphere(3,1)")
    return DiscreteHypersurface(S3, np.full((resolution, resolution), np.pi / 2),
                                (2 * np.pi, 2 * np.pi), height_axis=0, sheets=2)


def hopf_graph(resolution, amplitude=0.1) -> DiscreteHypersurface:
    """Perturbed Clifford torus ``eta = pi/4 + a cos(xi1 + phase) cos(2 xi2)`` in S^3."""
    chart = hopf_chart()
    hs = DiscreteHypersurface(chart, np.zeros((resolution, resolution)), (2 * np.pi, 2 * np.pi), height_axis=0)
    p = hs.base_points
    u = np.pi / 4 + amplitude * np.cos(p[:, 0] + 0.4) * np.cos(2 * p[:, 1])
    return hs.with_height(u)
