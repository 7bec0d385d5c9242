"""Closed-form model geometries: round spheres, flat tori, products and
conformal perturbations, plus a few auxiliary charts used by the
variational fixtures.

Model expressions are written like ``product(sphere(2, 1.0), torus(2,
[1.0, 1.0]))`` and parsed with :func:`parse_model`.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BadSpec
from .geometry import CurvatureTensor, MetricChart

CAP = 0.1  # polar caps trimmed from sphere sampling domains
TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class Sphere:
    k: int
    radius: float = 1.0


@dataclass(frozen=True)
class FlatTorus:
    m: int
    periods: tuple = ()

    def __post_init__(self):
        if not self.periods:
            object.__setattr__(self, "periods", (1.0,) * self.m)
        object.__setattr__(self, "periods", tuple(float(p) for p in self.periods))


@dataclass(frozen=True)
class Product:
    left: object
    right: object


@dataclass(frozen=True)
class Conformal:
    """``g = exp(2 u) g_base`` with ``u = sum a cos(2 pi k.x / P + phase)``."""

    base: object
    terms: tuple = field(default_factory=tuple)


ModelSpec = (Sphere, FlatTorus, Product, Conformal)


def model_dim(spec) -> int:
    if isinstance(spec, Sphere):
        return spec.k
    if isinstance(spec, FlatTorus):
        return spec.m
    if isinstance(spec, Product):
        return model_dim(spec.left) + model_dim(spec.right)
    if isinstance(spec, Conformal):
        return model_dim(spec.base)
    raise BadSpec(f"unknown model {spec!r}")


def validate(spec):
    """Raise :class:`BadSpec` for nonpositive radii/periods or bad shapes."""
    if isinstance(spec, Sphere):
        if int(spec.k) != spec.k or spec.k < 1:
            raise BadSpec(f"sphere dimension must be a positive integer, got {spec.k}")
        if not spec.radius > 0:
            raise BadSpec(f"sphere radius must be positive, got {spec.radius}")
    elif isinstance(spec, FlatTorus):
        if int(spec.m) != spec.m or spec.m < 1:
            raise BadSpec(f"torus dimension must be a positive integer, got {spec.m}")
        if len(spec.periods) != spec.m or not all(p > 0 for p in spec.periods):
            raise BadSpec(f"torus periods must be {spec.m} positive numbers, got {spec.periods}")
    elif isinstance(spec, Product):
        validate(spec.left)
        validate(spec.right)
    elif isinstance(spec, Conformal):
        validate(spec.base)
        n = model_dim(spec.base)
        for term in spec.terms:
            if len(term) != 3 or len(term[1]) != n:
                raise BadSpec(f"conformal term must be (amplitude, {n} frequencies, phase): {term!r}")
    else:
        raise BadSpec(f"unknown model {spec!r}")


# ---------------------------------------------------------------------------
# per-kind metric jets.  Each returns dict with metric, derivs, curvature,
# periods, domain, labels.

def _diag_embed(d):
    n = d.shape[-1]
    out = np.zeros(d.shape + (n,))
    idx = np.arange(n)
    out[..., idx, idx] = d
    return out


def _sphere_jet(spec: Sphere):
    k, r = spec.k, float(spec.radius)
    nang = k - 1

    def diag(x):
        s2 = np.sin(x[..., :nang]) ** 2
        d = np.empty(x.shape)
        d[..., 0] = r * r
        for j in range(1, k):
            d[..., j] = d[..., j - 1] * s2[..., j - 1]
        return d

    def metric(x):
        return _diag_embed(diag(np.asarray(x, float)))

    def derivs(x):
        x = np.asarray(x, float)
        d = diag(x)
        th = x[..., :nang]
        cot = np.cos(th) / np.sin(th)
        sec = 2.0 * np.cos(2 * th) / np.sin(th) ** 2
        dd = np.zeros(x.shape + (k,))         # dd[..., l, j] = d_l diag_j
        ddd = np.zeros(x.shape + (k, k))      # ddd[..., l, m, j]
        for j in range(k):
            for l in range(min(j, nang)):
                dd[..., l, j] = d[..., j] * 2 * cot[..., l]
                ddd[..., l, l, j] = d[..., j] * sec[..., l]
                for mm in range(l + 1, min(j, nang)):
                    v = d[..., j] * 4 * cot[..., l] * cot[..., mm]
                    ddd[..., l, mm, j] = v
                    ddd[..., mm, l, j] = v
        return _diag_embed(dd), _diag_embed(ddd)

    def curvature(x):
        g = metric(x)
        return (np.einsum("...ac,...bd->...abcd", g, g)
                - np.einsum("...ad,...bc->...abcd", g, g)) / (r * r)

    periods = (None,) * nang + (TWO_PI,)
    domain = ((CAP, np.pi - CAP),) * nang + ((0.0, TWO_PI),)
    labels = tuple(f"theta{i + 1}" for i in range(nang)) + ("phi",)
    return dict(dim=k, metric=metric, derivs=derivs, curvature=curvature,
                periods=periods, domain=domain, labels=labels, torus=())


def _torus_jet(spec: FlatTorus):
    m = spec.m

    def metric(x):
        x = np.asarray(x, float)
        return np.broadcast_to(np.eye(m), x.shape[:-1] + (m, m)).copy()

    def derivs(x):
        x = np.asarray(x, float)
        return np.zeros(x.shape[:-1] + (m,) * 3), np.zeros(x.shape[:-1] + (m,) * 4)

    def curvature(x):
        x = np.asarray(x, float)
        return np.zeros(x.shape[:-1] + (m,) * 4)

    return dict(dim=m, metric=metric, derivs=derivs, curvature=curvature,
                periods=tuple(spec.periods), domain=tuple((0.0, p) for p in spec.periods),
                labels=tuple(f"t{i + 1}" for i in range(m)), torus=tuple(range(m)))


def _product_jet(spec: Product):
    a, b = _jet(spec.left), _jet(spec.right)
    na, nb = a["dim"], b["dim"]
    n = na + nb

    def metric(x):
        x = np.asarray(x, float)
        g = np.zeros(x.shape[:-1] + (n, n))
        g[..., :na, :na] = a["metric"](x[..., :na])
        g[..., na:, na:] = b["metric"](x[..., na:])
        return g

    derivs = None
    if a["derivs"] and b["derivs"]:
        def derivs(x):
            x = np.asarray(x, float)
            dga, ddga = a["derivs"](x[..., :na])
            dgb, ddgb = b["derivs"](x[..., na:])
            dg = np.zeros(x.shape[:-1] + (n,) * 3)
            ddg = np.zeros(x.shape[:-1] + (n,) * 4)
            dg[..., :na, :na, :na] = dga
            dg[..., na:, na:, na:] = dgb
            ddg[..., :na, :na, :na, :na] = ddga
            ddg[..., na:, na:, na:, na:] = ddgb
            return dg, ddg

    curvature = None
    if a["curvature"] and b["curvature"]:
        def curvature(x):
            x = np.asarray(x, float)
            R = np.zeros(x.shape[:-1] + (n,) * 4)
            R[..., :na, :na, :na, :na] = a["curvature"](x[..., :na])
            R[..., na:, na:, na:, na:] = b["curvature"](x[..., na:])
            return R

    return dict(dim=n, metric=metric, derivs=derivs, curvature=curvature,
                periods=a["periods"] + b["periods"], domain=a["domain"] + b["domain"],
                labels=_dedupe(a["labels"] + b["labels"]),
                torus=a["torus"] + tuple(na + i for i in b["torus"]))


def _dedupe(labels):
    seen, out = {}, []
    for lab in labels:
        if lab in seen:
            seen[lab] += 1
            out.append(f"{lab}_{seen[lab]}")
        else:
            seen[lab] = 0
            out.append(lab)
    return tuple(out)


def trig_field(terms, periods):
    """Return ``u, du, ddu`` callables for a trigonometric polynomial.

    ``terms`` holds ``(amplitude, frequencies, phase)``; a coordinate with
    no period uses ``2 pi``.
    """
    P = np.array([p if p else TWO_PI for p in periods], float)
    amps = np.array([t[0] for t in terms], float)
    K = np.array([t[1] for t in terms], float).reshape(len(terms), len(P))
    W = TWO_PI * K / P                                   # angular frequencies
    ph = np.array([t[2] for t in terms], float)

    def arg(x):
        x = np.asarray(x, float)
        xr = np.where(np.isfinite(P), np.mod(x, P), x)
        return xr @ W.T + ph

    def u(x):
        return np.cos(arg(x)) @ amps

    def du(x):
        return -(np.sin(arg(x)) * amps) @ W

    def ddu(x):
        c = np.cos(arg(x)) * amps
        return -np.einsum("...t,ti,tj->...ij", c, W, W)

    return u, du, ddu


def _conformal_jet(spec: Conformal):
    b = _jet(spec.base)
    n = b["dim"]
    u, du, ddu = trig_field(spec.terms, b["periods"]) if spec.terms else (
        lambda x: np.zeros(np.asarray(x).shape[:-1]),
        lambda x: np.zeros(np.asarray(x).shape),
        lambda x: np.zeros(np.asarray(x).shape + (np.asarray(x).shape[-1],)))

    def metric(x):
        x = np.asarray(x, float)
        return np.exp(2 * u(x))[..., None, None] * b["metric"](x)

    derivs = None
    if b["derivs"]:
        def derivs(x):
            x = np.asarray(x, float)
            e = np.exp(2 * u(x))[..., None, None, None]
            g0 = b["metric"](x)
            dg0, ddg0 = b["derivs"](x)
            U1, U2 = du(x), ddu(x)
            dg = e * (2 * U1[..., :, None, None] * g0[..., None, :, :] + dg0)
            ddg = e[..., None] * (
                (4 * np.einsum("...k,...l->...kl", U1, U1) + 2 * U2)[..., None, None] * g0[..., None, None, :, :]
                + 2 * U1[..., :, None, None, None] * dg0[..., None, :, :, :]
                + 2 * U1[..., None, :, None, None] * dg0[..., :, None, :, :]
                + ddg0)
            return dg, ddg

    return dict(dim=n, metric=metric, derivs=derivs, curvature=None,
                periods=b["periods"], domain=b["domain"], labels=b["labels"], torus=b["torus"],
                conformal_factor=(u, du, ddu))


def _jet(spec):
    validate(spec)
    if isinstance(spec, Sphere):
        return _sphere_jet(spec)
    if isinstance(spec, FlatTorus):
        return _torus_jet(spec)
    if isinstance(spec, Product):
        return _product_jet(spec)
    return _conformal_jet(spec)


def build_chart(spec) -> MetricChart:
    """Metric chart with analytic derivative (and, when closed form, curvature) oracles."""
    if isinstance(spec, str):
        spec = parse_model(spec)
    j = _jet(spec)
    return MetricChart(dim=j["dim"], metric_fn=j["metric"], derivative_oracle=j["derivs"],
                       curvature_oracle=j["curvature"], periods=j["periods"], domain=j["domain"],
                       name=format_model(spec), labels=j["labels"])


def torus_axes(spec) -> tuple:
    """Coordinate indices belonging to flat torus factors."""
    return _jet(spec)["torus"]


def product_curvature_oracle(specs, point) -> CurvatureTensor:
    """Block-diagonal coordinate curvature tensor of a product of factors."""
    specs = list(specs)
    spec = specs[0]
    for s in specs[1:]:
        spec = Product(spec, s)
    j = _jet(spec)
    if j["curvature"] is None:
        raise BadSpec("every factor needs a closed-form curvature oracle")
    return CurvatureTensor.from_array(j["curvature"](np.asarray(point, float)), "coordinate")


def constant_curvature_tensor(n, K=1.0) -> CurvatureTensor:
    """Orthonormal-basis tensor of a space form with sectional curvature K."""
    I = np.eye(n)
    R = K * (np.einsum("ac,bd->abcd", I, I) - np.einsum("ad,bc->abcd", I, I))
    return CurvatureTensor.from_array(R)


# ---------------------------------------------------------------------------
# auxiliary charts for hypersurface fixtures

def _diag_chart(dim, diag_fn, ddiag_fn, dddiag_fn, curvature, periods, domain, name, labels):
    def metric(x):
        return _diag_embed(diag_fn(np.asarray(x, float)))

    def derivs(x):
        x = np.asarray(x, float)
        return _diag_embed(ddiag_fn(x)), _diag_embed(dddiag_fn(x))

    return MetricChart(dim=dim, metric_fn=metric, derivative_oracle=derivs, curvature_oracle=curvature,
                       periods=periods, domain=domain, name=name, labels=labels)


def euclidean_polar_chart() -> MetricChart:
    """Flat R^3 in coordinates (r, theta, phi): g = diag(1, r^2, r^2 sin^2 theta)."""

    def diag(x):
        r, th = x[..., 0], x[..., 1]
        return np.stack([np.ones_like(r), r * r, (r * np.sin(th)) ** 2], axis=-1)

    def ddiag(x):  # [..., l, j]
        r, th = x[..., 0], x[..., 1]
        out = np.zeros(x.shape + (3,))
        s, c = np.sin(th), np.cos(th)
        out[..., 0, 1] = 2 * r
        out[..., 0, 2] = 2 * r * s * s
        out[..., 1, 2] = 2 * r * r * s * c
        return out

    def dddiag(x):  # [..., l, m, j]
        r, th = x[..., 0], x[..., 1]
        out = np.zeros(x.shape + (3, 3))
        s, c = np.sin(th), np.cos(th)
        out[..., 0, 0, 1] = 2
        out[..., 0, 0, 2] = 2 * s * s
        out[..., 0, 1, 2] = out[..., 1, 0, 2] = 4 * r * s * c
        out[..., 1, 1, 2] = 2 * r * r * np.cos(2 * th)
        return out

    def curvature(x):
        x = np.asarray(x, float)
        return np.zeros(x.shape[:-1] + (3,) * 4)

    return _diag_chart(3, diag, ddiag, dddiag, curvature, (None, TWO_PI, TWO_PI),
                       ((0.5, 2.0), (CAP, np.pi - CAP), (0.0, TWO_PI)), "euclidean_polar(3)",
                       ("r", "theta", "phi"))


def hopf_chart() -> MetricChart:
    """Unit S^3 in Hopf coordinates (eta, xi1, xi2): diag(1, cos^2 eta, sin^2 eta)."""

    def diag(x):
        e = x[..., 0]
        return np.stack([np.ones_like(e), np.cos(e) ** 2, np.sin(e) ** 2], axis=-1)

    def ddiag(x):
        e = x[..., 0]
        out = np.zeros(x.shape + (3,))
        out[..., 0, 1] = -np.sin(2 * e)
        out[..., 0, 2] = np.sin(2 * e)
        return out

    def dddiag(x):
        e = x[..., 0]
        out = np.zeros(x.shape + (3, 3))
        out[..., 0, 0, 1] = -2 * np.cos(2 * e)
        out[..., 0, 0, 2] = 2 * np.cos(2 * e)
        return out

    def curvature(x):
        g = _diag_embed(diag(np.asarray(x, float)))
        return np.einsum("...ac,...bd->...abcd", g, g) - np.einsum("...ad,...bc->...abcd", g, g)

    return _diag_chart(3, diag, ddiag, dddiag, curvature, (None, TWO_PI, TWO_PI),
                       ((CAP, np.pi / 2 - CAP), (0.0, TWO_PI), (0.0, TWO_PI)), "hopf(S3)",
                       ("eta", "xi1", "xi2"))


# ---------------------------------------------------------------------------
# text form

def _lit(node):
    return ast.literal_eval(node)


def _from_ast(node):
    if not isinstance(node, ast.Call) or not isinstance(node.func, ast.Name):
        raise BadSpec(f"expected a model call, got {ast.dump(node)}")
    name, args = node.func.id, node.args
    kw = {k.arg: k.value for k in node.keywords}
    try:
        if name == "sphere":
            k = _lit(args[0])
            r = _lit(args[1]) if len(args) > 1 else _lit(kw.get("radius", ast.Constant(1.0)))
            spec = Sphere(int(k), float(r))
        elif name in ("torus", "flat_torus"):
            m = int(_lit(args[0]))
            per = _lit(args[1]) if len(args) > 1 else (_lit(kw["periods"]) if "periods" in kw else None)
            if per is None:
                per = (1.0,) * m
            elif isinstance(per, (int, float)):
                per = (float(per),) * m
            spec = FlatTorus(m, tuple(per))
        elif name == "product":
            if len(args) < 2:
                raise BadSpec("product needs at least two factors")
            parts = [_from_ast(a) for a in args]
            spec = parts[0]
            for p in parts[1:]:
                spec = Product(spec, p)
        elif name == "conformal":
            base = _from_ast(args[0])
            raw = _lit(args[1]) if len(args) > 1 else []
            terms = tuple((float(t[0]), tuple(int(v) for v in t[1]),
                           float(t[2]) if len(t) > 2 else 0.0) for t in raw)
            spec = Conformal(base, terms)
        else:
            raise BadSpec(f"unknown model kind {name!r}")
    except (IndexError, KeyError, ValueError, TypeError, SyntaxError) as exc:
        raise BadSpec(f"malformed {name}(...): {exc}") from None
    validate(spec)
    return spec


def parse_model(text: str):
    """Parse a model expression such as ``product(sphere(2,1.0), torus(2))``."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise BadSpec(f"cannot parse model {text!r}: {exc.msg}") from None
    return _from_ast(tree.body)


def format_model(spec) -> str:
    if isinstance(spec, Sphere):
        return f"sphere({spec.k},{spec.radius!r})"
    if isinstance(spec, FlatTorus):
        return f"torus({spec.m},{list(spec.periods)!r})"
    if isinstance(spec, Product):
        return f"product({format_model(spec.left)},{format_model(spec.right)})"
    if isinstance(spec, Conformal):
        terms = [[a, list(k), p] for a, k, p in spec.terms]
        return f"conformal({format_model(spec.base)},{terms!r})"
    raise BadSpec(f"unknown model {spec!r}")


def bumpy_torus(amplitude=0.05) -> Conformal:
    """Default conformally perturbed T^3 used by the slicing demo."""
    a = float(amplitude)
    return Conformal(FlatTorus(3), ((a, (1, 0, 1), 0.0), (a, (0, 1, -1), 0.7), (0.5 * a, (1, 1, 1), 1.3)))


def sphere_torus(n, m) -> Product:
    """S^{n-m} x T^m with unit factors."""
    return Product(Sphere(n - m, 1.0), FlatTorus(m))
