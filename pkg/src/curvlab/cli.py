"""Command-line entry point.

    curvlab curvature --model "sphere(4,1)" --m 2
    curvlab certify --model "product(sphere(2,1),torus(2))" --m 3
    curvlab dimension-table --format csv
    curvlab verify-lemmas --trials 100000
    curvlab variation-check
    curvlab slicing-demo --resolution 64 --dump-dir grids/

Exit codes: 0 all checks passed, 1 a check failed, 2 configuration
error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from . import grids, lemmas
from .curvature import curvature_report, intermediate_curvature, intermediate_scalar_curvature
from .errors import (BadOrder, BadShape, BadSpec, CurvlabError, DegenerateInput, InfeasiblePair,
                     IterationLimit, NonpositiveWeight, NotCritical, SingularMetric, WrongOrder)
from .geometry import cholesky_frame, haar_random_frame
from .models import build_chart, bumpy_torus, format_model, parse_model, torus_axes
from .report import Check, build_report, render, write_atomic

EXIT_OK, EXIT_CHECKS, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

COMMANDS = ("curvature", "certify", "dimension-table", "verify-lemmas", "variation-check", "slicing-demo")

# per-command defaults for fields left unset
DEFAULTS = {
    "curvature": {"model": "product(sphere(2,1.0),torus(2))", "m": 2, "points": 4},
    "certify": {"model": "product(sphere(2,1.0),torus(2))", "m": 3, "points": 8, "restarts": 8},
    "dimension-table": {"n_max": 8},
    "verify-lemmas": {"n_max": 8, "trials": 10_000},
    "variation-check": {"resolution": 128, "scenarios": 2},
    "slicing-demo": {"model": format_model(bumpy_torus(0.05)), "m": 2, "resolution": 64,
                     "points": 8, "restarts": 8},
}


class ConfigError(CurvlabError):
    """Invalid configuration file or option value."""


@dataclass
class RunConfig:
    command: str = "curvature"
    model: Optional[str] = None
    m: Optional[int] = None
    n: Optional[int] = None
    n_max: int = 8
    seed: int = 0
    resolution: int = 64
    restarts: int = 32
    trials: int = 100_000
    points: int = 8
    scenarios: int = 4
    tolerance_scale: float = 1.0
    frame: str = "coordinate"
    path: str = "auto"
    zero: bool = False
    format: str = "pretty"
    output: Optional[str] = None
    dump_dir: Optional[str] = None
    threads: int = 0

    def echo(self) -> dict:
        """Fields that determine the payload (output options excluded)."""
        d = dataclasses.asdict(self)
        for k in ("format", "output", "dump_dir", "threads"):
            d.pop(k)
        return d


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key, raw):
    kind = FIELD_TYPES[key]
    if raw is None and kind.startswith("Optional"):
        return None
    if isinstance(raw, str):
        raw = raw.strip()
        if raw.lower() in ("none", "null", ""):
            if kind.startswith("Optional"):
                return None
            raise ConfigError(f"{key} needs a value")
    try:
        if "bool" in kind:
            if isinstance(raw, str):
                if raw.lower() in ("1", "true", "yes", "on"):
                    return True
                if raw.lower() in ("0", "false", "no", "off"):
                    return False
                raise ValueError(raw)
            return bool(raw)
        if "int" in kind:
            v = float(raw)
            if v != int(v):
                raise ValueError(raw)
            return int(v)
        if "float" in kind:
            return float(raw)
        return None if raw is None else str(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def read_config(path) -> dict:
    """Flat ``key = value`` file (``#`` comments), or the config of a JSON report."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
        data = data.get("config", data)
        items = data.items()
    else:
        items = []
        for no, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{no}: expected key = value")
            k, v = line.split("=", 1)
            items.append((k.strip().replace("-", "_"), v.strip()))
    out = {}
    for k, v in items:
        if k not in FIELD_TYPES:
            raise ConfigError(f"{path}: unknown key {k!r}")
        out[k] = _coerce(k, v)
    return out


def resolve_config(command, file_values: dict, flag_values: dict) -> RunConfig:
    """Defaults, then command defaults, then the config file, then flags."""
    cfg = RunConfig(command=command)
    merged = dict(DEFAULTS.get(command, {}))
    merged.update({k: v for k, v in file_values.items() if k != "command"})
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    for k, v in merged.items():
        setattr(cfg, k, v)
    if cfg.format not in ("json", "csv", "pretty"):
        raise ConfigError(f"unknown format {cfg.format!r}")
    if cfg.frame not in ("coordinate", "torus-first", "random"):
        raise ConfigError(f"unknown frame {cfg.frame!r}")
    if cfg.tolerance_scale <= 0:
        raise ConfigError("tolerance-scale must be positive")
    if cfg.threads <= 0:
        cfg.threads = int(os.environ.get("CURVLAB_THREADS", 0) or 0) or (os.cpu_count() or 1)
    return cfg


# ---------------------------------------------------------------------------
# commands.  Each returns (results, checks).

def _frame_at(cfg, chart, spec, point, index):
    g = chart.metric(point)
    if cfg.frame == "coordinate":
        return cholesky_frame(g)
    if cfg.frame == "torus-first":
        tor = list(torus_axes(spec))
        order = tor + [a for a in range(chart.dim) if a not in tor]
        P = np.eye(chart.dim)[:, order]
        # orthonormalise the permuted coordinate basis so the torus directions lead
        E = cholesky_frame(P.T @ g @ P)
        return P @ E
    frame = haar_random_frame((cfg.seed, index), chart, point, chart.dim)
    return np.asarray(frame.vectors)


def cmd_curvature(cfg: RunConfig):
    spec = parse_model(cfg.model)
    chart = build_chart(spec)
    tol = 1e-9 * cfg.tolerance_scale
    fd_tol = 1e-4 * cfg.tolerance_scale
    pts = chart.sample_points(cfg.points, seed=cfg.seed)
    rows, checks = [], []
    worst_id, worst_fd, worst_trace = 0.0, 0.0, 0.0
    for i, x in enumerate(pts):
        E = _frame_at(cfg, chart, spec, x, i)
        rep = curvature_report(chart, x, frame=E, path=cfg.path)
        T = rep.tensor
        I = np.eye(chart.dim)
        cm = intermediate_curvature(T, I, cfg.m)
        smn = intermediate_scalar_curvature(T, I, cfg.m)
        fd = curvature_report(chart, x, frame=E, path="fd")
        cm_fd = intermediate_curvature(fd.tensor, I, cfg.m)
        worst_id = max(worst_id, abs(smn + 2 * cm - rep.scalar))
        worst_fd = max(worst_fd, abs(cm_fd - cm))
        worst_trace = max(worst_trace, rep.trace_defect())
        rows.append({"point": x, "C_m": cm, "s_mn": smn, "scal": rep.scalar, "ricci": rep.ricci,
                     "source": rep.source, "C_m_fd": cm_fd})
    analytic = rows[0]["source"] != "finite-difference"
    checks.append(Check("s_mn + 2 C_m - scal", worst_id, tol if analytic else fd_tol))
    checks.append(Check("scal - tr Ric", worst_trace, tol if analytic else fd_tol))
    checks.append(Check("C_m: analytic vs finite-difference", worst_fd, fd_tol))
    cms = [r["C_m"] for r in rows]
    summary = {"model": chart.name, "m": cfg.m, "frame": cfg.frame, "points": len(rows),
               "C_m min": min(cms), "C_m max": max(cms), "scal (first point)": rows[0]["scal"]}
    return {"summary": summary, "points": rows}, checks


def cmd_certify(cfg: RunConfig):
    from .grassmann import certify
    chart = build_chart(parse_model(cfg.model))
    cert = certify(chart, cfg.m, {"count": cfg.points, "seed": cfg.seed, "mode": "random"},
                   restarts=cfg.restarts, seed=cfg.seed, threads=cfg.threads)
    d = cert.to_dict()
    ortho = max(float(np.max(np.abs(r.argmin_frame.gram() - np.eye(cfg.m)))) for r in cert.results)
    checks = [
        Check("optimiser converged at every point", d["all_converged"], True, "=="),
        Check("argmin frames orthonormal", ortho, 1e-10 * cfg.tolerance_scale),
    ]
    summary = {"model": chart.name, "m": cfg.m, "verdict": cert.verdict,
               "min C_m": d["min_over_points"], "max of pointwise minima": d["max_over_points"],
               "points": cfg.points, "restarts": cfg.restarts}
    return {"summary": summary, "certificate": d}, checks


def cmd_dimension_table(cfg: RunConfig):
    n_max = max(cfg.n_max, 2)
    rows = lemmas.dimension_table(n_max)
    by = {(r.n, r.m): r for r in rows}
    low = [r for r in rows if r.n <= 7]
    checks = [Check("all pairs with n <= 7 feasible", all(r.feasible for r in low), True, "==")]
    if n_max >= 8:
        checks.append(Check("(8,3) infeasible", not by[(8, 3)].feasible, True, "=="))
        checks.append(Check("(8,4) infeasible", not by[(8, 4)].feasible, True, "=="))
    edge = all(by[(n, m)].feasible for n in range(2, n_max + 1) for m in {1, 2, n - 2, n - 1} if 1 <= m <= n - 1)
    checks.append(Check("m in {1, 2, n-2, n-1} feasible", edge, True, "=="))
    sign = all((r.coefficient >= 0) == r.feasible for r in rows if r.coefficient is not None)
    checks.append(Check("coefficient >= 0 iff feasible", sign, True, "=="))
    infeasible = [(r.n, r.m) for r in rows if not r.feasible]
    summary = {"n_max": n_max, "rows": len(rows), "infeasible pairs": len(infeasible),
               "first infeasible": str(infeasible[0]) if infeasible else "none"}
    return {"summary": summary, "rows": [r.to_dict() for r in rows],
            "table_csv": lemmas.table_csv(rows)}, checks


def _lemma_pairs(cfg):
    if cfg.n is not None:
        ns = [cfg.n]
    else:
        ns = range(3, cfg.n_max + 1)
    for n in ns:
        ms = [cfg.m] if cfg.m is not None else range(2, n)
        for m in ms:
            if 2 <= m <= n - 1:
                yield n, m
            elif cfg.n is not None:
                raise BadOrder(f"lemma sweep needs 2 <= m <= n - 1, got ({n}, {m})")


def cmd_verify_lemmas(cfg: RunConfig):
    tol_scale = cfg.tolerance_scale
    pairs, checks = [], []
    for n, m in _lemma_pairs(cfg):
        stats = lemmas.sweep_pair(n, m, trials=cfg.trials, seed=cfg.seed, zero=cfg.zero)
        eq = [] if cfg.zero else lemmas.equality_checks(n, m)
        entry = {"n": n, "m": m, "feasible": lemmas.is_feasible(n, m),
                 "coefficient": lemmas.coefficient(n, m), "stats": [s.to_dict() for s in stats + eq]}
        pairs.append(entry)
        for s in stats + eq:
            label = f"({n},{m}) {s.name}"
            if s.expect_violations:
                checks.append(Check(label + ": sign flip witnessed", s.violations, 0, ">"))
            else:
                checks.append(Check(label + ": violations", s.violations, 0, "=="))
                checks.append(Check(label + ": min slack", s.min_slack, -s.tolerance * tol_scale, ">="))
    failures = lemmas.alpha_identity_failures(100)
    checks.append(Check("alpha identity failures (k <= 100)", len(failures), 0, "=="))
    summary = {"pairs": len(pairs), "trials per pair": cfg.trials, "zero tensors": cfg.zero,
               "min slack (expected-positive checks)":
                   min((s["min_slack"] for p in pairs for s in p["stats"] if not s["expect_violations"]),
                       default=0.0)}
    return {"summary": summary, "pairs": pairs}, checks


def cmd_variation_check(cfg: RunConfig):
    from . import fixtures
    from .variation import (assemble_stability_operator, convergence_order, first_eigenpair, first_variation,
                            fd_first_variation, fd_second_variation, second_variation)
    R = cfg.resolution
    ladder = [R // 4, R // 2, R]
    ts = cfg.tolerance_scale
    first, second, checks = [], [], []
    orders = []
    for i in range(cfg.scenarios):
        sc = fixtures.random_scenario(cfg.seed + i, critical=False)
        errs = []
        for r in ladder:
            hs = sc.surface(r)
            f = sc.speed_on(hs)
            a, b = first_variation(hs, sc.rho, f), fd_first_variation(hs, sc.rho, f)
            errs.append(abs(a - b) / abs(b))
        order = convergence_order(ladder, errs)
        orders.append(order)
        first.append({"scenario": sc.name, "formula": a, "finite_difference": b, "relative_errors": errs,
                      "order": order})
        sc2 = fixtures.random_scenario(cfg.seed + i, critical=True)
        hs = sc2.surface(R)
        f = sc2.speed_on(hs)
        a2, b2 = second_variation(hs, sc2.rho, f), fd_second_variation(hs, sc2.rho, f)
        second.append({"scenario": sc2.name, "formula": a2, "finite_difference": b2,
                       "relative_error": abs(a2 - b2) / abs(b2)})
    if first:
        checks.append(Check(f"first variation relative error (R={R})",
                            max(e["relative_errors"][-1] for e in first), 1e-6 * ts))
        checks.append(Check("first variation convergence order", min(orders), 1.8, ">="))
        checks.append(Check(f"second variation relative error (R={R})",
                            max(e["relative_error"] for e in second), 1e-4 * ts))
    eq = fixtures.equator_s3(R)
    rep = first_eigenpair(assemble_stability_operator(eq))
    flat = fixtures.flat_subtorus(R)
    rep_flat = first_eigenpair(assemble_stability_operator(flat))
    checks.append(Check("equator in S^3: |lambda_1 + 2|", abs(rep.lambda_1 + 2.0), 1e-2 * ts))
    checks.append(Check("flat sub-torus: |lambda_1|", abs(rep_flat.lambda_1), 1e-10 * ts))
    checks.append(Check("flat sub-torus: eigenfunction spread", float(np.ptp(rep_flat.eigenfunction)),
                        1e-10 * ts))
    checks.append(Check("eigenfunctions positive", rep.positive and rep_flat.positive, True, "=="))
    summary = {"resolution": R, "scenarios": cfg.scenarios,
               "equator lambda_1": rep.lambda_1, "flat sub-torus lambda_1": rep_flat.lambda_1}
    if orders:
        summary["min convergence order"] = min(orders)
    results = {"summary": summary, "first_variation": first, "second_variation": second,
               "equator": rep.to_dict(), "flat_subtorus": rep_flat.to_dict()}
    return results, checks


def _dump_slicing(cfg, s):
    os.makedirs(cfg.dump_dir, exist_ok=True)
    written = []
    for L in s.levels:
        hs = L.surface
        for kind, values in (("height", hs.height), ("rho", L.rho), ("v", L.v)):
            path = os.path.join(cfg.dump_dir, f"level{L.k}_{kind}.cvlgrid")
            grids.write_grid(path, values, hs.periods, height_axis=hs.height_axis,
                             extra={"level": L.k, "field": kind})
            written.append(os.path.basename(path))
    return written


def cmd_slicing_demo(cfg: RunConfig):
    from . import slicing as sl
    spec = parse_model(cfg.model)
    chart = build_chart(spec)
    n = chart.dim
    lemmas.require_feasible(n, cfg.m)
    s = sl.build_slicing(chart, cfg.m, resolution=cfg.resolution, seed=cfg.seed)
    ts = cfg.tolerance_scale
    fd = sl.FD_TOL * ts
    inv = sl.slicing_invariants(s)
    tb = sl.main_inequality(s)
    checks = [Check(f"invariant: {k}", v, True, "==") for k, v in inv.items()]
    checks.append(Check("integrated main inequality", tb.integral, fd))
    checks.append(Check("bottom-slice stability cross-check gap", tb.cross_check_gap, fd))
    first = [float(np.max(np.abs(sl.first_slicing_identity_residual(s, k)))) for k in range(1, s.m + 1)]
    for k, r in enumerate(first, 1):
        checks.append(Check(f"first slicing identity k={k}", r, fd))
    second = [float(np.max(np.abs(sl.second_slicing_identity_residual(s, k)))) for k in range(1, s.m)]
    for k, r in enumerate(second, 1):
        checks.append(Check(f"second slicing identity k={k}", r, fd))
    grad = sl.gradient_estimate_check(s, tb)
    checks.append(Check("gradient estimate slack", grad["min_slack"], -1e-6 * ts, ">="))
    gauss = float(np.max(np.abs(sl.iterated_gauss_check(s, tb))))
    checks.append(Check("iterated Gauss residual", gauss, fd))
    results = {"slicing": s.to_dict(), "terms": tb.to_dict(), "first_identity": first, "second_identity": second,
               "gradient_min_slack": grad["min_slack"], "iterated_gauss": gauss}
    if s.m == n - 1:
        full = sl.full_slicing_form(s, tb)
        checks.append(Check("full-slicing slack", full["min_slack"], -fd, ">="))
        checks.append(Check("|2 C_m - scal|", full["two_cm_minus_scal"], 1e-4 * ts))
        results["full_slicing"] = {"min_slack": full["min_slack"], "two_cm_minus_scal": full["two_cm_minus_scal"]}
    gate = sl.theorem_gate(chart, n, cfg.m, slicing=s, sample_count=cfg.points, restarts=cfg.restarts,
                           seed=cfg.seed, tol=fd)
    checks.append(Check("theorem gate: no contradiction", gate["consistent"], True, "=="))
    results["gate"] = gate
    if cfg.dump_dir:
        results["_dumps"] = _dump_slicing(cfg, s)
    results["summary"] = {"model": chart.name, "m": s.m, "resolution": s.resolution,
                          "lambda": ", ".join(f"{L.lambda_k:.6g}" for L in s.levels),
                          "main inequality integral": tb.integral,
                          "certificate": gate["certificate_verdict"]}
    return results, checks


HANDLERS = {
    "curvature": cmd_curvature,
    "certify": cmd_certify,
    "dimension-table": cmd_dimension_table,
    "verify-lemmas": cmd_verify_lemmas,
    "variation-check": cmd_variation_check,
    "slicing-demo": cmd_slicing_demo,
}


# ---------------------------------------------------------------------------
# argument parsing

HELP = {
    "curvature": "curvature report of a model at sample points",
    "certify": "sign certificate for the order-m intermediate curvature of a model",
    "dimension-table": "feasibility of every (n, m) pair up to --n-max",
    "verify-lemmas": "randomized sweep of the algebraic bounds",
    "variation-check": "formula vs finite-difference checks of area variations",
    "slicing-demo": "build a stable weighted slicing and evaluate its inequalities",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value file, or a JSON report to re-run")
    common.add_argument("--model", help='model expression, e.g. "product(sphere(2,1),torus(2))"')
    common.add_argument("--m", type=int, help="curvature / slicing order")
    common.add_argument("--n", type=int, help="dimension (verify-lemmas)")
    common.add_argument("--n-max", dest="n_max", type=int, help="largest dimension in tables and sweeps")
    common.add_argument("--seed", type=int)
    common.add_argument("--resolution", type=int, help="grid cells per axis")
    common.add_argument("--restarts", type=int, help="Haar restarts per minimisation")
    common.add_argument("--trials", type=int, help="random trials per (n, m) pair")
    common.add_argument("--points", type=int, help="sample points")
    common.add_argument("--scenarios", type=int, help="random variation scenarios")
    common.add_argument("--tolerance-scale", dest="tolerance_scale", type=float,
                        help="multiplier applied to every tolerance")
    common.add_argument("--frame", choices=("coordinate", "torus-first", "random"))
    common.add_argument("--path", choices=("auto", "analytic", "fd"), help="curvature evaluation path")
    common.add_argument("--zero", action="store_const", const=True, help="use all-zero tensors")
    common.add_argument("--format", choices=("json", "csv", "pretty"))
    common.add_argument("--output", help="report path (default: stdout)")
    common.add_argument("--dump-dir", dest="dump_dir", help="directory for grid dumps (slicing-demo)")
    common.add_argument("--threads", type=int, help="worker threads (default: CURVLAB_THREADS or all cores)")
    parser = argparse.ArgumentParser(prog="curvlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HELP[name])
    return parser


NUMERIC_ERRORS = (SingularMetric, IterationLimit, NotCritical, DegenerateInput, NonpositiveWeight,
                  np.linalg.LinAlgError)
CONFIG_ERRORS = (ConfigError, BadSpec, BadOrder, BadShape, InfeasiblePair, WrongOrder)


def run(cfg: RunConfig):
    """Execute a resolved config; returns the report dict."""
    t0 = time.perf_counter()
    results, checks = HANDLERS[cfg.command](cfg)
    # underscore keys are side products (file names) kept out of the payload
    extras = {k[1:]: results.pop(k) for k in list(results) if k.startswith("_")}
    timing = {"total_seconds": time.perf_counter() - t0, "threads": cfg.threads}
    report = build_report(cfg.command, cfg.echo(), results, checks, timing)
    report.update(extras)
    return report


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        file_values = read_config(args.config) if args.config else {}
        cfg = resolve_config(args.command, file_values, flags)
        report = run(cfg)
    except CONFIG_ERRORS as exc:
        print(f"curvlab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"curvlab: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    text = render(report, cfg.format)
    if cfg.output:
        write_atomic(cfg.output, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK if report["payload"]["passed"] else EXIT_CHECKS


if __name__ == "__main__":
    sys.exit(main())
