"""Versioned run reports: checks against tolerances, JSON/CSV/pretty
rendering and atomic writes.

The ``payload`` of a report is a pure function of the run configuration;
timings live outside it so that two runs can be compared byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import __version__

SCHEMA = "curvlab-report/1"


@dataclass(frozen=True)
class Check:
    """A named comparison ``value <op> bound``."""

    name: str
    value: object
    bound: object
    op: str = "<="

    @property
    def passed(self) -> bool:
        v, b = self.value, self.bound
        if self.op == "==":
            return v == b
        if isinstance(v, float) and not math.isfinite(v):
            return False
        if self.op == "<=":
            return v <= b
        if self.op == ">=":
            return v >= b
        if self.op == "<":
            return v < b
        if self.op == ">":
            return v > b
        raise ValueError(f"unknown comparison {self.op!r}")

    def to_dict(self):
        return {"name": self.name, "value": self.value, "op": self.op, "bound": self.bound,
                "passed": self.passed}


def jsonable(obj):
    """Convert numpy scalars/arrays, fractions and tuples to JSON types."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, Fraction):
        return f"{obj.numerator}/{obj.denominator}"
    if isinstance(obj, Check):
        return jsonable(obj.to_dict())
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def build_report(command: str, config: dict, results: dict, checks, timing=None) -> dict:
    checks = list(checks)
    payload = jsonable({"results": results, "checks": checks})
    payload["passed"] = all(c["passed"] for c in payload["checks"])
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return {
        "schema": SCHEMA,
        "tool": {"name": "curvlab", "version": __version__},
        "command": command,
        "config": jsonable(config),
        "payload": payload,
        "payload_sha256": hashlib.sha256(text.encode()).hexdigest(),
        "timing": jsonable(timing or {}),
    }


def to_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def to_csv(report: dict) -> str:
    """Rows of the checks table, or the explicit ``table`` result if present."""
    buf = io.StringIO()
    table = report["payload"]["results"].get("table_csv")
    if table is not None:
        return table
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "value", "op", "bound", "passed"])
    for c in report["payload"]["checks"]:
        w.writerow([c["name"], c["value"], c["op"], c["bound"], c["passed"]])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def to_pretty(report: dict) -> str:
    p = report["payload"]
    lines = [f"curvlab {report['tool']['version']}  {report['command']}  "
             f"[{'PASS' if p['passed'] else 'FAIL'}]"]
    summary = p["results"].get("summary", {})
    if summary:
        lines.append("")
        width = max(len(k) for k in summary)
        for k, v in summary.items():
            lines.append(f"  {k:<{width}}  {_fmt(v)}")
    if p["checks"]:
        lines.append("")
        width = max(len(c["name"]) for c in p["checks"])
        for c in p["checks"]:
            flag = "ok  " if c["passed"] else "FAIL"
            lines.append(f"  {flag} {c['name']:<{width}}  {_fmt(c['value'])} {c['op']} {_fmt(c['bound'])}")
    t = report.get("timing", {})
    if "total_seconds" in t:
        lines.append("")
        lines.append(f"  elapsed {t['total_seconds']:.2f} s")
    return "\n".join(lines) + "\n"


def render(report: dict, fmt: str) -> str:
    if fmt == "json":
        return to_json(report)
    if fmt == "csv":
        return to_csv(report)
    if fmt == "pretty":
        return to_pretty(report)
    raise ValueError(f"unknown format {fmt!r}")


def write_atomic(path, text: str):
    """Write ``text`` to ``path`` through a temporary file and rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".report-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
