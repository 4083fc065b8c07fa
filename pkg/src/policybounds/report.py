"""Run reports and their canonical serialisations."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

SCHEMA_VERSION = 1
CSV_COLUMNS = ["quantity", "lower", "upper", "status", "method", "level"]


@dataclass
class ResultRow:
    """One reported quantity.

    ``kind`` is ``"set"`` for identified sets, ``"ci"`` for confidence
    intervals and ``"point"`` for point-identified values (lower == upper).
    """

    quantity: str
    lower: float
    upper: float
    status: str = "ok"
    method: str = ""
    level: float | None = None
    kind: str = "set"

    def as_dict(self):
        return {
            "quantity": self.quantity,
            "lower": self.lower,
            "upper": self.upper,
            "status": self.status,
            "method": self.method,
            "level": self.level,
            "kind": self.kind,
        }


@dataclass
class Report:
    command: str
    results: list[ResultRow] = field(default_factory=list)
    inputs_digest: str = ""
    versions: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def add(self, *args, **kw) -> ResultRow:
        row = ResultRow(*args, **kw)
        self.results.append(row)
        return row

    def as_dict(self, include_timings: bool = False):
        out = {
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "inputs_digest": self.inputs_digest,
            "versions": self.versions,
            "info": self.info,
            "results": [r.as_dict() for r in self.results],
        }
        if include_timings:
            out["timings"] = self.timings
        return out


def _canon(obj) -> str:
    if obj is None or obj is True or obj is False:
        return json.dumps(obj)
    if isinstance(obj, (bool, np.bool_)):
        return json.dumps(bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            return "null"
        s = "%.10g" % v
        return "0" if s == "-0" else s
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        items = sorted((str(k), v) for k, v in obj.items())
        return "{" + ",".join(json.dumps(k, ensure_ascii=False) + ":" + _canon(v) for k, v in items) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ",".join(_canon(v) for v in obj) + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def canonical_json(obj) -> str:
    """Deterministic JSON: sorted keys, no whitespace, floats as ``%.10g``, non-finite as null."""
    return _canon(obj) + "\n"


def _num_txt(v):
    if v is None:
        return ""
    v = float(v)
    return "%.10g" % v if math.isfinite(v) else ("inf" if v > 0 else ("-inf" if v < 0 else "nan"))


def _human_interval(r: ResultRow) -> str:
    if r.status != "ok" and not (math.isfinite(r.lower) and math.isfinite(r.upper)):
        return f"({r.status})" if r.status != "empty" else "∅ (model rejected)"
    lo, hi = (f"{v:.4f}".replace("-0.0000", "0.0000") for v in (r.lower, r.upper))
    if r.kind == "point" or lo == hi and r.kind != "ci":
        return lo
    if r.kind == "ci":
        return f"({lo}, {hi})"
    return f"[{lo}, {hi}]"


def emit_report(report: Report | dict, fmt: str = "json", include_timings: bool = False) -> bytes:
    """Serialise a report as canonical JSON, CSV (one row per result) or human text."""
    if isinstance(report, dict):
        d = report
        rows = [ResultRow(**r) for r in d.get("results", [])]
    else:
        d = report.as_dict(include_timings)
        rows = report.results
    if fmt == "json":
        return canonical_json(d).encode()
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([r.quantity, _num_txt(r.lower), _num_txt(r.upper), r.status, r.method, _num_txt(r.level)])
        return buf.getvalue().encode()
    if fmt == "human":
        lines = [f"{d.get('command', '')}"]
        width = max((len(r.quantity) for r in rows), default=0)
        for r in rows:
            lvl = f"  level {r.level:g}" if r.level is not None else ""
            lines.append(f"  {r.quantity.ljust(width)}  {_human_interval(r)}  [{r.method}]{lvl}")
        for k, v in sorted(d.get("info", {}).items()):
            if isinstance(v, float):
                lines.append(f"  {k}: {v:.6g}")
            elif isinstance(v, (str, int)):
                lines.append(f"  {k}: {v}")
        return ("\n".join(lines) + "\n").encode()
    raise ValueError(f"unsupported report format {fmt!r}")
