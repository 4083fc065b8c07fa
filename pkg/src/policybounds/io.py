"""Reading and writing judge-level datasets.

Two CSV layouts are supported.

Aggregate (binary outcome)::

    judge_id,group,n_cases,share,release_rate,mean_y_given_released,mean_y_given_detained

Long pmf::

    judge_id,group,n_cases,share,y,d,prob

In the aggregate layout the detained outcome mean is only replaced by zero
when ``known_y0=True`` is passed explicitly.
"""

from __future__ import annotations

import csv
import io as _io
from pathlib import Path

import numpy as np

from .model import PROB_TOL, DataDistribution, JudgeCell, ModelError, OutcomeGrid, validate_instance

AGGREGATE_COLUMNS = [
    "judge_id",
    "group",
    "n_cases",
    "share",
    "release_rate",
    "mean_y_given_released",
    "mean_y_given_detained",
]
LONG_COLUMNS = ["judge_id", "group", "n_cases", "share", "y", "d", "prob"]


class DatasetError(ModelError):
    """Schema or value problem in an input file."""


def _read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        rows = list(reader)
    return fields, rows


def detect_format(fields) -> str:
    if "prob" in fields:
        return "long"
    if "release_rate" in fields:
        return "aggregate"
    raise DatasetError(f"cannot tell dataset layout from columns {fields}")


def _num(row, col, lineno, allow_blank=False):
    raw = row.get(col)
    if raw is None or raw.strip() == "":
        if allow_blank:
            return None
        raise DatasetError(f"line {lineno}: column '{col}' is empty")
    try:
        v = float(raw)
    except ValueError:
        raise DatasetError(f"line {lineno}: column '{col}' is not a number: {raw!r}") from None
    if not np.isfinite(v):
        raise DatasetError(f"line {lineno}: column '{col}' is not finite")
    return v


def _prob(row, col, lineno, allow_blank=False):
    v = _num(row, col, lineno, allow_blank)
    if v is not None and not -PROB_TOL <= v <= 1 + PROB_TOL:
        raise DatasetError(f"line {lineno}: column '{col}'={v} is not a probability")
    return v


def _check_columns(fields, need):
    missing = [c for c in need if c not in fields]
    if missing:
        raise DatasetError(f"missing column(s): {', '.join(missing)}")


def parse_dataset(path, fmt: str | None = None, known_y0: bool = False, validate: bool = True) -> DataDistribution:
    """Read a dataset file into a validated :class:`DataDistribution`.

    Parameters
    ----------
    path : path-like
    fmt : {"aggregate", "long"}, optional
        Detected from the header when omitted.
    known_y0 : bool
        Aggregate layout only: treat the outcome of detained defendants as
        zero, ignoring ``mean_y_given_detained``.
    """
    fields, rows = _read_rows(path)
    fmt = fmt or detect_format(fields)
    if fmt == "aggregate":
        data = _parse_aggregate(fields, rows, known_y0)
    elif fmt == "long":
        data = _parse_long(fields, rows)
    else:
        raise DatasetError(f"unknown dataset format {fmt!r}")
    if not validate:
        return data
    report = validate_instance(data)
    if not report.ok:
        msg = "; ".join(f"{i.judge or '<all>'}: {i.message}" for i in report.issues if i.fatal)
        raise DatasetError(f"{path}: {msg}")
    return report.data


def _parse_aggregate(fields, rows, known_y0):
    _check_columns(fields, AGGREGATE_COLUMNS[:-1] if known_y0 else AGGREGATE_COLUMNS)
    judges = []
    for k, row in enumerate(rows, start=2):
        r = _prob(row, "release_rate", k)
        m1 = _prob(row, "mean_y_given_released", k)
        if known_y0:
            m0 = 0.0
        else:
            m0 = _prob(row, "mean_y_given_detained", k)
        pmf = np.array([[(1 - r) * (1 - m0), r * (1 - m1)], [(1 - r) * m0, r * m1]])
        judges.append(
            JudgeCell(row["judge_id"], _num(row, "share", k), _num(row, "n_cases", k), row["group"], pmf)
        )
    if not judges:
        raise DatasetError("dataset has no rows")
    return DataDistribution(tuple(judges), OutcomeGrid((0.0, 1.0)))


def _parse_long(fields, rows):
    _check_columns(fields, LONG_COLUMNS)
    order: list[str] = []
    attrs: dict[str, tuple] = {}
    cells: dict[str, dict] = {}
    ys = set()
    for k, row in enumerate(rows, start=2):
        jid = row["judge_id"]
        y = _num(row, "y", k)
        d = _num(row, "d", k)
        if d not in (0.0, 1.0):
            raise DatasetError(f"line {k}: column 'd' must be 0 or 1, got {row['d']!r}")
        p = _prob(row, "prob", k)
        a = (row["group"], _num(row, "n_cases", k), _num(row, "share", k))
        if jid not in attrs:
            order.append(jid)
            attrs[jid] = a
            cells[jid] = {}
        elif attrs[jid] != a:
            raise DatasetError(f"line {k}: judge {jid} has inconsistent group/n_cases/share")
        key = (y, int(d))
        if key in cells[jid]:
            raise DatasetError(f"line {k}: duplicate cell (y={y}, d={int(d)}) for judge {jid}")
        cells[jid][key] = p
        ys.add(y)
    if not order:
        raise DatasetError("dataset has no rows")
    grid = OutcomeGrid(tuple(sorted(ys)))
    judges = []
    for jid in order:
        pmf = np.zeros((len(grid), 2))
        for (y, d), p in cells[jid].items():
            pmf[grid.index(y), d] = p
        group, n, share = attrs[jid]
        judges.append(JudgeCell(jid, share, n, group, pmf))
    return DataDistribution(tuple(judges), grid)


def format_long(data: DataDistribution) -> str:
    """Long-layout CSV text; floats use ``repr`` so re-parsing is exact."""
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LONG_COLUMNS)
    for j in data.judges:
        for i, y in enumerate(data.grid.values):
            for d in (0, 1):
                w.writerow([j.id, j.group, repr(j.n_cases), repr(j.share), repr(y), d, repr(float(j.pmf[i, d]))])
    return buf.getvalue()


def write_long(data: DataDistribution, path) -> None:
    Path(path).write_text(format_long(data))
