"""CSV/JSON reading and writing for data, draws and study tables."""

import csv
import io as _io
import json
import math

import numpy as np

from .numerics import DomainError

__all__ = [
    "read_table",
    "read_counts",
    "read_matrix",
    "read_grouped",
    "format_rows",
    "write_rows",
    "parse_rows",
    "read_spec",
]


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if v.is_integer() and abs(v) < 1e15:
            return int(v)
        return v
    return v


def _cell(v):
    v = _fmt(v)
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


def _json_value(v):
    v = _fmt(v)
    if isinstance(v, float) and not math.isfinite(v):
        return _cell(v)
    return v


def format_rows(header, rows, fmt="csv"):
    """Render rows as CSV text (header line first) or a JSON array of objects."""
    if fmt == "csv":
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
        return buf.getvalue()
    if fmt == "json":
        objs = [{h: _json_value(v) for h, v in zip(header, row)} for row in rows]
        return json.dumps(objs, indent=1) + "\n"
    raise DomainError(f"unknown format {fmt!r}")


def write_rows(path, header, rows, fmt="csv"):
    text = format_rows(header, rows, fmt)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _number(s):
    s = s.strip()
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def parse_rows(text, fmt="csv"):
    """Inverse of :func:`format_rows`: (header, rows) with numbers restored."""
    if fmt == "csv":
        reader = csv.reader(_io.StringIO(text))
        lines = [r for r in reader if r]
        if not lines:
            return [], []
        return lines[0], [[_number(c) for c in r] for r in lines[1:]]
    if fmt == "json":
        objs = json.loads(text)
        if not objs:
            return [], []
        header = list(objs[0])
        rows = [[_number(o[h]) if isinstance(o[h], str) else o[h] for h in header] for o in objs]
        return header, rows
    raise DomainError(f"unknown format {fmt!r}")


def read_table(path):
    """Headered numeric CSV -> (header, float array)."""
    with open(path, newline="") as fh:
        lines = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if len(lines) < 2:
        raise DomainError(f"{path}: need a header line and at least one row")
    header = [h.strip() for h in lines[0]]
    try:
        data = np.array([[float(c) for c in r] for r in lines[1:]])
    except ValueError as exc:
        raise DomainError(f"{path}: non-numeric entry ({exc})") from None
    if data.shape[1] != len(header):
        raise DomainError(f"{path}: rows do not match the header width")
    return header, data


def read_counts(path):
    """Single column of nonnegative integer counts."""
    _, data = read_table(path)
    if data.shape[1] != 1:
        raise DomainError(f"{path}: expected one count column")
    y = data[:, 0]
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise DomainError(f"{path}: counts must be nonnegative integers")
    return y.astype(np.int64)


def read_matrix(path):
    """n x d observations, one per row."""
    _, data = read_table(path)
    return data


def read_grouped(path):
    """Columns y, group -> (y ordered by group, group sizes)."""
    header, data = read_table(path)
    cols = {h: j for j, h in enumerate(header)}
    if "y" not in cols or "group" not in cols:
        raise DomainError(f"{path}: expected columns y and group")
    y = data[:, cols["y"]]
    g = data[:, cols["group"]]
    order = np.argsort(g, kind="stable")
    _, sizes = np.unique(g, return_counts=True)
    return y[order], tuple(int(s) for s in sizes)


def read_spec(path):
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise DomainError(f"{path}: invalid JSON ({exc})") from None
