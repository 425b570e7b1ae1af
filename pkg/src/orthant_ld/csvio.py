"""CSV helpers shared by the library and the command line."""
from __future__ import annotations

import csv
import io
import math

import numpy as np

from .errors import ParseError

__all__ = ["fmt", "write_csv", "read_path_csv", "format_path_csv"]


def fmt(x) -> str:
    """17 significant digits for floats, ``inf``/``nan`` spelled out."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".17g")
    return str(x)


def write_csv(header, rows, out=None) -> str:
    """Render ``rows`` under ``header``; also write to the file object ``out``."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text


def read_path_csv(text: str):
    """Parse ``t,x1,...,xN`` rows into ``(times, points)`` arrays."""
    rows = list(csv.reader(io.StringIO(text)))
    rows = [(i, r) for i, r in enumerate(rows, start=1) if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError("empty path file")
    lineno, header = rows[0]
    header = [c.strip() for c in header]
    n = len(header) - 1
    if n < 1 or header[0] != "t" or header[1:] != [f"x{i}" for i in range(1, n + 1)]:
        raise ParseError("path header must be 't,x1,...,xN'", lineno)
    times, points = [], []
    for lineno, row in rows[1:]:
        if len(row) != n + 1:
            raise ParseError(f"expected {n + 1} fields, found {len(row)}", lineno)
        try:
            vals = [float(c) for c in row]
        except ValueError:
            raise ParseError(f"non-numeric field in {','.join(row)!r}", lineno) from None
        if not all(math.isfinite(v) for v in vals):
            raise ParseError("non-finite value", lineno)
        if times and vals[0] <= times[-1]:
            raise ParseError("times must be strictly increasing", lineno)
        if any(v < 0 for v in vals[1:]):
            raise ParseError("path point leaves the orthant", lineno)
        times.append(vals[0])
        points.append(vals[1:])
    if len(times) < 2:
        raise ParseError("a path needs at least two knots")
    return np.array(times), np.array(points)


def format_path_csv(times, points) -> str:
    points = np.asarray(points)
    header = ["t"] + [f"x{i}" for i in range(1, points.shape[1] + 1)]
    return write_csv(header, ([t, *x] for t, x in zip(times, points)))
