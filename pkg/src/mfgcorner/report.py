"""Deterministic report files: sorted-key JSON and fixed-column CSV."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

EXIT_PASS, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


def _plain(obj):
    """Convert numpy scalars/arrays and complex numbers to JSON-ready values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": _plain(obj.real), "im": _plain(obj.imag)}
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_json(obj), encoding="utf-8")
    return path


def write_csv(path, columns, data) -> Path:
    """Write columns of equal length; floats with 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = [np.asarray(c).ravel() for c in data]
    n = {c.size for c in cols}
    if len(n) > 1:
        raise ValueError("CSV columns differ in length")
    lines = [",".join(columns)]
    for row in zip(*cols):
        lines.append(",".join(_cell(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _cell(v):
    if isinstance(v, (int, np.integer)) and not isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (str, np.str_)):
        return str(v)
    return "%.17g" % float(v)


def write_rows(path, rows: list[dict], columns=None) -> Path:
    columns = columns or (list(rows[0]) if rows else [])
    return write_csv(path, columns, [[r[c] for r in rows] for c in columns])
