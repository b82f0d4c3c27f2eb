"""Byte-stable CSV and JSON writers.

Floats are written with ``repr`` (shortest round-trip form), so identical
numbers always produce identical bytes. Non-finite values become the strings
``inf``, ``-inf`` and ``nan`` in JSON as well as in CSV.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np


def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def clean(obj):
    """Recursively convert numpy scalars/arrays and non-finite floats to plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def dumps(obj):
    return json.dumps(clean(obj), sort_keys=True, allow_nan=False)


def write_csv(path, header, rows):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def write_jsonl(path, records):
    path = Path(path)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(dumps(rec) + "\n")
    return path


def write_json(path, obj):
    path = Path(path)
    path.write_text(json.dumps(clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n")
    return path


def clock_rows(ell, path_index=None):
    """Rows ``t, l_1..l_d`` for a single clock."""
    prefix = [] if path_index is None else [path_index]
    return [prefix + [t, *v] for t, v in zip(ell.grid, ell.values)]


def levy_rows(grid, L, path_index=None):
    prefix = [] if path_index is None else [path_index]
    return [prefix + [t, *v] for t, v in zip(grid, L)]


def trajectory_rows(traj, path_index=None):
    """Rows ``t, X_1..X_d, Y_1..Y_d, met_1..met_d, M, bracket``."""
    prefix = [] if path_index is None else [path_index]
    return [
        prefix + [t, *x, *y, *(bool(m) for m in met), mm, q]
        for t, x, y, met, mm, q in zip(traj.grid, traj.X, traj.Y, traj.met, traj.M, traj.bracket)
    ]


def headers(d, *names):
    return [f"{n}_{j + 1}" for n in names for j in range(d)]
