"""Deterministic CSV tables, binary snapshots with JSON sidecars, atomic JSON."""

from __future__ import annotations

import csv
import json
import os
import tempfile

import numpy as np


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, rows, columns=None):
    """Rows of dicts; floats use ``repr`` so equal data give byte-identical files."""
    rows = list(rows)
    columns = columns or (list(rows[0].keys()) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if np.isfinite(x) else str(x)
    return obj


def write_json_atomic(path, obj):
    """Write to a temporary file in the same directory, then rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def write_snapshot(stem, array, variables, **meta):
    """``stem.bin`` (little-endian float64, row-major) and ``stem.json``.

    ``variables`` names the entries of the last axis (or the single field).
    """
    a = np.ascontiguousarray(array, dtype="<f8")
    a.tofile(stem + ".bin")
    side = {"shape": list(a.shape), "dtype": "float64", "byte_order": "little", "order": "C",
            "variables": list(variables)}
    side.update(meta)
    write_json_atomic(stem + ".json", side)


def read_snapshot(stem):
    with open(stem + ".json") as fh:
        side = json.load(fh)
    a = np.fromfile(stem + ".bin", dtype="<f8").reshape(side["shape"])
    return a, side
