"""Deterministic serialization helpers.

JSON output is canonical: sorted keys, fixed separators, shortest
round-trip float representation, one trailing newline.  Identical inputs
therefore produce byte-identical files.  CSV cells use 17 significant
digits.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

__all__ = ["canonical", "dumps_json", "write_json", "write_csv",
           "fmt_float", "write_matrix_csv", "write_trajectory_csv"]


def canonical(obj):
    """Recursively convert numpy scalars/arrays and infinities into plain
    JSON-serializable values."""
    if isinstance(obj, dict):
        return {str(k): canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [canonical(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if math.isnan(x):
            return "nan"
        return x
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dumps_json(obj) -> str:
    return json.dumps(canonical(obj), sort_keys=True,
                      separators=(",", ": "), indent=1) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps_json(obj))


def fmt_float(x) -> str:
    return format(float(x), ".17g")


def write_csv(path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        cells = [fmt_float(v) if isinstance(v, (float, np.floating))
                 else str(v) for v in row]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def write_matrix_csv(path, matrix: np.ndarray) -> None:
    rows = [(i, j, float(matrix[i, j]))
            for i in range(matrix.shape[0]) for j in range(matrix.shape[1])]
    write_csv(path, ["row", "col", "value"], rows)


def write_trajectory_csv(path, times, values) -> None:
    rows = []
    for t, vec in zip(times, values):
        for node, v in enumerate(vec):
            rows.append((float(t), node, float(v)))
    write_csv(path, ["time", "node", "value"], rows)
