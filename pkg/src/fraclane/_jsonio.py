"""Deterministic JSON and CSV writers.

Floats are written with 17 significant digits and keys are sorted, so the
same values always produce the same bytes.  Files are written to a temporary
name and renamed into place.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from pathlib import Path

import numpy as np


def _float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    text = format(x, ".17g")
    if "e" not in text and "." not in text and "n" not in text:
        text += ".0"
    return text


def _encode(obj, indent, level, out):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, (bool, np.bool_)):
        out.append("true" if obj else "false")
    elif obj is None:
        out.append("null")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        items = sorted((str(k), v) for k, v in obj.items())
        for i, (k, v) in enumerate(items):
            out.append(pad + json.dumps(k) + ": ")
            _encode(v, indent, level + 1, out)
            out.append(",\n" if i < len(items) - 1 else "\n")
        out.append(end + "}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        seq = obj.tolist() if isinstance(obj, np.ndarray) else list(obj)
        if not seq:
            out.append("[]")
            return
        if all(isinstance(v, (int, float, bool, np.number)) or v is None for v in seq):
            parts = []
            for v in seq:
                sub = []
                _encode(v, indent, level + 1, sub)
                parts.append("".join(sub))
            out.append("[" + ", ".join(parts) + "]")
            return
        out.append("[\n")
        for i, v in enumerate(seq):
            out.append(pad)
            _encode(v, indent, level + 1, out)
            out.append(",\n" if i < len(seq) - 1 else "\n")
        out.append(end + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    out: list[str] = []
    _encode(obj, indent, 0, out)
    return "".join(out) + "\n"


def _atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_json(path, obj) -> Path:
    _atomic_write(Path(path), dumps(obj))
    return Path(path)


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_grid_csv(path, nodes: np.ndarray, columns: dict) -> Path:
    """Nodal table: index, node coordinates, then one column per entry of ``columns``."""
    nodes = np.asarray(nodes, dtype=float)
    dim = nodes.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    coord = ["x"] if dim == 1 else ["x", "y"]
    names = list(columns)
    w.writerow(["node"] + coord + names)
    for i in range(len(nodes)):
        row = [str(i)] + [_float(float(c)) for c in nodes[i]]
        row += [_float(float(columns[k][i])) for k in names]
        w.writerow(row)
    _atomic_write(Path(path), buf.getvalue())
    return Path(path)


def read_grid_csv(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = {h: np.array([float(r[k]) for r in body]) for k, h in enumerate(header)}
    return cols
