"""Whitespace-separated figure data with a header row (pgfplots/gnuplot ready)."""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

SCHEMAS = {
    "KA/EBNO": ("KA", "EBNO"),
    "EBNO/PUPE": ("EBNO", "PUPE"),
    "EPS/MU": ("EPS", "MU"),
    "EBNO/FER": ("EBNO", "FER"),
}


def _cols(schema: str) -> tuple[str, ...]:
    key = schema.replace(" ", "/").upper()
    if key not in SCHEMAS:
        raise ValueError(f"unknown schema {schema!r}; expected one of {sorted(SCHEMAS)}")
    return SCHEMAS[key]


def fmt(v: float) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.6g}"


def format_dat(points, schema: str) -> str:
    cols = _cols(schema)
    lines = [" ".join(cols)]
    for p in points:
        if len(p) != len(cols):
            raise ValueError(f"point {p!r} does not match columns {cols}")
        lines.append(" ".join(fmt(v) for v in p))
    return "\n".join(lines) + "\n"


def emit_dat(points, schema: str, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(format_dat(points, schema))
    return path


def read_dat(path) -> tuple[list[str], np.ndarray]:
    with open(path) as fh:
        header = fh.readline().split()
        rows = [[float(x) for x in line.split()] for line in fh if line.strip()]
    return header, np.array(rows, float).reshape(len(rows), len(header))
