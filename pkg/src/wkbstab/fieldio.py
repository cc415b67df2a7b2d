"""Binary field container and text sidecar.

Layout (little endian)::

    magic   4 bytes  b"WKBF"
    version u32      1
    d       u32
    M       u32
    C       u32
    L       f64
    eps     f64
    t       f64
    data    C * M^d complex64 (re, im float32 pairs), row-major (C, M, ..., M)

The sidecar ``<path>.txt`` holds the same header as ``key = value`` lines plus
any free-form metadata passed by the caller.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping, Optional, Tuple

import numpy as np

from .fourier import Field, Grid

MAGIC = b"WKBF"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIddd")

__all__ = ["write_field", "read_field"]


def write_field(path, field: Field, t: float = 0.0, metadata: Optional[Mapping] = None) -> Path:
    path = Path(path)
    g = field.grid
    header = _HEADER.pack(MAGIC, VERSION, g.d, g.M, field.components, g.L, g.eps, float(t))
    payload = np.ascontiguousarray(field.data, dtype="<c8").tobytes()
    path.write_bytes(header + payload)
    lines = [
        f"format = WKBF v{VERSION}",
        f"d = {g.d}",
        f"M = {g.M}",
        f"C = {field.components}",
        f"L = {g.L!r}",
        f"eps = {g.eps!r}",
        f"t = {float(t)!r}",
        "dtype = complex64 row-major (C, M, ..., M)",
    ]
    for key, value in (metadata or {}).items():
        lines.append(f"{key} = {value}")
    Path(str(path) + ".txt").write_text("\n".join(lines) + "\n")
    return path


def read_field(path) -> Tuple[Field, float]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError("truncated field file")
    magic, version, d, M, C, L, eps, t = _HEADER.unpack_from(raw)
    if magic != MAGIC or version != VERSION:
        raise ValueError("not a WKBF v1 field file")
    grid = Grid(d, M, L, eps)
    count = C * M**d
    body = raw[_HEADER.size:]
    if len(body) != 8 * count:
        raise ValueError("field payload size does not match header")
    data = np.frombuffer(body, dtype="<c8").astype(complex).reshape((C,) + grid.shape)
    return Field(grid, data), t
