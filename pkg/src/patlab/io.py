"""Field snapshots and CSV tables.

Binary layout: a 32-byte little-endian header (8-byte magic, int32 dim,
int32 cells per axis, float64 h, 8 reserved bytes whose first byte is 1 for
complex data) followed by the raw float64 (or complex128) values in C order.
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .grid import GridSpec

MAGIC = b"PATLABF1"
_HEADER = struct.Struct("<8siid8s")
assert _HEADER.size == 32


def write_field(path, field: np.ndarray, grid: GridSpec) -> None:
    field = np.asarray(field)
    if field.shape != grid.shape:
        raise ValueError(f"field shape {field.shape} does not match grid {grid.shape}")
    is_complex = np.iscomplexobj(field)
    reserved = bytes([1 if is_complex else 0]) + bytes(7)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, grid.dim, grid.n, grid.h, reserved))
        fh.write(np.ascontiguousarray(field, "<c16" if is_complex else "<f8").tobytes())


def read_header(path) -> tuple[int, int, float, bool]:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, dim, n, h, reserved = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    return dim, n, h, reserved[0] == 1


def read_field(path) -> tuple[np.ndarray, int, int, float]:
    """Returns ``(field, dim, n, h)``."""
    dim, n, h, is_complex = read_header(path)
    shape = (n + 1,) if dim == 1 else (n, n, n)
    dtype = "<c16" if is_complex else "<f8"
    data = np.fromfile(path, dtype=dtype, offset=_HEADER.size)
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{path}: expected {int(np.prod(shape))} values, found {data.size}")
    return data.reshape(shape), dim, n, h


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_series(path, x, y, names=("x", "y")) -> None:
    """Two-column plot data."""
    write_csv(path, names, zip(np.asarray(x, float), np.asarray(y, float)))


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_record(directory, rec) -> list[Path]:
    """Boundary trace and energy history as CSV, interior frames as snapshots."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    out = []
    p = d / "boundary_trace.csv"
    write_csv(p, ["t"] + [f"s{i}" for i in range(rec.boundary_trace.shape[1])],
              (np.concatenate([[t], row]) for t, row in zip(rec.times, rec.boundary_trace)))
    out.append(p)
    p = d / "energy_history.csv"
    write_series(p, rec.times, rec.energy_history, ("t", "energy"))
    out.append(p)
    if rec.frames is not None:
        for i, fr in enumerate(rec.frames):
            p = d / f"frame_{i:05d}.bin"
            write_field(p, rec.embed(fr), rec.grid)
            out.append(p)
    return out
