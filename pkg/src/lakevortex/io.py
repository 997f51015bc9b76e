"""Field dumps, CSV tables and atomic text output."""

from __future__ import annotations

import csv
import hashlib
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .geometry import Grid, LakeDomain

MAGIC = b"LVF1"
HEADER = struct.Struct("<4sHHddd")  # magic, nx, ny, h, origin x, origin y
HEADER_SIZE = 32


def _header_bytes(grid: Grid) -> bytes:
    head = HEADER.pack(MAGIC, grid.nx, grid.ny, grid.h, grid.origin[0], grid.origin[1])
    return head.ljust(HEADER_SIZE, b"\0")


def write_field(path, values: np.ndarray, grid: Grid, meta: dict | None = None) -> list[Path]:
    """Write ``values`` (shape (nx, ny), C order) plus a ``.meta`` key/value sidecar."""
    path = Path(path)
    values = np.ascontiguousarray(values, dtype="<f8")
    if values.shape != grid.shape:
        raise ValueError(f"field shape {values.shape} does not match grid {grid.shape}")
    atomic_write_bytes(path, _header_bytes(grid) + values.tobytes(order="C"))
    lines = [
        "format = LVF1",
        "layout = float64 little-endian, shape (nx, ny), C order, index [i, j] with i along x",
        f"nx = {grid.nx}",
        f"ny = {grid.ny}",
        f"h = {grid.h!r}",
        f"origin = {grid.origin[0]!r}, {grid.origin[1]!r}",
    ]
    for key, val in (meta or {}).items():
        lines.append(f"{key} = {val}")
    meta_path = path.with_suffix(path.suffix + ".meta") if path.suffix != ".lvf" else path.with_suffix(".meta")
    atomic_write_text(meta_path, "\n".join(lines) + "\n")
    return [path, meta_path]


def read_field(path) -> tuple[np.ndarray, Grid]:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_SIZE:
        raise ValueError("file too short for an LVF1 header")
    magic, nx, ny, h, ox, oy = HEADER.unpack(raw[: HEADER.size])
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    data = np.frombuffer(raw, dtype="<f8", offset=HEADER_SIZE)
    if data.size != nx * ny:
        raise ValueError(f"payload has {data.size} values, header announces {nx * ny}")
    return data.reshape(nx, ny).copy(), Grid(nx, ny, h, (ox, oy))


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    return str(value)


def write_csv(path, header, rows) -> Path:
    """CSV with floats printed as %.17g so reruns compare byte for byte."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    with os.fdopen(fd, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    os.replace(tmp, path)
    return path


def export_csv(path, values: np.ndarray, domain: LakeDomain, max_cells: int = 200_000) -> Path:
    """(x, y, value) rows for interior cells of small grids."""
    n = int(domain.mask.sum())
    if n > max_cells:
        raise ValueError(f"{n} interior cells exceed the CSV export limit {max_cells}")
    X, Y = domain.grid.centers()
    m = domain.mask
    return write_csv(path, ["x", "y", "value"], zip(X[m], Y[m], values[m]))


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode())


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def key_values(mapping: dict, prefix: str = "") -> list[str]:
    """Flatten a nested mapping into ``a.b = value`` lines."""
    out = []
    for key, val in mapping.items():
        name = f"{prefix}{key}"
        if isinstance(val, dict):
            out.extend(key_values(val, name + "."))
        elif isinstance(val, (list, tuple)):
            out.append(f"{name} = " + ", ".join(fmt(v) for v in val))
        else:
            out.append(f"{name} = {fmt(val)}")
    return out
