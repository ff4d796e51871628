"""Text/binary artifact helpers shared by the modules and the CLI."""
from __future__ import annotations

import hashlib
import json

import numpy as np


def fmt(x) -> str:
    """Format a float with 9 significant digits."""
    return f"{float(x):.9g}"


def fmt_row(values) -> str:
    return ",".join(fmt(v) for v in values)


def fingerprint_arrays(*parts) -> str:
    """64-bit hex digest of strings and arrays, stable across runs."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        if isinstance(p, str):
            h.update(p.encode())
        else:
            a = np.ascontiguousarray(p)
            h.update(str(a.dtype).encode() + str(a.shape).encode())
            h.update(a.tobytes())
        h.update(b"|")
    return h.hexdigest()


def fingerprint_config(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.blake2b(blob.encode(), digest_size=8).hexdigest()


def write_pgm(path, grid) -> None:
    """8-bit binary PGM heatmap, min-max scaled; row 0 of ``grid`` is the top row."""
    g = np.asarray(grid, dtype=float)
    lo, hi = np.nanmin(g), np.nanmax(g)
    span = hi - lo
    if span > 0:
        img = np.round(255 * (g - lo) / span)
    else:
        img = np.zeros_like(g)
    img = np.nan_to_num(img).astype(np.uint8)
    rows, cols = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode())
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    header = []
    pos = 0
    while len(header) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        header.append(data[pos:end].decode())
        pos = end
    pos += 1
    _, cols, rows, _ = header
    return np.frombuffer(data[pos:], dtype=np.uint8).reshape(int(rows), int(cols))


def write_grid_csv(path, grid) -> None:
    with open(path, "w") as fh:
        for row in np.asarray(grid):
            fh.write(fmt_row(row) + "\n")
