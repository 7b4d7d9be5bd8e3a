"""On-disk formats: 8/16-bit binary PGM and little-endian float32 tensors.

Both carry a JSON sidecar next to the data file (same stem, ``.json``).
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np


def sidecar(path) -> Path:
    return Path(path).with_suffix(".json")


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_pgm(path, grid: np.ndarray) -> None:
    """Write values in [0, 1] as binary P5, maxval 255, value = round(255 v)."""
    g = np.asarray(grid, dtype=float)
    if g.ndim != 2:
        raise ValueError("PGM grids are 2-D")
    q = np.floor(np.clip(g, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(q.tobytes())


_PGM_HEADER = re.compile(rb"P5(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)\s")


def read_pgm(path) -> np.ndarray:
    """Read binary PGM (8- or 16-bit) as floats in [0, 1]."""
    data = Path(path).read_bytes()
    m = _PGM_HEADER.match(data)
    if not m:
        raise ValueError(f"{path}: not a binary (P5) PGM file")
    w, h, maxval = (int(x) for x in m.groups())
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    body = np.frombuffer(data, dtype=dtype, count=w * h, offset=m.end())
    return body.reshape(h, w).astype(float) / maxval


def write_tensor(path, array: np.ndarray, meta: dict | None = None) -> None:
    """Flat little-endian float32 file plus ``{"shape", "dtype", ...meta}`` sidecar."""
    a = np.ascontiguousarray(array, dtype="<f4")
    Path(path).write_bytes(a.tobytes())
    write_json(sidecar(path), {"shape": list(a.shape), "dtype": "<f4", **(meta or {})})


def read_tensor(path) -> tuple[np.ndarray, dict]:
    meta = read_json(sidecar(path))
    a = np.frombuffer(Path(path).read_bytes(), dtype="<f4").reshape(meta["shape"])
    return a.astype(np.float64), meta


def read_map(path) -> np.ndarray:
    """A 2-D saliency map from either a PGM or a float tensor file."""
    p = Path(path)
    if p.suffix == ".pgm":
        return read_pgm(p)
    a, _ = read_tensor(p)
    a = np.squeeze(a)
    if a.ndim != 2:
        raise ValueError(f"{path}: expected a single 2-D map, got shape {a.shape}")
    return a
