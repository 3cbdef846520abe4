"""EMB1 writer: the bit-exact embedding container consumed by the toolkit.

Layout (little-endian): magic "EMB1", u32 version=1, u64 sample count,
u32 dimension, then count*dim IEEE-754 binary32 values row-major. A JSON
sidecar `<stem>.manifest.json` lists one entry per row in row order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"EMB1"
VERSION = 1
_HEADER = struct.Struct("<4sIQI")


def manifest_path_for(path) -> Path:
    path = Path(path)
    stem = path.name[: -len(".emb1")] if path.name.endswith(".emb1") else path.name
    return path.with_name(stem + ".manifest.json")


def write_emb1(path, matrix: np.ndarray, entries: list[dict]) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2 or matrix.shape[0] < 1:
        raise ValueError(f"embedding matrix must be 2-D and non-empty, got shape {matrix.shape}")
    if not np.isfinite(matrix).all():
        raise ValueError("refusing to write non-finite embeddings")
    if len(entries) != matrix.shape[0]:
        raise ValueError(f"{len(entries)} manifest entries for {matrix.shape[0]} rows")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, matrix.shape[0], matrix.shape[1]))
        fh.write(matrix.tobytes(order="C"))
    with open(manifest_path_for(path), "w", encoding="utf-8") as fh:
        json.dump(entries, fh, indent=2, sort_keys=True)
