"""Embedding dataset container, EMB1 binary format and train/validation split.

EMB1 layout (little-endian throughout):

    bytes 0-3    magic ``b"EMB1"``
    bytes 4-7    format version, u32 (currently 1)
    bytes 8-15   sample count n, u64
    bytes 16-19  dimension d, u32
    bytes 20-    n*d IEEE-754 binary32 values, row-major

A UTF-8 JSON sidecar ``<stem>.manifest.json`` (stem = path without its
``.emb1`` suffix) holds one entry per row, in row order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmbeddingFormatError
from .rng import make_rng

MAGIC = b"EMB1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQI")  # magic, version, count, dim


@dataclass
class EmbeddingMatrix:
    """n x d matrix of finite float32 embeddings; the currency between modules."""

    data: np.ndarray

    def __post_init__(self):
        self.data = validate_embedding_array(self.data)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


def validate_embedding_array(data) -> np.ndarray:
    """Coerce to a finite, 2-D, C-contiguous float32 array or raise."""
    arr = np.asarray(data)
    if arr.ndim != 2:
        raise EmbeddingFormatError(f"embedding matrix must be 2-D, got ndim={arr.ndim}")
    n, d = arr.shape
    if n < 1 or d < 1:
        raise EmbeddingFormatError(f"embedding matrix must be non-empty, got shape {arr.shape}")
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    if not np.isfinite(arr).all():
        raise EmbeddingFormatError("embedding matrix contains non-finite values")
    return arr


@dataclass
class ManifestEntry:
    id: str
    source_path: str = ""
    duration_seconds: float = 0.0
    tags: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "source_path": self.source_path,
            "duration_seconds": self.duration_seconds,
            "tags": dict(self.tags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestEntry":
        return cls(
            id=str(d["id"]),
            source_path=str(d.get("source_path", "")),
            duration_seconds=float(d.get("duration_seconds", 0.0)),
            tags={str(k): str(v) for k, v in d.get("tags", {}).items()},
        )


@dataclass
class SampleManifest:
    """Ordered per-row metadata; entry count must match the matrix row count."""

    entries: list[ManifestEntry]

    def __post_init__(self):
        if any(e.duration_seconds < 0 for e in self.entries):
            raise EmbeddingFormatError("manifest durations must be nonnegative")
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise EmbeddingFormatError("manifest ids must be unique")

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def trivial(cls, n: int) -> "SampleManifest":
        """Placeholder manifest with ids row-0000.. for unannotated matrices."""
        return cls([ManifestEntry(id=f"row-{i:04d}") for i in range(n)])


def manifest_path_for(path) -> Path:
    path = Path(path)
    stem = path.name[: -len(".emb1")] if path.name.endswith(".emb1") else path.name
    return path.with_name(stem + ".manifest.json")


def save_embeddings(matrix, manifest: SampleManifest, path) -> None:
    """Write the EMB1 file and its JSON sidecar; read-back is bit-exact."""
    if not isinstance(matrix, EmbeddingMatrix):
        matrix = EmbeddingMatrix(np.asarray(matrix))
    if len(manifest) != matrix.n:
        raise EmbeddingFormatError(
            f"manifest has {len(manifest)} entries but matrix has {matrix.n} rows"
        )
    path = Path(path)
    payload = matrix.data.astype("<f4", copy=False).tobytes(order="C")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, matrix.n, matrix.dim)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    with open(manifest_path_for(path), "w", encoding="utf-8") as fh:
        json.dump([e.to_dict() for e in manifest.entries], fh, indent=2, sort_keys=True)


def load_embeddings(path) -> tuple[EmbeddingMatrix, SampleManifest]:
    """Read an EMB1 file + sidecar, rejecting malformed or inconsistent files."""
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise EmbeddingFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, n, d = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise EmbeddingFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise EmbeddingFormatError(f"{path}: unsupported format version {version}")
    if n < 1 or d < 1:
        raise EmbeddingFormatError(f"{path}: invalid header count={n} dim={d}")
    expected = n * d * 4
    actual = len(raw) - _HEADER.size
    if actual != expected:
        raise EmbeddingFormatError(
            f"{path}: payload holds {actual} bytes but header declares {expected} "
            f"({n} x {d} float32)"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(n, d)
    matrix = EmbeddingMatrix(data)  # validates finiteness, copies out of the buffer

    mpath = manifest_path_for(path)
    if not mpath.exists():
        raise EmbeddingFormatError(f"missing manifest sidecar {mpath}")
    with open(mpath, "r", encoding="utf-8") as fh:
        entries = json.load(fh)
    if not isinstance(entries, list):
        raise EmbeddingFormatError(f"{mpath}: manifest must be a JSON array")
    manifest = SampleManifest([ManifestEntry.from_dict(e) for e in entries])
    if len(manifest) != n:
        raise EmbeddingFormatError(
            f"{mpath}: manifest has {len(manifest)} entries for {n} rows"
        )
    return matrix, manifest


@dataclass
class DatasetSplit:
    """Disjoint train/validation row indices covering 0..n-1 exactly once."""

    train_indices: np.ndarray
    val_indices: np.ndarray
    seed: int
    ratio: float

    def to_dict(self) -> dict:
        return {
            "train_indices": [int(i) for i in self.train_indices],
            "val_indices": [int(i) for i in self.val_indices],
            "seed": int(self.seed),
            "ratio": float(self.ratio),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSplit":
        return cls(
            train_indices=np.asarray(d["train_indices"], dtype=np.int64),
            val_indices=np.asarray(d["val_indices"], dtype=np.int64),
            seed=int(d["seed"]),
            ratio=float(d["ratio"]),
        )


def split_dataset(n: int, ratio: float, seed: int) -> DatasetSplit:
    """Seeded shuffle of 0..n-1 (Fisher-Yates via the PCG64 generator) cut at floor(ratio*n)."""
    if n < 2:
        raise ValueError(f"need at least 2 samples to split, got {n}")
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must lie in (0, 1), got {ratio}")
    perm = make_rng(seed).permutation(n).astype(np.int64)
    cut = int(np.floor(ratio * n))
    return DatasetSplit(
        train_indices=perm[:cut],
        val_indices=perm[cut:],
        seed=int(seed),
        ratio=float(ratio),
    )
