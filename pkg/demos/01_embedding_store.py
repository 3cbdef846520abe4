"""Embedding storage walkthrough: the EMB1 container and dataset splits.

Creates a small embedding matrix, writes it with a manifest, reads it
back bit-exactly, and draws the seeded train/validation split.

Run: python demos/01_embedding_store.py
"""

import tempfile
from pathlib import Path

import numpy as np

from loopguard import (
    ManifestEntry,
    SampleManifest,
    load_embeddings,
    make_rng,
    save_embeddings,
    split_dataset,
)

workdir = Path(tempfile.mkdtemp(prefix="loopguard_demo_"))
print(f"working in {workdir}\n")

# a toy dataset: 12 embeddings of dimension 16
rng = make_rng(42)
matrix = rng.normal(size=(12, 16)).astype(np.float32)
manifest = SampleManifest(
    [ManifestEntry(id=f"loop-{i:02d}", duration_seconds=2.0 + i * 0.25) for i in range(12)]
)

path = workdir / "toy.emb1"
save_embeddings(matrix, manifest, path)
print(f"wrote {path} ({path.stat().st_size} bytes) and its manifest sidecar")

loaded, loaded_manifest = load_embeddings(path)
print(f"read back {loaded.n} x {loaded.dim} matrix; bit-exact: {loaded.data.tobytes() == matrix.tobytes()}")
print(f"first entry: {loaded_manifest.entries[0]}\n")

# the split is a seeded shuffle cut at floor(ratio * n)
split = split_dataset(loaded.n, ratio=0.8, seed=7)
print(f"80/20 split of {loaded.n} rows -> {len(split.train_indices)} train, {len(split.val_indices)} val")
print(f"train rows: {sorted(split.train_indices.tolist())}")
print(f"val rows:   {sorted(split.val_indices.tolist())}")
print(f"same seed reproduces it: {np.array_equal(split.train_indices, split_dataset(12, 0.8, 7).train_indices)}")
