"""Top-level extraction: single files and whole directories to EMB1."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .audio import AudioDecodeError, load_waveform
from .backends import make_backend
from .config import EMBEDDING_DIM, ExtractorConfig
from .emb1 import write_emb1

AUDIO_SUFFIXES = (".wav", ".wave")


def extract_one(audio_path, cfg: ExtractorConfig, backend=None) -> np.ndarray:
    """Embed one audio file: decode, mono, resample, frozen-encoder inference.

    The backend applies the duration-dependent input handling (repeat-pad
    for clips up to the chunk length, global + three-segment fusion
    beyond it). Returns a finite float32 vector of length 1024.
    """
    backend = backend or make_backend(cfg)
    wave, _ = load_waveform(audio_path, cfg.sample_rate)
    emb = backend.embed(wave)
    if emb.shape != (EMBEDDING_DIM,):
        raise RuntimeError(f"backend produced shape {emb.shape}, expected ({EMBEDDING_DIM},)")
    if not np.isfinite(emb).all():
        raise RuntimeError(f"{audio_path}: embedding contains non-finite values")
    return emb


def extract_batch(audio_dir, cfg: ExtractorConfig, out_path) -> dict:
    """Embed every decodable audio file under a directory into one EMB1 file.

    Files are processed in lexicographic order of their relative paths;
    failures are skipped and recorded in `skipped.json` next to the
    output. Returns a summary dict.
    """
    audio_dir = Path(audio_dir)
    out_path = Path(out_path)
    files = sorted(
        (p for p in audio_dir.rglob("*") if p.suffix.lower() in AUDIO_SUFFIXES),
        key=lambda p: p.relative_to(audio_dir).as_posix(),
    )
    if not files:
        raise FileNotFoundError(f"no audio files found under {audio_dir}")

    backend = make_backend(cfg)
    rows, entries, skipped = [], [], []
    for path in files:
        rel = path.relative_to(audio_dir).as_posix()
        try:
            wave, duration = load_waveform(path, cfg.sample_rate)
            emb = backend.embed(wave)
            if not np.isfinite(emb).all():
                raise AudioDecodeError(f"{path}: non-finite embedding")
        except AudioDecodeError as exc:
            skipped.append({"path": rel, "error": str(exc)})
            continue
        rows.append(emb)
        entries.append(
            {
                "id": rel,
                "source_path": str(path),
                "duration_seconds": duration,
                "tags": {"backend": cfg.backend, "checkpoint": cfg.checkpoint},
            }
        )
    if not rows:
        raise AudioDecodeError(f"no decodable audio files under {audio_dir}")

    write_emb1(out_path, np.stack(rows), entries)
    skipped_path = out_path.with_name("skipped.json")
    with open(skipped_path, "w", encoding="utf-8") as fh:
        json.dump(skipped, fh, indent=2, sort_keys=True)
    return {"written": len(rows), "skipped": len(skipped), "output": str(out_path)}
