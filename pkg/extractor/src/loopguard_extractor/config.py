"""Extractor configuration.

The defaults pin the published preprocessing: 48 kHz input, 10-second
chunks, mel front end with window 1024 / hop 480 / 64 filter banks.
Deviating from them requires `allow_nonstandard=True`, since embeddings
produced under different settings are not comparable with the shipped
checkpoint's training regime.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

STANDARD_SAMPLE_RATE = 48_000
STANDARD_CHUNK_SECONDS = 10.0
STANDARD_MEL = {"window": 1024, "hop": 480, "n_mels": 64}
DEFAULT_CHECKPOINT = "music_audioset_epoch_15_esc_90.14.pt"
EMBEDDING_DIM = 1024


@dataclass
class ExtractorConfig:
    checkpoint: str = DEFAULT_CHECKPOINT
    backend: str = "clap"  # "clap" (published frozen checkpoint) or "offline" (self-contained reference)
    sample_rate: int = STANDARD_SAMPLE_RATE
    chunk_seconds: float = STANDARD_CHUNK_SECONDS
    mel: dict = field(default_factory=lambda: dict(STANDARD_MEL))
    audio_model: str = "HTSAT-base"
    enable_fusion: bool = True
    device: str = "cpu"
    seed: int = 0  # frozen weights seed for the offline backend
    allow_nonstandard: bool = False

    def __post_init__(self):
        if self.backend not in ("clap", "offline"):
            raise ValueError(f"backend must be 'clap' or 'offline', got {self.backend!r}")
        if self.sample_rate <= 0 or self.chunk_seconds <= 0:
            raise ValueError("sample_rate and chunk_seconds must be positive")
        for key in ("window", "hop", "n_mels"):
            if key not in self.mel or int(self.mel[key]) <= 0:
                raise ValueError(f"mel.{key} must be a positive integer")
        standard = (
            self.sample_rate == STANDARD_SAMPLE_RATE
            and self.chunk_seconds == STANDARD_CHUNK_SECONDS
            and {k: int(v) for k, v in self.mel.items()} == STANDARD_MEL
        )
        if not standard and not self.allow_nonstandard:
            raise ValueError(
                "sample_rate/chunk_seconds/mel deviate from the published preprocessing; "
                "set allow_nonstandard=True to override"
            )

    @property
    def chunk_samples(self) -> int:
        return int(round(self.chunk_seconds * self.sample_rate))

    @classmethod
    def from_json(cls, path) -> "ExtractorConfig":
        with open(Path(path), "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return {
            "checkpoint": self.checkpoint,
            "backend": self.backend,
            "sample_rate": self.sample_rate,
            "chunk_seconds": self.chunk_seconds,
            "mel": dict(self.mel),
            "audio_model": self.audio_model,
            "enable_fusion": self.enable_fusion,
            "device": self.device,
            "seed": self.seed,
            "allow_nonstandard": self.allow_nonstandard,
        }
