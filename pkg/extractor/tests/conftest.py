"""Synthesized public-domain test clips (pure tones and chirps)."""

from __future__ import annotations

import numpy as np
import pytest
from scipy.io import wavfile


def synth_clip(seconds: float, sample_rate: int = 48_000, freq: float = 220.0, seed: int = 0) -> np.ndarray:
    """A few harmonics plus gentle noise; amplitude safely inside int16 range."""
    t = np.arange(int(round(seconds * sample_rate))) / sample_rate
    rng = np.random.default_rng(seed)
    wave = (
        0.5 * np.sin(2 * np.pi * freq * t)
        + 0.2 * np.sin(2 * np.pi * 2 * freq * t + 0.3)
        + 0.05 * rng.standard_normal(t.shape)
    )
    return (wave * 0.6).astype(np.float32)


def write_wav(path, wave: np.ndarray, sample_rate: int = 48_000, dtype=np.int16):
    if dtype == np.int16:
        data = np.clip(wave * 32767.0, -32768, 32767).astype(np.int16)
    else:
        data = wave.astype(dtype)
    wavfile.write(path, sample_rate, data)
    return path


@pytest.fixture
def clip_dir(tmp_path):
    d = tmp_path / "clips"
    d.mkdir()
    write_wav(d / "short_4s.wav", synth_clip(4.0, freq=220.0, seed=1))
    write_wav(d / "exact_10s.wav", synth_clip(10.0, freq=330.0, seed=2))
    write_wav(d / "long_25s.wav", synth_clip(25.0, freq=440.0, seed=3))
    return d
