"""Audio loading: WAV decode, mono mixdown, resampling.

Decoding uses scipy's WAV reader (PCM and float formats). Multichannel
audio is mixed down by channel averaging. Resampling is polyphase with
the rational ratio reduced by the gcd; when the file is already at the
target rate the waveform passes through untouched, which keeps
extraction bit-reproducible for native-rate files.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly


class AudioDecodeError(Exception):
    """File could not be decoded into a usable waveform."""


_PCM_SCALE = {
    np.dtype(np.int16): 32768.0,
    np.dtype(np.int32): 2147483648.0,
    np.dtype(np.uint8): 128.0,
}


def load_waveform(path, target_rate: int) -> tuple[np.ndarray, float]:
    """Decode, mix to mono, resample. Returns (waveform float64, original duration seconds)."""
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except Exception as exc:
        raise AudioDecodeError(f"{path}: {exc}") from exc
    if data.size == 0:
        raise AudioDecodeError(f"{path}: zero-length audio")

    if data.dtype in _PCM_SCALE:
        wave = data.astype(np.float64) / _PCM_SCALE[data.dtype]
        if data.dtype == np.dtype(np.uint8):
            wave -= 1.0  # uint8 WAV is offset-encoded
    else:
        wave = data.astype(np.float64)

    if wave.ndim == 2:
        wave = wave.mean(axis=1)
    elif wave.ndim != 1:
        raise AudioDecodeError(f"{path}: unsupported channel layout {data.shape}")

    duration = wave.shape[0] / rate
    if rate != target_rate:
        g = math.gcd(target_rate, rate)
        wave = resample_poly(wave, target_rate // g, rate // g)
    if not np.isfinite(wave).all():
        raise AudioDecodeError(f"{path}: non-finite samples after decode")
    return wave, duration


def tile_to_length(wave: np.ndarray, n_samples: int) -> np.ndarray:
    """Repeat the clip cyclically and cut at exactly n_samples."""
    if wave.shape[0] >= n_samples:
        return wave[:n_samples]
    reps = int(np.ceil(n_samples / wave.shape[0]))
    return np.tile(wave, reps)[:n_samples]


def downsample_to_length(wave: np.ndarray, n_samples: int) -> np.ndarray:
    """Whole-clip view compressed to n_samples by polyphase resampling."""
    if wave.shape[0] == n_samples:
        return wave
    g = math.gcd(n_samples, wave.shape[0])
    out = resample_poly(wave, n_samples // g, wave.shape[0] // g)
    return tile_to_length(out, n_samples) if out.shape[0] < n_samples else out[:n_samples]
