"""Embedding backends.

Both backends receive the resampled mono waveform and own the dual-path
input handling: clips of at most `chunk_seconds` are repeated cyclically
to exactly that length; longer clips contribute a globally downsampled
view plus three chunk-length segments (start, middle, end) whose
features are fused with the global view.

`FrozenClapBackend` drives the published pretrained fusion-enabled
checkpoint in inference mode and returns its 1024-dim pre-projection
audio embedding. It needs the optional `clap` extra (laion_clap, torch)
and the downloaded weights.

`OfflineReferenceBackend` is a self-contained frozen encoder (log-mel
front end -> summary statistics -> fixed seeded projection) with the
same interface and input handling. It is NOT the published model; it
exists so the extraction pipeline, file contracts and determinism can
be exercised end to end on machines without the checkpoint.
"""

from __future__ import annotations

import numpy as np

from .audio import downsample_to_length, tile_to_length
from .config import EMBEDDING_DIM, ExtractorConfig


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int, fmin: float = 0.0, fmax=None) -> np.ndarray:
    """Triangular mel filterbank on the HTK mel scale, shape (n_mels, n_fft//2 + 1)."""
    fmax = fmax if fmax is not None else sample_rate / 2.0

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)

    mel_points = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    bins = np.floor((n_fft + 1) * hz_points / sample_rate).astype(int)
    fb = np.zeros((n_mels, n_fft // 2 + 1))
    for m in range(1, n_mels + 1):
        left, center, right = bins[m - 1], bins[m], bins[m + 1]
        if center == left:
            center = left + 1
        if right == center:
            right = center + 1
        for k in range(left, min(center, fb.shape[1])):
            fb[m - 1, k] = (k - left) / (center - left)
        for k in range(center, min(right, fb.shape[1])):
            fb[m - 1, k] = (right - k) / (right - center)
    return fb


def log_mel_spectrogram(wave: np.ndarray, sample_rate: int, window: int, hop: int, n_mels: int) -> np.ndarray:
    """(frames, n_mels) log-power mel spectrogram with a Hann window."""
    if wave.shape[0] < window:
        wave = np.pad(wave, (0, window - wave.shape[0]))
    n_frames = 1 + (wave.shape[0] - window) // hop
    idx = np.arange(window)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = wave[idx] * np.hanning(window)
    spec = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    mel = spec @ mel_filterbank(n_mels, window, sample_rate).T
    return np.log10(mel + 1e-10)


class OfflineReferenceBackend:
    """Deterministic frozen encoder: log-mel statistics through a seeded projection."""

    name = "offline"

    def __init__(self, cfg: ExtractorConfig):
        self.cfg = cfg
        n_mels = int(cfg.mel["n_mels"])
        feat_dim = 3 * n_mels
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((cfg.seed, 0xEB))))
        self._projection = rng.normal(size=(EMBEDDING_DIM, feat_dim)) / np.sqrt(feat_dim)
        self._fuse_weight = 0.5  # fixed convex blend of global and local features

    def _features(self, wave: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        mel = log_mel_spectrogram(
            wave, cfg.sample_rate, int(cfg.mel["window"]), int(cfg.mel["hop"]), int(cfg.mel["n_mels"])
        )
        delta = np.diff(mel, axis=0) if mel.shape[0] > 1 else np.zeros((1, mel.shape[1]))
        return np.concatenate([mel.mean(axis=0), mel.std(axis=0), np.abs(delta).mean(axis=0)])

    def embed(self, wave: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        chunk = cfg.chunk_samples
        if wave.shape[0] <= chunk:
            feats = self._features(tile_to_length(wave, chunk))
        else:
            global_view = downsample_to_length(wave, chunk)
            mid_start = (wave.shape[0] - chunk) // 2
            segments = [wave[:chunk], wave[mid_start : mid_start + chunk], wave[-chunk:]]
            local = np.mean([self._features(s) for s in segments], axis=0)
            feats = self._fuse_weight * self._features(global_view) + (1.0 - self._fuse_weight) * local
        emb = np.tanh(self._projection @ feats)
        return emb.astype(np.float32)


class FrozenClapBackend:
    """The published fusion-enabled checkpoint, invoked in inference mode.

    Returns the audio branch's pre-projection embedding (1024-dim for the
    HTSAT-base weights). Requires laion_clap + torch and the checkpoint
    file named in the config.
    """

    name = "clap"

    def __init__(self, cfg: ExtractorConfig):
        try:
            import laion_clap
            import torch
        except ImportError as exc:
            raise RuntimeError(
                "the 'clap' backend needs the optional clap extra "
                "(pip install loopguard-extractor[clap]) and the published checkpoint; "
                "use backend='offline' for a self-contained run"
            ) from exc
        self._torch = torch
        self._module = laion_clap.CLAP_Module(enable_fusion=cfg.enable_fusion, amodel=cfg.audio_model)
        self._module.load_ckpt(cfg.checkpoint)
        self._module.eval()
        self.cfg = cfg

    def embed(self, wave: np.ndarray) -> np.ndarray:
        torch = self._torch
        from laion_clap.training.data import get_audio_features

        cfg = self.cfg
        sample = {}
        tensor = torch.from_numpy(wave.astype(np.float32))
        # the published preprocessing handles repeat-pad vs fusion internally
        sample = get_audio_features(
            sample,
            tensor,
            cfg.chunk_samples,
            data_truncating="fusion" if cfg.enable_fusion else "rand_trunc",
            data_filling="repeat",
            audio_cfg=self._module.model_cfg["audio_cfg"],
        )
        batch = {k: v.unsqueeze(0) if hasattr(v, "unsqueeze") else v for k, v in sample.items()}
        with torch.no_grad():
            out = self._module.model.audio_branch(batch, mixup_lambda=None, device=cfg.device)
        emb = out["embedding"].squeeze(0).cpu().numpy().astype(np.float32)
        if emb.shape != (EMBEDDING_DIM,):
            raise RuntimeError(
                f"checkpoint produced a {emb.shape} embedding; expected ({EMBEDDING_DIM},) - "
                "check the audio_model/checkpoint pairing"
            )
        return emb


def make_backend(cfg: ExtractorConfig):
    if cfg.backend == "offline":
        return OfflineReferenceBackend(cfg)
    return FrozenClapBackend(cfg)
