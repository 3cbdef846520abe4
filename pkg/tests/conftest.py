"""Shared fixtures: synthetic datasets and small model specs."""

from __future__ import annotations

import numpy as np
import pytest

from loopguard import EncoderSpec, make_rng


def tiny_spec(variant="AE", dims=(16, 8, 4), **kw) -> EncoderSpec:
    return EncoderSpec(dims=dims, variant=variant, allow_custom_latent=True, **kw)


def low_rank_data(n: int, d: int, rank: int, seed: int, noise: float = 0.0) -> np.ndarray:
    """Rows in a random rank-`rank` subspace plus optional isotropic noise."""
    rng = make_rng(seed, stream=11)
    basis = rng.normal(size=(rank, d))
    coeffs = rng.normal(size=(n, rank))
    X = coeffs @ basis
    if noise > 0:
        X = X + noise * rng.normal(size=(n, d))
    return X


def separation_fixture(
    seed: int = 7,
    n_normal: int = 800,
    n_anom: int = 40,
    dim: int = 1024,
    rank: int = 8,
    ambient: float = 0.05,
):
    """Synthetic embeddings: Gaussian (sigma=0.5) variation structured along
    `rank` fixed random directions around a fixed random mean, plus a small
    ambient noise floor; anomalies have their mean shifted by 5 sigma along
    8 random coordinates.

    Returns (X float32, labels) with labels 1 for the anomalies.
    """
    rng = make_rng(seed, stream=23)
    sigma = 0.5
    mu = rng.normal(size=dim)
    directions = np.linalg.qr(rng.normal(size=(dim, rank)))[0].T

    def draw(n):
        structured = sigma * rng.normal(size=(n, rank)) @ directions
        return mu + structured + ambient * rng.normal(size=(n, dim))

    normal = draw(n_normal)
    shift_coords = rng.choice(dim, size=8, replace=False)
    anom = draw(n_anom)
    anom[:, shift_coords] += 5.0 * sigma
    X = np.concatenate([normal, anom]).astype(np.float32)
    labels = np.concatenate([np.zeros(n_normal, dtype=int), np.ones(n_anom, dtype=int)])
    return X, labels


@pytest.fixture
def rng():
    return make_rng(1234)
