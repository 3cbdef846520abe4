"""Seeded random number generation.

Every stochastic choice in the toolkit (weight init, dropout masks,
shuffles, subsampling) draws from a numpy PCG64 generator constructed
here, so a seed fully determines a run. The algorithm name is recorded
in config echoes and stage manifests.
"""

from __future__ import annotations

import numpy as np

RNG_ALGORITHM = "pcg64"


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """PCG64 generator for (seed, stream); distinct streams are independent."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((int(seed), int(stream)))))
