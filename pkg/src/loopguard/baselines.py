"""Comparison methods consuming the same embeddings: Isolation Forest and PCA.

The forest is the classic ensemble of random binary trees: each tree is
grown on a seeded subsample, splitting on a uniformly chosen varying
dimension at a uniform value strictly inside that dimension's node-local
range, down to depth ceil(log2(subsample)). A point's score is
2^(-E(h)/c(psi)) where E(h) averages (path depth + c(leaf size)) over
trees and c is the expected path length of an unsuccessful BST search.

The PCA baseline fits principal components on (optionally standardized)
training data and scores a vector by the sum of squared differences
between it and its projection onto the retained components, computed in
the same (possibly standardized) space.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingMatrix

EULER_GAMMA = 0.5772156649


def avg_path_c(n: int) -> float:
    """Expected unsuccessful-search path length in a BST of n nodes.

    c(0) = c(1) = 0, c(2) = 1, and for n > 2:
    c(n) = 2*(ln(n-1) + gamma) - 2*(n-1)/n.
    """
    if n < 0:
        raise ValueError(f"n must be nonnegative, got {n}")
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    return 2.0 * (np.log(n - 1.0) + EULER_GAMMA) - 2.0 * (n - 1.0) / n


@dataclass
class ITreeLeaf:
    size: int
    depth: int


@dataclass
class ITreeNode:
    split_dim: int
    split_value: float
    left: "ITreeNode | ITreeLeaf"
    right: "ITreeNode | ITreeLeaf"


@dataclass
class IsolationForestConfig:
    n_trees: int = 100
    subsample_size: int = 256
    seed: int = 0


@dataclass
class IsolationForest:
    """Fitted forest; `subsample_size` is the effective per-tree sample count."""

    trees: list
    n_trees: int
    subsample_size: int
    max_depth: int
    seed: int
    dim: int


def _grow_tree(X: np.ndarray, depth: int, max_depth: int, rng: np.random.Generator):
    n = X.shape[0]
    if depth >= max_depth or n <= 1:
        return ITreeLeaf(size=n, depth=depth)
    mins = X.min(axis=0)
    maxs = X.max(axis=0)
    varying = np.flatnonzero(maxs > mins)
    if varying.size == 0:  # zero-variance node: all rows identical
        return ITreeLeaf(size=n, depth=depth)
    dim = int(varying[rng.integers(varying.size)])
    lo, hi = float(mins[dim]), float(maxs[dim])
    split = rng.uniform(lo, hi)
    for _ in range(8):  # must land strictly inside (lo, hi)
        if lo < split < hi:
            break
        split = rng.uniform(lo, hi)
    else:
        return ITreeLeaf(size=n, depth=depth)
    mask = X[:, dim] < split
    return ITreeNode(
        split_dim=dim,
        split_value=split,
        left=_grow_tree(X[mask], depth + 1, max_depth, rng),
        right=_grow_tree(X[~mask], depth + 1, max_depth, rng),
    )


def fit_iforest(data, cfg: IsolationForestConfig | None = None) -> IsolationForest:
    """Build n_trees trees on seeded subsamples drawn without replacement."""
    cfg = cfg or IsolationForestConfig()
    X = data.data if isinstance(data, EmbeddingMatrix) else np.asarray(data, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        raise ValueError(f"isolation forest needs at least 2 rows, got {n}")
    psi = min(cfg.subsample_size, n)
    max_depth = int(np.ceil(np.log2(psi)))
    trees = []
    for t in range(cfg.n_trees):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((cfg.seed, t))))
        idx = rng.choice(n, size=psi, replace=False) if psi < n else np.arange(n)
        trees.append(_grow_tree(X[idx], 0, max_depth, rng))
    return IsolationForest(
        trees=trees,
        n_trees=cfg.n_trees,
        subsample_size=psi,
        max_depth=max_depth,
        seed=cfg.seed,
        dim=X.shape[1],
    )


def _path_length(node, x: np.ndarray) -> float:
    while isinstance(node, ITreeNode):
        node = node.left if x[node.split_dim] < node.split_value else node.right
    return node.depth + avg_path_c(node.size)


def iforest_score(forest: IsolationForest, x) -> float | np.ndarray:
    """Anomaly score in (0, 1); higher is more anomalous.

    score = 2^(-E(h)/c(psi)) with E(h) the mean over trees of
    (path depth + c(leaf size)).
    """
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.shape[1] != forest.dim:
        raise ValueError(f"input width {arr.shape[1]} != forest dimension {forest.dim}")
    norm = avg_path_c(forest.subsample_size)
    scores = np.empty(arr.shape[0])
    for i, row in enumerate(arr):
        eh = np.mean([_path_length(t, row) for t in forest.trees])
        scores[i] = 2.0 ** (-eh / norm)
    return float(scores[0]) if single else scores


@dataclass
class PcaModel:
    """Components fitted on (optionally standardized) centered training data.

    `mean` is the raw per-dimension training mean; `std` the per-dimension
    training standard deviation when standardizing, else None. Rows of
    `components` are orthonormal.
    """

    mean: np.ndarray
    std: np.ndarray | None
    components: np.ndarray  # (k, d)
    explained_variance: np.ndarray  # (k,)
    n_selected: int


def fit_pca(
    train,
    n_components=None,
    theta_var: float = 0.95,
    standardize: bool = False,
) -> PcaModel:
    """Fit the reconstruction-error model; component count by the selection rule.

    n_components may be None (smallest k whose cumulative explained
    variance ratio reaches `theta_var`), a float in (0, 1) (same rule
    with that fraction as the target) or an integer (exact count).
    """
    X = train.data if isinstance(train, EmbeddingMatrix) else np.asarray(train)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError(f"PCA needs a 2-D matrix with at least 2 rows, got shape {X.shape}")
    n, d = X.shape
    mean = X.mean(axis=0)
    std = None
    if standardize:
        std = X.std(axis=0)
        zero = std == 0.0
        if zero.any():
            warnings.warn(
                f"{int(zero.sum())} dimension(s) have zero training std; using 1.0 for them",
                RuntimeWarning,
                stacklevel=2,
            )
            std = np.where(zero, 1.0, std)
        T = (X - mean) / std
    else:
        T = X - mean

    _, svals, vt = np.linalg.svd(T, full_matrices=False)
    total = float(np.sum(svals**2))
    if total <= 0.0:
        raise ValueError("training data has zero variance; PCA is undefined")
    evr = svals**2 / total
    max_k = min(n - 1, d)

    if n_components is None:
        k = int(np.searchsorted(np.cumsum(evr), theta_var) + 1)
        k = min(k, max_k)
    elif isinstance(n_components, float):
        if not 0.0 < n_components < 1.0:
            raise ValueError(f"float n_components must lie in (0, 1), got {n_components}")
        k = int(np.searchsorted(np.cumsum(evr), n_components) + 1)
        k = min(k, max_k)
    else:
        k = int(n_components)
        if k < 1:
            raise ValueError(f"n_components resolves to {k}; need at least 1 component")
        if k > max_k:
            raise ValueError(f"n_components={k} exceeds min(n-1, d)={max_k}")

    return PcaModel(
        mean=mean,
        std=std,
        components=vt[:k].copy(),
        explained_variance=(svals[:k] ** 2) / max(n - 1, 1),
        n_selected=k,
    )


def pca_recon_error(model: PcaModel, X) -> np.ndarray:
    """Per-row sum of squared differences to the rank-k reconstruction.

    Standardization (when fitted with it), projection, inverse projection
    and the error are all computed in the transformed space.
    """
    arr = X.data if isinstance(X, EmbeddingMatrix) else np.asarray(X)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.shape[1] != model.mean.shape[0]:
        raise ValueError(f"input width {arr.shape[1]} != model width {model.mean.shape[0]}")
    T = (arr - model.mean) / model.std if model.std is not None else arr - model.mean
    Z = T @ model.components.T
    R = Z @ model.components
    return np.sum((T - R) ** 2, axis=1)
