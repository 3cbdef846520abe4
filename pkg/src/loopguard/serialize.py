"""On-disk model formats.

Network parameters are stored as a JSON topology descriptor
(``<name>.model.json``) plus a flat little-endian binary32 payload
(``<name>.model.bin``) holding every parameter array in declaration
order: per block weights (row-major), bias, then gamma, beta,
running_mean, running_var when the block carries batch norm; encoder
blocks before decoder blocks. SVDD models add ``<name>.svdd.json`` with
the center (full decimal precision), latent dimension, training
threshold and the hyperparameters used. Fitted baselines serialize to
JSON, with a binary payload for the PCA matrices.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .baselines import IsolationForest, ITreeLeaf, ITreeNode, PcaModel
from .errors import EmbeddingFormatError
from .models import AutoencoderModel, EncoderSpec
from .nn import BatchNormState, DenseLayer, LayerBlock
from .rng import RNG_ALGORITHM
from .training import Hyperparameters, SvddModel


def _with_ext(path_base: Path, ext: str) -> Path:
    # append, never replace: base names may themselves contain dots
    return path_base.with_name(path_base.name + ext)


def _block_descriptor(block: LayerBlock) -> dict:
    return {
        "in_dim": block.in_dim,
        "out_dim": block.out_dim,
        "elu_alpha": block.elu_alpha,
        "dropout_rate": block.dropout_rate,
        "use_elu": block.use_elu,
        "use_norm": block.norm is not None,
        "norm_momentum": block.norm.momentum if block.norm is not None else None,
        "norm_eps": block.norm.eps if block.norm is not None else None,
    }


def _block_arrays(block: LayerBlock):
    arrays = [block.linear.weights, block.linear.bias]
    if block.norm is not None:
        arrays += [block.norm.gamma, block.norm.beta, block.norm.running_mean, block.norm.running_var]
    return arrays


def _block_from_descriptor(desc: dict, arrays: list) -> LayerBlock:
    weights, bias = arrays[0], arrays[1]
    norm = None
    if desc["use_norm"]:
        norm = BatchNormState(
            gamma=arrays[2],
            beta=arrays[3],
            running_mean=arrays[4],
            running_var=arrays[5],
            momentum=desc["norm_momentum"],
            eps=desc["norm_eps"],
        )
    return LayerBlock(
        linear=DenseLayer(weights=weights, bias=bias),
        norm=norm,
        elu_alpha=desc["elu_alpha"],
        dropout_rate=desc["dropout_rate"],
        use_elu=desc["use_elu"],
    )


def _write_blocks(path_base: Path, topology: dict, block_lists: list) -> None:
    payload = bytearray()
    for blocks in block_lists:
        for block in blocks:
            for arr in _block_arrays(block):
                payload += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    path_base.parent.mkdir(parents=True, exist_ok=True)
    with open(_with_ext(path_base, ".model.json"), "w", encoding="utf-8") as fh:
        json.dump(topology, fh, indent=2, sort_keys=True)
    with open(_with_ext(path_base, ".model.bin"), "wb") as fh:
        fh.write(bytes(payload))


def _read_blocks(path_base: Path, descriptors: list) -> list:
    raw = np.fromfile(_with_ext(path_base, ".model.bin"), dtype="<f4").astype(np.float64)
    blocks = []
    offset = 0

    def take(shape):
        nonlocal offset
        size = int(np.prod(shape))
        if offset + size > raw.size:
            raise EmbeddingFormatError(f"{path_base}: parameter payload is truncated")
        chunk = raw[offset : offset + size].reshape(shape).copy()
        offset += size
        return chunk

    for desc in descriptors:
        din, dout = desc["in_dim"], desc["out_dim"]
        arrays = [take((dout, din)), take((dout,))]
        if desc["use_norm"]:
            arrays += [take((dout,)) for _ in range(4)]
        blocks.append(_block_from_descriptor(desc, arrays))
    if offset != raw.size:
        raise EmbeddingFormatError(f"{path_base}: parameter payload has trailing data")
    return blocks


def _spec_dict(spec: EncoderSpec) -> dict:
    return {
        "dims": list(spec.dims),
        "variant": spec.variant,
        "latent_dropout": spec.latent_dropout,
        "linear_output": spec.linear_output,
        "allow_custom_latent": spec.allow_custom_latent,
        "elu_alpha": spec.elu_alpha,
        "dropout_rate": spec.dropout_rate,
    }


def save_autoencoder(model: AutoencoderModel, path_base) -> None:
    """Write <base>.model.json / <base>.model.bin for the full AE."""
    path_base = Path(path_base)
    topology = {
        "kind": "autoencoder",
        "spec": _spec_dict(model.spec),
        "init_seed": model.init_seed,
        "rng_algorithm": RNG_ALGORITHM,
        "skip_pairs": [list(p) for p in model.skip_pairs],
        "encoder": [_block_descriptor(b) for b in model.encoder],
        "decoder": [_block_descriptor(b) for b in model.decoder],
    }
    _write_blocks(path_base, topology, [model.encoder, model.decoder])


def load_autoencoder(path_base) -> AutoencoderModel:
    path_base = Path(path_base)
    with open(_with_ext(path_base, ".model.json"), "r", encoding="utf-8") as fh:
        topology = json.load(fh)
    spec = EncoderSpec(**topology["spec"])
    blocks = _read_blocks(path_base, topology["encoder"] + topology["decoder"])
    n_enc = len(topology["encoder"])
    return AutoencoderModel(
        spec,
        blocks[:n_enc],
        blocks[n_enc:],
        [tuple(p) for p in topology["skip_pairs"]],
        init_seed=topology["init_seed"],
    )


def save_svdd(model: SvddModel, hp: Hyperparameters, path_base) -> None:
    """Write encoder model files plus <base>.svdd.json with the center and threshold."""
    path_base = Path(path_base)
    topology = {
        "kind": "svdd_encoder",
        "spec": _spec_dict(model.spec),
        "rng_algorithm": RNG_ALGORITHM,
        "encoder": [_block_descriptor(b) for b in model.encoder],
    }
    _write_blocks(path_base, topology, [model.encoder])
    meta = {
        "center": [float(v) for v in model.center],
        "latent_dim": model.spec.latent_dim,
        "training_threshold": model.training_threshold,
        "hyperparameters": asdict(hp),
    }
    with open(_with_ext(path_base, ".svdd.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_svdd(path_base) -> tuple[SvddModel, dict]:
    path_base = Path(path_base)
    with open(_with_ext(path_base, ".model.json"), "r", encoding="utf-8") as fh:
        topology = json.load(fh)
    with open(_with_ext(path_base, ".svdd.json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    spec = EncoderSpec(**topology["spec"])
    encoder = _read_blocks(path_base, topology["encoder"])
    model = SvddModel(
        encoder=encoder,
        center=np.asarray(meta["center"], dtype=np.float64),
        spec=spec,
        training_threshold=meta["training_threshold"],
    )
    return model, meta


def _tree_to_dict(node) -> dict:
    if isinstance(node, ITreeLeaf):
        return {"leaf": True, "size": node.size, "depth": node.depth}
    return {
        "leaf": False,
        "split_dim": node.split_dim,
        "split_value": node.split_value,
        "left": _tree_to_dict(node.left),
        "right": _tree_to_dict(node.right),
    }


def _tree_from_dict(d: dict):
    if d["leaf"]:
        return ITreeLeaf(size=d["size"], depth=d["depth"])
    return ITreeNode(
        split_dim=d["split_dim"],
        split_value=d["split_value"],
        left=_tree_from_dict(d["left"]),
        right=_tree_from_dict(d["right"]),
    )


def save_iforest(forest: IsolationForest, path) -> None:
    doc = {
        "kind": "isolation_forest",
        "n_trees": forest.n_trees,
        "subsample_size": forest.subsample_size,
        "max_depth": forest.max_depth,
        "seed": forest.seed,
        "dim": forest.dim,
        "rng_algorithm": RNG_ALGORITHM,
        "trees": [_tree_to_dict(t) for t in forest.trees],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_iforest(path) -> IsolationForest:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return IsolationForest(
        trees=[_tree_from_dict(t) for t in doc["trees"]],
        n_trees=doc["n_trees"],
        subsample_size=doc["subsample_size"],
        max_depth=doc["max_depth"],
        seed=doc["seed"],
        dim=doc["dim"],
    )


def save_pca(model: PcaModel, path_base) -> None:
    """JSON metadata plus a float64 binary payload for mean/std/components."""
    path_base = Path(path_base)
    arrays = [model.mean, model.std if model.std is not None else np.zeros(0), model.components.ravel()]
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    doc = {
        "kind": "pca_reconstruction",
        "dim": int(model.mean.shape[0]),
        "n_selected": model.n_selected,
        "standardize": model.std is not None,
        "explained_variance": [float(v) for v in model.explained_variance],
    }
    with open(_with_ext(path_base, ".pca.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    with open(_with_ext(path_base, ".pca.bin"), "wb") as fh:
        fh.write(payload)


def load_pca(path_base) -> PcaModel:
    path_base = Path(path_base)
    with open(_with_ext(path_base, ".pca.json"), "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    raw = np.fromfile(_with_ext(path_base, ".pca.bin"), dtype="<f8")
    d, k = doc["dim"], doc["n_selected"]
    std_len = d if doc["standardize"] else 0
    expected = d + std_len + k * d
    if raw.size != expected:
        raise EmbeddingFormatError(f"{path_base}: PCA payload holds {raw.size} values, expected {expected}")
    mean = raw[:d].copy()
    std = raw[d : d + std_len].copy() if std_len else None
    components = raw[d + std_len :].reshape(k, d).copy()
    return PcaModel(
        mean=mean,
        std=std,
        components=components,
        explained_variance=np.asarray(doc["explained_variance"], dtype=np.float64),
        n_selected=k,
    )
