"""Symmetric autoencoders over embedding vectors: AE and AEwRES.

Both variants share the same block stack: an encoder that narrows the
input width down to a latent width through LayerBlocks, and a decoder
mirroring the widths in reverse. AEwRES additionally adds each encoder
block's output to the decoder block whose input has the same width
(the latent itself is never skipped - adding it to the first decoder
input would just double it). Skips join equal widths only; this is
asserted structurally at build time.

Two structural flags, recorded in serialized topologies:

* ``latent_dropout`` (default off) - whether the encoder's final block
  keeps its dropout stage; off keeps latents deterministic at score time.
* ``linear_output`` (default on) - whether the decoder's final block is
  a bare linear map; an ELU-bounded output cannot reach arbitrarily
  negative embedding coordinates.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import EVAL, LayerBlock, block_backward, block_forward, init_layer_block
from .rng import make_rng

DEFAULT_DIMS = (1024, 512, 256, 128, 64, 32)
STANDARD_LATENT = 32
VARIANTS = ("AE", "AEwRES")


@dataclass
class EncoderSpec:
    """Layer widths (input first, latent last) and architecture variant."""

    dims: tuple[int, ...] = DEFAULT_DIMS
    variant: str = "AEwRES"
    latent_dropout: bool = False
    linear_output: bool = True
    allow_custom_latent: bool = False
    elu_alpha: float = 0.1
    dropout_rate: float = 0.2

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) < 2:
            raise ValueError("encoder needs at least one layer (two widths)")
        if any(a <= b for a, b in zip(self.dims, self.dims[1:])):
            raise ValueError(f"encoder widths must be strictly decreasing, got {self.dims}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.dims[-1] != STANDARD_LATENT and not self.allow_custom_latent:
            raise ValueError(
                f"latent width {self.dims[-1]} != {STANDARD_LATENT}; "
                "set allow_custom_latent=True to override"
            )

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    @property
    def latent_dim(self) -> int:
        return self.dims[-1]


@dataclass
class ModelCache:
    encoder_caches: list
    decoder_caches: list
    encoder_outputs: list  # post-block activations, skip sources for AEwRES


@dataclass
class ModelGrads:
    encoder: list
    decoder: list


class AutoencoderModel:
    """Encoder/decoder block stacks plus the skip-pair table for AEwRES."""

    def __init__(self, spec: EncoderSpec, encoder, decoder, skip_pairs, init_seed: int):
        self.spec = spec
        self.encoder = encoder
        self.decoder = decoder
        self.skip_pairs = skip_pairs  # (encoder block idx -> decoder block idx)
        self.init_seed = init_seed
        for enc_i, dec_j in skip_pairs:
            if encoder[enc_i].out_dim != decoder[dec_j].in_dim:
                raise ValueError(
                    f"skip pair ({enc_i}->{dec_j}) joins widths "
                    f"{encoder[enc_i].out_dim} and {decoder[dec_j].in_dim}"
                )

    def all_blocks(self):
        return self.encoder + self.decoder

    def encode(self, batch, mode=EVAL, rng=None):
        out = np.asarray(batch, dtype=np.float64)
        for block in self.encoder:
            out, _ = block_forward(block, out, mode=mode, rng=rng)
        return out

    def encode_with_caches(self, batch, mode=EVAL, rng=None):
        out = np.asarray(batch, dtype=np.float64)
        caches, outputs = [], []
        for block in self.encoder:
            out, cache = block_forward(block, out, mode=mode, rng=rng)
            caches.append(cache)
            outputs.append(out)
        return out, caches, outputs

    def forward(self, batch, mode=EVAL, rng=None):
        latent, enc_caches, enc_outputs = self.encode_with_caches(batch, mode=mode, rng=rng)
        skip_for = {dec_j: enc_i for enc_i, dec_j in self.skip_pairs}
        out = latent
        dec_caches = []
        for j, block in enumerate(self.decoder):
            if j in skip_for:
                out = out + enc_outputs[skip_for[j]]
            out, cache = block_forward(block, out, mode=mode, rng=rng)
            dec_caches.append(cache)
        return out, ModelCache(enc_caches, dec_caches, enc_outputs)

    def backward(self, cache: ModelCache, grad_out):
        """Backpropagate through decoder, skips and encoder.

        The gradient arriving at a skipped decoder input flows both to
        the previous decoder block and to the matching encoder output,
        where it accumulates with the gradient coming down the encoder
        chain.
        """
        skip_for = {dec_j: enc_i for enc_i, dec_j in self.skip_pairs}
        enc_out_grads = [None] * len(self.encoder)
        dec_grads = [None] * len(self.decoder)
        g = grad_out
        for j in range(len(self.decoder) - 1, -1, -1):
            g, dec_grads[j] = block_backward(self.decoder[j], cache.decoder_caches[j], g)
            if j in skip_for:
                enc_i = skip_for[j]
                enc_out_grads[enc_i] = g.copy()
        enc_grads = [None] * len(self.encoder)
        for i in range(len(self.encoder) - 1, -1, -1):
            if enc_out_grads[i] is not None:
                g = g + enc_out_grads[i]
            g, enc_grads[i] = block_backward(self.encoder[i], cache.encoder_caches[i], g)
        return g, ModelGrads(encoder=enc_grads, decoder=dec_grads)

    def named_parameters(self):
        return nn.named_block_parameters(self.encoder, "enc") + nn.named_block_parameters(
            self.decoder, "dec"
        )

    def named_gradients(self, grads: ModelGrads):
        return nn.named_block_grads(self.encoder, grads.encoder, "enc") + nn.named_block_grads(
            self.decoder, grads.decoder, "dec"
        )

    def clone(self) -> "AutoencoderModel":
        return copy.deepcopy(self)


def build_model(spec: EncoderSpec, seed: int) -> AutoencoderModel:
    """Deterministically initialized AE/AEwRES for the given spec and seed."""
    rng = make_rng(seed)
    dims = spec.dims
    encoder = []
    for i, (din, dout) in enumerate(zip(dims, dims[1:])):
        is_latent = i == len(dims) - 2
        rate = spec.dropout_rate if (not is_latent or spec.latent_dropout) else 0.0
        encoder.append(
            init_layer_block(din, dout, rng, elu_alpha=spec.elu_alpha, dropout_rate=rate)
        )
    rdims = dims[::-1]
    decoder = []
    for j, (din, dout) in enumerate(zip(rdims, rdims[1:])):
        is_output = j == len(rdims) - 2
        if is_output and spec.linear_output:
            decoder.append(
                init_layer_block(din, dout, rng, dropout_rate=0.0, use_norm=False, use_elu=False)
            )
        else:
            decoder.append(
                init_layer_block(din, dout, rng, elu_alpha=spec.elu_alpha, dropout_rate=spec.dropout_rate)
            )

    skip_pairs = []
    if spec.variant == "AEwRES":
        # encoder block i yields width dims[i+1]; pair it with the decoder
        # block consuming that width, skipping the latent width itself
        dec_in_widths = {block.in_dim: j for j, block in enumerate(decoder)}
        for i, block in enumerate(encoder[:-1]):
            skip_pairs.append((i, dec_in_widths[block.out_dim]))
    return AutoencoderModel(spec, encoder, decoder, skip_pairs, init_seed=int(seed))


def encode(model: AutoencoderModel, batch, mode=EVAL, rng=None):
    """Latent representation of a batch; eval mode is deterministic."""
    batch = _check_width(model, batch)
    return model.encode(batch, mode=mode, rng=rng)


def reconstruct(model: AutoencoderModel, batch, mode=EVAL, rng=None):
    """Full encoder->decoder pass (with skip additions for AEwRES)."""
    batch = _check_width(model, batch)
    out, _ = model.forward(batch, mode=mode, rng=rng)
    return out


def mse_loss(recon, target) -> float:
    """Mean over all elements of the squared difference."""
    recon = np.asarray(recon, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if recon.shape != target.shape:
        raise ValueError(f"shape mismatch: {recon.shape} vs {target.shape}")
    return float(np.mean((recon - target) ** 2))


def _check_width(model, batch):
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim == 1:
        batch = batch[None, :]
    if batch.shape[1] != model.spec.input_dim:
        raise ValueError(
            f"batch width {batch.shape[1]} != model input width {model.spec.input_dim}"
        )
    return batch
