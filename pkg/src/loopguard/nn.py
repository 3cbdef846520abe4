"""Dense network substrate: Linear -> BatchNorm -> ELU -> Dropout blocks.

Forward and backward passes are written out analytically (no autodiff),
with a central finite-difference checker (`grad_check`) as the
independent referee. Conventions:

* batches are row-major ``(B, dim)`` arrays, float64 internally;
* batch normalization uses the biased variance (divide by B) when
  normalizing and the unbiased estimator when updating running stats,
  with ``running <- (1 - momentum) * running + momentum * batch``;
* dropout is inverted (mask scaled by ``1/(1-rate)`` at train time) so
  eval needs no rescaling;
* eval mode is a pure function of parameters, running stats and input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import make_rng

TRAIN = "train"
EVAL = "eval"


def elu(x, alpha: float = 0.1):
    """x for x > 0, alpha*(exp(x)-1) otherwise; continuous at 0."""
    if alpha <= 0:
        raise ValueError(f"elu alpha must be positive, got {alpha}")
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x > 0, x, alpha * np.expm1(np.minimum(x, 0.0)))
    return float(out) if out.ndim == 0 else out


@dataclass
class DenseLayer:
    """Affine map y = x @ W.T + b with W of shape (out_dim, in_dim)."""

    weights: np.ndarray
    bias: np.ndarray

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5


@dataclass
class LayerBlock:
    """One network block; `norm`/`use_elu`/`dropout_rate` toggle the stages.

    The canonical block is Linear -> BatchNorm -> ELU -> Dropout. Encoder
    latent blocks drop the dropout stage and decoder output blocks may be
    reduced to the bare linear map (see models.build_model).
    """

    linear: DenseLayer
    norm: BatchNormState | None
    elu_alpha: float = 0.1
    dropout_rate: float = 0.2
    use_elu: bool = True

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {self.dropout_rate}")
        if self.norm is not None and self.norm.gamma.shape[0] != self.linear.out_dim:
            raise ValueError("batch-norm width does not match linear output width")

    @property
    def in_dim(self) -> int:
        return self.linear.in_dim

    @property
    def out_dim(self) -> int:
        return self.linear.out_dim


def init_layer_block(
    in_dim: int,
    out_dim: int,
    rng: np.random.Generator,
    elu_alpha: float = 0.1,
    dropout_rate: float = 0.2,
    use_norm: bool = True,
    use_elu: bool = True,
) -> LayerBlock:
    """Glorot-uniform weights, zero bias, identity batch-norm affine."""
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    weights = rng.uniform(-limit, limit, size=(out_dim, in_dim))
    layer = DenseLayer(weights=weights, bias=np.zeros(out_dim))
    norm = None
    if use_norm:
        norm = BatchNormState(
            gamma=np.ones(out_dim),
            beta=np.zeros(out_dim),
            running_mean=np.zeros(out_dim),
            running_var=np.ones(out_dim),
        )
    return LayerBlock(
        linear=layer,
        norm=norm,
        elu_alpha=elu_alpha,
        dropout_rate=dropout_rate,
        use_elu=use_elu,
    )


@dataclass
class BlockCache:
    """Everything block_backward needs, captured during the forward pass."""

    mode: str
    x: np.ndarray
    xhat: np.ndarray | None  # normalized pre-affine activations
    inv_std: np.ndarray | None  # 1/sqrt(var + eps) used in normalization
    elu_pos: np.ndarray | None  # positive-branch mask of the ELU input
    elu_out: np.ndarray | None  # ELU output (pre-dropout); elu' = elu + alpha on the negative branch
    drop_mask: np.ndarray | None  # inverted-dropout mask incl. 1/(1-rate)


@dataclass
class BlockGrads:
    weights: np.ndarray
    bias: np.ndarray
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None


def block_forward(
    block: LayerBlock,
    batch: np.ndarray,
    mode: str = EVAL,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, BlockCache]:
    """Run the block; train mode needs B >= 2 (batch statistics) and an rng if dropout is on."""
    x = np.asarray(batch, dtype=block.linear.weights.dtype)
    if x.ndim != 2:
        raise ValueError(f"batch must be 2-D, got shape {x.shape}")
    if x.shape[1] != block.in_dim:
        raise ValueError(f"batch width {x.shape[1]} != block input width {block.in_dim}")
    if mode not in (TRAIN, EVAL):
        raise ValueError(f"mode must be '{TRAIN}' or '{EVAL}', got {mode!r}")
    train = mode == TRAIN
    B = x.shape[0]
    if train and B < 2:
        raise ValueError("train mode needs a batch of at least 2 rows for batch statistics")

    out = x @ block.linear.weights.T + block.linear.bias

    xhat = inv_std = None
    if block.norm is not None:
        nrm = block.norm
        if train:
            mean = out.mean(axis=0)
            out -= mean  # fresh array from the matmul, safe to center in place
            var = np.einsum("ij,ij->j", out, out) / B  # biased, used for normalization
            inv_std = 1.0 / np.sqrt(var + nrm.eps)
            xhat = np.multiply(out, inv_std, out=out)
            var_unbiased = var * B / (B - 1)
            nrm.running_mean = (1.0 - nrm.momentum) * nrm.running_mean + nrm.momentum * mean
            nrm.running_var = (1.0 - nrm.momentum) * nrm.running_var + nrm.momentum * var_unbiased
        else:
            inv_std = 1.0 / np.sqrt(nrm.running_var + nrm.eps)
            out -= nrm.running_mean
            xhat = np.multiply(out, inv_std, out=out)
        out = nrm.gamma * xhat + nrm.beta

    elu_pos = elu_out = None
    if block.use_elu:
        elu_pos = out > 0
        out = np.where(elu_pos, out, block.elu_alpha * np.expm1(np.minimum(out, 0.0)))
        elu_out = out

    drop_mask = None
    if train and block.dropout_rate > 0.0:
        if rng is None:
            raise ValueError("train-mode dropout requires an rng")
        keep = rng.random(out.shape) >= block.dropout_rate
        drop_mask = keep.astype(out.dtype) / (1.0 - block.dropout_rate)
        out = out * drop_mask

    return out, BlockCache(
        mode=mode, x=x, xhat=xhat, inv_std=inv_std, elu_pos=elu_pos, elu_out=elu_out, drop_mask=drop_mask
    )


def block_backward(
    block: LayerBlock, cache: BlockCache, grad_out: np.ndarray
) -> tuple[np.ndarray, BlockGrads]:
    """Exact gradients through dropout, ELU, batch norm and the linear map.

    Train-mode batch norm includes the batch-statistics terms:

        dx = (gamma * inv_std / B) * (B*dy - sum(dy) - xhat * sum(dy * xhat))

    Eval mode treats running statistics as constants.
    """
    g = np.asarray(grad_out, dtype=block.linear.weights.dtype)
    B = cache.x.shape[0]
    if g.shape != (B, block.out_dim):
        raise ValueError(f"grad_out shape {g.shape} does not match forward output ({B}, {block.out_dim})")

    if cache.drop_mask is not None:
        g = g * cache.drop_mask
    if block.use_elu:
        # elu'(z) = 1 on the positive branch, alpha*exp(z) = elu(z) + alpha otherwise
        g = g * np.where(cache.elu_pos, 1.0, cache.elu_out + block.elu_alpha)

    dgamma = dbeta = None
    if block.norm is not None:
        nrm = block.norm
        dgamma = np.einsum("ij,ij->j", g, cache.xhat)
        dbeta = g.sum(axis=0)
        if cache.mode == TRAIN:
            g = (nrm.gamma * cache.inv_std / B) * (B * g - dbeta - cache.xhat * dgamma)
        else:
            g = g * (nrm.gamma * cache.inv_std)

    dweights = g.T @ cache.x
    dbias = g.sum(axis=0)
    grad_in = g @ block.linear.weights
    return grad_in, BlockGrads(weights=dweights, bias=dbias, gamma=dgamma, beta=dbeta)


class Sequential:
    """Plain chain of LayerBlocks exposing the forward/backward protocol grad_check uses."""

    def __init__(self, blocks: list[LayerBlock]):
        self.blocks = list(blocks)

    def forward(self, batch, mode=EVAL, rng=None):
        out = np.asarray(batch, dtype=np.float64)
        caches = []
        for block in self.blocks:
            out, cache = block_forward(block, out, mode=mode, rng=rng)
            caches.append(cache)
        return out, caches

    def backward(self, caches, grad_out):
        grads = [None] * len(self.blocks)
        g = grad_out
        for i in range(len(self.blocks) - 1, -1, -1):
            g, grads[i] = block_backward(self.blocks[i], caches[i], g)
        return g, grads

    def named_parameters(self):
        return named_block_parameters(self.blocks, prefix="block")

    def named_gradients(self, grads):
        return named_block_grads(self.blocks, grads, prefix="block")


def named_block_parameters(blocks, prefix: str):
    """Stable (name, array) pairs in declaration order: weights, bias, gamma, beta."""
    params = []
    for i, block in enumerate(blocks):
        params.append((f"{prefix}{i}.weights", block.linear.weights))
        params.append((f"{prefix}{i}.bias", block.linear.bias))
        if block.norm is not None:
            params.append((f"{prefix}{i}.gamma", block.norm.gamma))
            params.append((f"{prefix}{i}.beta", block.norm.beta))
    return params


def named_block_grads(blocks, grads, prefix: str):
    out = []
    for i, (block, bg) in enumerate(zip(blocks, grads)):
        out.append((f"{prefix}{i}.weights", bg.weights))
        out.append((f"{prefix}{i}.bias", bg.bias))
        if block.norm is not None:
            out.append((f"{prefix}{i}.gamma", bg.gamma))
            out.append((f"{prefix}{i}.beta", bg.beta))
    return out


def _param_slots(block: LayerBlock):
    slots = [(block.linear, "weights"), (block.linear, "bias")]
    if block.norm is not None:
        slots += [(block.norm, "gamma"), (block.norm, "beta")]
    return slots


def flatten_block_params(blocks, dtype=np.float64):
    """Move all block parameters into one contiguous buffer.

    Each parameter array is replaced by a view into the returned flat
    buffer (same values, possibly cast), so the optimizer can update
    every parameter with a handful of large fused array operations
    instead of hundreds of small ones. Returns (flat, spans) with spans
    in declaration order: (offset, size, shape) per parameter.
    """
    slots = [s for b in blocks for s in _param_slots(b)]
    total = sum(getattr(o, a).size for o, a in slots)
    flat = np.empty(total, dtype=dtype)
    spans = []
    offset = 0
    for obj, attr in slots:
        arr = getattr(obj, attr)
        size = arr.size
        flat[offset : offset + size] = arr.ravel()
        setattr(obj, attr, flat[offset : offset + size].reshape(arr.shape))
        spans.append((offset, size, arr.shape))
        offset += size
    return flat, spans


def block_grads_to_flat(blocks, grads, out: np.ndarray) -> np.ndarray:
    """Pack per-block gradients into a flat buffer, matching flatten order."""
    offset = 0
    for block, bg in zip(blocks, grads):
        arrays = [bg.weights, bg.bias]
        if block.norm is not None:
            arrays += [bg.gamma, bg.beta]
        for arr in arrays:
            out[offset : offset + arr.size] = arr.ravel()
            offset += arr.size
    return out


def _loss_and_grad(loss: str, out: np.ndarray, batch: np.ndarray, target, center):
    if loss == "mse":
        ref = np.zeros_like(out) if target is None else np.asarray(target, dtype=np.float64)
        if ref.shape != out.shape:
            raise ValueError(f"mse target shape {ref.shape} != output shape {out.shape}")
        diff = out - ref
        return float(np.mean(diff**2)), 2.0 * diff / diff.size
    if loss == "svdd":
        if center is None:
            raise ValueError("svdd loss needs a center vector")
        c = np.asarray(center, dtype=np.float64)
        diff = out - c
        return float(np.mean(np.sum(diff**2, axis=1))), 2.0 * diff / out.shape[0]
    raise ValueError(f"unknown loss tag {loss!r}")


def grad_check(
    network,
    loss: str,
    batch: np.ndarray,
    eps: float = 1e-5,
    mode: str = TRAIN,
    rng_seed: int = 0,
    max_params_per_array: int = 24,
    target=None,
    center=None,
    abs_tol: float | None = None,
) -> float:
    """Worst relative error of analytic gradients vs central finite differences.

    `network` is a list of LayerBlocks or any object with the
    forward/backward/named_parameters protocol (e.g. an autoencoder
    model, whose skip connections take part in both passes). The rng is
    re-seeded for every forward evaluation so dropout masks are frozen
    across the perturbed evaluations. A seeded subset of entries per
    parameter array is probed.

    The finite difference is the reference: error per entry is
    |a - n| / max(|n|, abs_tol), and differences at or below `abs_tol`
    count as exact. `abs_tol` defaults to 1e-7 * max(1, |loss|), the
    resolution limit of the difference quotient itself - some true
    gradients are exactly zero (e.g. linear biases under batch norm,
    which removes the batch mean) and the quotient then reads only
    float cancellation noise of order |loss| * macheps / eps.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-6, 1e-3], got {eps}")
    if isinstance(network, (list, tuple)):
        network = Sequential(list(network))
    params = network.named_parameters()
    if not params:
        return 0.0
    batch = np.asarray(batch, dtype=np.float64)

    # train-mode forwards update running stats; they do not enter the
    # train-mode loss, but restore them so the check leaves no trace
    norm_snapshot = [
        (blk.norm, blk.norm.running_mean.copy(), blk.norm.running_var.copy())
        for blk in _blocks_of(network)
        if blk.norm is not None
    ]

    def run_forward():
        return network.forward(batch, mode=mode, rng=make_rng(rng_seed))

    out, caches = run_forward()
    loss0, dout = _loss_and_grad(loss, out, batch, target, center)
    if not np.isfinite(loss0):
        raise ValueError("loss is non-finite at the evaluation point")
    _, grads = network.backward(caches, dout)
    analytic = dict(network.named_gradients(grads))
    if abs_tol is None:
        abs_tol = 1e-7 * max(1.0, abs(loss0))

    picker = make_rng(rng_seed, stream=1)
    worst = 0.0
    for name, arr in params:
        flat = arr.reshape(-1)
        n_entries = flat.size
        if n_entries <= max_params_per_array:
            idxs = np.arange(n_entries)
        else:
            idxs = picker.choice(n_entries, size=max_params_per_array, replace=False)
        gflat = analytic[name].reshape(-1)
        for j in idxs:
            orig = flat[j]
            flat[j] = orig + eps
            out_p, _ = run_forward()
            lp, _ = _loss_and_grad(loss, out_p, batch, target, center)
            flat[j] = orig - eps
            out_m, _ = run_forward()
            lm, _ = _loss_and_grad(loss, out_m, batch, target, center)
            flat[j] = orig
            numeric = (lp - lm) / (2.0 * eps)
            a = gflat[j]
            diff = abs(a - numeric)
            if diff > abs_tol:
                worst = max(worst, diff / max(abs(numeric), abs_tol))

    for nrm, rm, rv in norm_snapshot:
        nrm.running_mean = rm
        nrm.running_var = rv
    return worst


def _blocks_of(network) -> list[LayerBlock]:
    if isinstance(network, Sequential):
        return network.blocks
    if hasattr(network, "all_blocks"):
        return list(network.all_blocks())
    return []
