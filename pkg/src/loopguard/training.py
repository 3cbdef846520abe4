"""Two-phase training: MSE pretraining, center init, hypersphere fine-tuning.

Phase 1 trains the full autoencoder on reconstruction MSE. Phase 2
discards the decoder, fixes the hypersphere center c at the mean of the
pretrained encoder's outputs over the training rows (with a collapse
guard clamping near-zero coordinates), and minimizes the mean squared
distance of train latents to c. Both phases share the AdamW optimizer,
the cosine-annealed learning rate and patience-based early stopping on
the validation loss; the returned parameters are the best-validation
snapshot. The anomaly score of a sample is the squared Euclidean
distance of its eval-mode latent to c.
"""

from __future__ import annotations

import copy
import warnings
from dataclasses import dataclass, field

import numpy as np

from .embeddings import DatasetSplit, EmbeddingMatrix
from .errors import NumericError, TrainingDiverged
from .evaluation import percentile_threshold
from .models import AutoencoderModel, EncoderSpec, build_model
from .nn import (
    EVAL,
    TRAIN,
    block_backward,
    block_forward,
    block_grads_to_flat,
    flatten_block_params,
    named_block_parameters,
)
from .rng import make_rng

COLLAPSE_VARIANCE_FLOOR = 1e-8


@dataclass
class Hyperparameters:
    lr0: float = 1e-3
    weight_decay: float = 1e-5
    lr_min: float = 5e-6
    batch_size: int = 32
    max_epochs: int = 1000
    patience: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.lr_min <= self.lr0:
            raise ValueError(f"need 0 < lr_min <= lr0, got lr_min={self.lr_min}, lr0={self.lr0}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")


@dataclass
class AdamWState:
    """First/second moments per parameter name plus the shared step counter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = -1

    def append(self, train_loss: float, val_loss: float, lr: float):
        self.train_loss.append(float(train_loss))
        self.val_loss.append(float(val_loss))
        self.lr.append(float(lr))


@dataclass
class SvddModel:
    """Trained encoder plus the fixed hypersphere center."""

    encoder: list
    center: np.ndarray
    spec: EncoderSpec
    training_threshold: float | None = None

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        if not np.isfinite(self.center).all():
            raise NumericError("hypersphere center contains non-finite values")
        if self.center.shape != (self.spec.latent_dim,):
            raise ValueError(
                f"center has shape {self.center.shape}, expected ({self.spec.latent_dim},)"
            )


def adamw_step(params: dict, grads: dict, state: AdamWState, lr: float, hp: Hyperparameters) -> AdamWState:
    """One decoupled-decay update, in place on the parameter arrays.

    m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2;  bias-corrected mhat, vhat;
    theta <- theta - lr * (mhat / (sqrt(vhat) + eps) + weight_decay * theta).

    The steps are fused into in-place array operations (the update runs
    once per mini-batch over every parameter, so it is bandwidth-bound);
    the decay is applied as theta *= 1 - lr*wd, algebraically the same
    decoupled term.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    state.t += 1
    bc1 = 1.0 - hp.beta1**state.t
    bc2 = 1.0 - hp.beta2**state.t
    for name, theta in params.items():
        g = grads[name]
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        m = state.m[name]
        v = state.v[name]
        np.multiply(m, hp.beta1, out=m)
        m += (1.0 - hp.beta1) * g
        np.multiply(v, hp.beta2, out=v)
        g2 = np.multiply(g, g, out=np.empty_like(g))
        g2 *= 1.0 - hp.beta2
        v += g2
        denom = np.multiply(v, 1.0 / bc2, out=g2)  # reuse the scratch buffer
        np.sqrt(denom, out=denom)
        denom += hp.adam_eps
        denom *= bc1
        update = np.divide(m, denom, out=denom)
        theta *= 1.0 - lr * hp.weight_decay
        update *= lr
        theta -= update
    return state


def cosine_lr(epoch: int, max_epochs: int, lr0: float, lr_min: float) -> float:
    """lr_min + 0.5*(lr0-lr_min)*(1+cos(pi*epoch/max_epochs))."""
    if not 0 <= epoch <= max_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {max_epochs}]")
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + np.cos(np.pi * epoch / max_epochs))


class _FlatAdamW:
    """AdamW over one contiguous parameter buffer.

    Same update as `adamw_step`, fused into a handful of large in-place
    array operations; the optimizer runs once per mini-batch over every
    parameter, so it is memory-bound and benefits from the layout.
    `keep_mask` (0/1 per entry) freezes parameters: their gradients are
    masked and the decoupled decay skips them.
    """

    def __init__(self, theta: np.ndarray, hp: Hyperparameters, keep_mask=None):
        self.theta = theta
        self.hp = hp
        self.m = np.zeros_like(theta)
        self.v = np.zeros_like(theta)
        self.scratch = np.empty_like(theta)
        self.keep_mask = None if keep_mask is None else keep_mask.astype(theta.dtype)
        self.t = 0

    def step(self, grad: np.ndarray, lr: float) -> None:
        if not np.isfinite(grad).all():
            raise NumericError("non-finite gradient in optimizer step")
        hp = self.hp
        self.t += 1
        bc1 = 1.0 - hp.beta1**self.t
        bc2 = 1.0 - hp.beta2**self.t
        if self.keep_mask is not None:
            np.multiply(grad, self.keep_mask, out=grad)
        m, v, s = self.m, self.v, self.scratch
        np.multiply(m, hp.beta1, out=m)
        np.multiply(grad, 1.0 - hp.beta1, out=s)
        m += s
        np.multiply(v, hp.beta2, out=v)
        np.multiply(grad, grad, out=s)
        s *= 1.0 - hp.beta2
        v += s
        np.multiply(v, 1.0 / bc2, out=s)
        np.sqrt(s, out=s)
        s += hp.adam_eps
        s *= bc1
        np.divide(m, s, out=s)  # = mhat / (sqrt(vhat) + eps)
        s *= lr
        if self.keep_mask is None:
            self.theta *= 1.0 - lr * hp.weight_decay
        else:
            decay = 1.0 - (lr * hp.weight_decay) * self.keep_mask
            self.theta *= decay
        self.theta -= s


def _as_array(data, dtype=np.float64) -> np.ndarray:
    if isinstance(data, EmbeddingMatrix):
        data = data.data
    return np.asarray(data, dtype=dtype)


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    """Seeded shuffle cut into batches; a trailing single row merges into the previous batch."""
    order = rng.permutation(n)
    batches = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def _forward_blocks(blocks, batch, mode, rng=None):
    out = batch
    caches = []
    for block in blocks:
        out, cache = block_forward(block, out, mode=mode, rng=rng)
        caches.append(cache)
    return out, caches


def encode_eval(encoder: list, X) -> np.ndarray:
    """Deterministic eval-mode latents for a 2-D batch."""
    out, _ = _forward_blocks(encoder, np.asarray(X, dtype=np.float64), EVAL)
    return out


def _validation_mse(model: AutoencoderModel, V: np.ndarray) -> float:
    # cast through the model dtype first, accumulate in float64, so the
    # recorded value is identical however the caller's copy is typed
    V = np.asarray(V, dtype=model.encoder[0].linear.weights.dtype)
    recon, _ = model.forward(V, mode=EVAL)
    return float(np.mean((recon.astype(np.float64) - V.astype(np.float64)) ** 2))


def _running_stats(blocks):
    return [
        (b.norm.running_mean.copy(), b.norm.running_var.copy()) for b in blocks if b.norm is not None
    ]


def _restore_flat(theta: np.ndarray, blocks, snapshot) -> None:
    saved_theta, running = snapshot
    theta[...] = saved_theta  # block parameter views share this buffer
    it = iter(running)
    for b in blocks:
        if b.norm is not None:
            rm, rv = next(it)
            b.norm.running_mean = rm.copy()
            b.norm.running_var = rv.copy()


def _early_stopping_loop(train_one_epoch, validate, snapshot, restore, hp: Hyperparameters):
    """Shared epoch loop: cosine schedule, best-checkpoint tracking, patience stop."""
    history = TrainHistory()
    best_val = np.inf
    best_snapshot = None
    since_best = 0
    for epoch in range(hp.max_epochs):
        lr = cosine_lr(epoch, hp.max_epochs, hp.lr0, hp.lr_min)
        try:
            train_loss = train_one_epoch(lr)
        except NumericError as exc:
            raise TrainingDiverged(f"epoch {epoch}: {exc}", history=history) from exc
        if not np.isfinite(train_loss):
            raise TrainingDiverged(f"epoch {epoch}: training loss is {train_loss}", history=history)
        val_loss = validate()
        history.append(train_loss, val_loss, lr)
        if val_loss < best_val:
            best_val = val_loss
            history.best_epoch = epoch
            best_snapshot = snapshot()
            since_best = 0
        else:
            since_best += 1
            if since_best >= hp.patience:
                break
    restore(best_snapshot)
    return history


def pretrain_autoencoder(
    data, split: DatasetSplit, spec: EncoderSpec, hp: Hyperparameters, dtype=np.float32
) -> tuple[AutoencoderModel, TrainHistory]:
    """Phase 1: reconstruction-MSE training of the autoencoder.

    Training runs in float32 by default (the embeddings' native width);
    pass dtype=np.float64 for double precision.
    """
    X = _as_array(data, dtype)
    Xtr = X[split.train_indices]
    Xval = X[split.val_indices]
    if Xtr.shape[0] < 2:
        raise ValueError(f"training split needs at least 2 rows, got {Xtr.shape[0]}")
    if Xtr.shape[1] != spec.input_dim:
        raise ValueError(f"data width {Xtr.shape[1]} != spec input width {spec.input_dim}")

    model = build_model(spec, seed=hp.seed)
    theta, _ = flatten_block_params(model.all_blocks(), dtype=dtype)
    rng = make_rng(hp.seed, stream=1)
    opt = _FlatAdamW(theta, hp)
    flat_grad = np.empty_like(theta)
    blocks = model.all_blocks()

    def train_one_epoch(lr):
        total_se, total_n = 0.0, 0
        for idx in _epoch_batches(Xtr.shape[0], hp.batch_size, rng):
            batch = Xtr[idx]
            recon, cache = model.forward(batch, mode=TRAIN, rng=rng)
            diff = recon - batch
            loss = float(np.mean(diff**2))
            _, grads = model.backward(cache, 2.0 * diff / diff.size)
            opt.step(block_grads_to_flat(blocks, grads.encoder + grads.decoder, flat_grad), lr)
            total_se += loss * batch.shape[0]
            total_n += batch.shape[0]
        return total_se / total_n

    history = _early_stopping_loop(
        train_one_epoch,
        validate=lambda: _validation_mse(model, Xval),
        snapshot=lambda: (theta.copy(), _running_stats(blocks)),
        restore=lambda snap: _restore_flat(theta, blocks, snap),
        hp=hp,
    )
    return model, history


def init_center(encoder, train_data, eps_c: float = 0.1) -> np.ndarray:
    """Mean of eval-mode latents over training rows, near-zero coordinates clamped to +-eps_c.

    The returned center is float64 regardless of the encoder dtype.
    """
    blocks = encoder.encoder if isinstance(encoder, AutoencoderModel) else encoder
    X = _as_array(train_data, blocks[0].linear.weights.dtype if blocks else np.float64)
    latents = encode_eval(blocks, X)
    if not np.isfinite(latents).all():
        raise NumericError("encoder produced non-finite latents during center initialization")
    c = latents.mean(axis=0).astype(np.float64)
    if eps_c > 0:
        small = np.abs(c) < eps_c
        c = np.where(small, np.copysign(eps_c, c), c)
    return c


def finetune_svdd(
    pretrained: AutoencoderModel,
    data,
    split: DatasetSplit,
    hp: Hyperparameters,
    eps_c: float = 0.1,
    no_bias: bool = False,
    threshold_q: float = 0.95,
    dtype=np.float32,
) -> tuple[SvddModel, TrainHistory]:
    """Phase 2: discard the decoder, fix c, minimize mean squared distance to it.

    The weight-decay regularizer is realized by AdamW's decoupled decay.
    `no_bias` strips linear biases and batch-norm beta from the encoder,
    freezing them at zero, a standard collapse safeguard. Validation
    monitors the mean anomaly score (eval-mode squared distance) of the
    validation rows.
    """
    X = _as_array(data, dtype)
    Xtr = X[split.train_indices]
    Xval = X[split.val_indices]
    if Xtr.shape[0] < 2:
        raise ValueError(f"training split needs at least 2 rows, got {Xtr.shape[0]}")

    encoder = copy.deepcopy(pretrained.encoder)
    if no_bias:
        for block in encoder:
            block.linear.bias[...] = 0.0
            if block.norm is not None:
                block.norm.beta[...] = 0.0

    theta, spans = flatten_block_params(encoder, dtype=dtype)
    keep_mask = None
    if no_bias:
        keep_mask = np.ones_like(theta)
        for (offset, size, _), (name, _) in zip(spans, named_block_parameters(encoder, "enc")):
            if name.endswith(".bias") or name.endswith(".beta"):
                keep_mask[offset : offset + size] = 0.0

    center = init_center(encoder, Xtr, eps_c=eps_c)
    center_t = center.astype(dtype)  # training-dtype copy for the hot loop

    rng = make_rng(hp.seed, stream=2)
    opt = _FlatAdamW(theta, hp, keep_mask=keep_mask)
    flat_grad = np.empty_like(theta)
    collapse_warned = False

    def train_one_epoch(lr):
        total, total_n = 0.0, 0
        for idx in _epoch_batches(Xtr.shape[0], hp.batch_size, rng):
            batch = Xtr[idx]
            latent, caches = _forward_blocks(encoder, batch, TRAIN, rng=rng)
            diff = latent - center_t
            loss = float(np.mean(np.sum(diff**2, axis=1)))
            grads = _encoder_raw_backward(encoder, caches, 2.0 * diff / batch.shape[0])
            opt.step(block_grads_to_flat(encoder, grads, flat_grad), lr)
            total += loss * batch.shape[0]
            total_n += batch.shape[0]
        return total / total_n

    def validate():
        nonlocal collapse_warned
        latents = encode_eval(encoder, Xval)
        variance = float(latents.var(axis=0).sum())
        if variance < COLLAPSE_VARIANCE_FLOOR and not collapse_warned:
            warnings.warn(
                f"latent variance collapsed to {variance:.3e} "
                f"(< {COLLAPSE_VARIANCE_FLOOR:g}); all latents map near the center. "
                "Consider no_bias=True or a larger eps_c.",
                RuntimeWarning,
                stacklevel=2,
            )
            collapse_warned = True
        return float(np.mean(np.sum((latents - center) ** 2, axis=1)))

    history = _early_stopping_loop(
        train_one_epoch,
        validate=validate,
        snapshot=lambda: (theta.copy(), _running_stats(encoder)),
        restore=lambda snap: _restore_flat(theta, encoder, snap),
        hp=hp,
    )

    model = SvddModel(encoder=encoder, center=center, spec=pretrained.spec)
    train_scores = svdd_score(model, Xtr)
    model.training_threshold = percentile_threshold(train_scores, threshold_q)
    return model, history


def svdd_score(model: SvddModel, x) -> float | np.ndarray:
    """Squared Euclidean distance of the eval-mode latent(s) to the center.

    Accepts a single embedding vector (returns a float) or a 2-D batch
    (returns one score per row).
    """
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.shape[1] != model.spec.input_dim:
        raise ValueError(f"input width {arr.shape[1]} != model input width {model.spec.input_dim}")
    latents = encode_eval(model.encoder, arr)
    scores = np.sum((latents - model.center) ** 2, axis=1)
    return float(scores[0]) if single else scores


def _encoder_raw_backward(blocks, caches, grad_out):
    grads = [None] * len(blocks)
    g = grad_out
    for i in range(len(blocks) - 1, -1, -1):
        g, grads[i] = block_backward(blocks[i], caches[i], g)
    return grads
