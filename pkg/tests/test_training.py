"""Optimizer steps, schedule, two-phase training, center init and scoring."""

import numpy as np
import pytest

import loopguard.training as training
from loopguard import (
    AdamWState,
    EncoderSpec,
    Hyperparameters,
    SvddModel,
    adamw_step,
    build_model,
    cosine_lr,
    finetune_svdd,
    init_center,
    make_rng,
    pretrain_autoencoder,
    split_dataset,
    svdd_score,
)
from loopguard.errors import NumericError

from conftest import low_rank_data, tiny_spec


def _hp(**kw) -> Hyperparameters:
    base = dict(batch_size=8, max_epochs=30, patience=5, seed=0)
    base.update(kw)
    return Hyperparameters(**base)


class TestAdamW:
    def test_fixed_point(self):
        theta = {"w": np.array([1.0, -2.0])}
        grads = {"w": np.zeros(2)}
        hp = Hyperparameters(weight_decay=0.0)
        adamw_step(theta, grads, AdamWState(), lr=0.1, hp=hp)
        assert np.array_equal(theta["w"], [1.0, -2.0])

    def test_bias_corrected_first_step(self):
        # theta=0, g=1, lr=0.1, defaults: theta' = -0.1/(1+1e-8)
        theta = {"w": np.array([0.0])}
        adamw_step(theta, {"w": np.array([1.0])}, AdamWState(), lr=0.1, hp=Hyperparameters())
        assert theta["w"][0] == pytest.approx(-0.09999999900000009, rel=1e-12)

    def test_decoupled_decay_only(self):
        theta = {"w": np.array([1.0])}
        hp = Hyperparameters(weight_decay=0.1)
        adamw_step(theta, {"w": np.array([0.0])}, AdamWState(), lr=0.1, hp=hp)
        assert theta["w"][0] == pytest.approx(0.99, rel=1e-12)

    def test_nonfinite_gradient_raises(self):
        theta = {"w": np.array([0.0])}
        with pytest.raises(NumericError, match="non-finite"):
            adamw_step(theta, {"w": np.array([np.nan])}, AdamWState(), lr=0.1, hp=Hyperparameters())

    def test_step_counter_shared(self):
        state = AdamWState()
        theta = {"a": np.zeros(1), "b": np.zeros(1)}
        grads = {"a": np.ones(1), "b": np.ones(1)}
        adamw_step(theta, grads, state, lr=0.1, hp=Hyperparameters())
        assert state.t == 1


class TestCosineLr:
    def test_endpoints(self):
        assert cosine_lr(0, 1000, 1e-3, 5e-6) == pytest.approx(1e-3)
        assert cosine_lr(1000, 1000, 1e-3, 5e-6) == pytest.approx(5e-6)

    def test_midpoint(self):
        assert cosine_lr(500, 1000, 1e-3, 5e-6) == pytest.approx(5.025e-4, rel=1e-12)

    def test_monotone_nonincreasing(self):
        vals = [cosine_lr(e, 100, 1e-3, 5e-6) for e in range(101)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_epoch_bounds(self):
        with pytest.raises(ValueError):
            cosine_lr(-1, 10, 1e-3, 5e-6)
        with pytest.raises(ValueError):
            cosine_lr(11, 10, 1e-3, 5e-6)


class TestHyperparameters:
    def test_invalid(self):
        with pytest.raises(ValueError):
            Hyperparameters(batch_size=1)
        with pytest.raises(ValueError):
            Hyperparameters(patience=0)
        with pytest.raises(ValueError):
            Hyperparameters(lr_min=1e-2, lr0=1e-3)


class TestPretrain:
    def test_low_rank_convergence(self):
        X = low_rank_data(160, 128, rank=3, seed=5, noise=0.01)
        split = split_dataset(160, 0.8, seed=0)
        spec = EncoderSpec(dims=(128, 64, 32))
        hp = _hp(batch_size=32, max_epochs=120, patience=25)
        model, history = pretrain_autoencoder(X, split, spec, hp)
        assert min(history.val_loss) < 0.1 * history.val_loss[0]
        assert history.best_epoch == int(np.argmin(history.val_loss))

    def test_early_stop_semantics(self, monkeypatch):
        # constant validation loss with patience 1: exactly 2 epochs run
        monkeypatch.setattr(training, "_validation_mse", lambda model, V: 1.0)
        X = low_rank_data(40, 16, rank=2, seed=6)
        split = split_dataset(40, 0.8, seed=0)
        _, history = pretrain_autoencoder(X, split, tiny_spec("AE"), _hp(patience=1))
        assert len(history.val_loss) == 2

    def test_deterministic(self):
        X = low_rank_data(60, 16, rank=2, seed=7, noise=0.05)
        split = split_dataset(60, 0.8, seed=1)
        hists = [
            pretrain_autoencoder(X, split, tiny_spec("AEwRES"), _hp(max_epochs=8))[1]
            for _ in range(2)
        ]
        assert hists[0].train_loss == hists[1].train_loss
        assert hists[0].val_loss == hists[1].val_loss

    def test_best_epoch_parameters_returned(self):
        X = low_rank_data(60, 16, rank=2, seed=8, noise=0.05)
        split = split_dataset(60, 0.8, seed=1)
        model, history = pretrain_autoencoder(X, split, tiny_spec("AE"), _hp(max_epochs=10))
        recomputed = training._validation_mse(model, X[split.val_indices].astype(np.float64))
        assert recomputed == min(history.val_loss)

    def test_empty_train_split_rejected(self):
        X = low_rank_data(10, 16, rank=2, seed=9)
        split = split_dataset(10, 0.8, seed=0)
        split.train_indices = split.train_indices[:0]
        with pytest.raises(ValueError, match="at least 2"):
            pretrain_autoencoder(X, split, tiny_spec("AE"), _hp())


class TestInitCenter:
    def _encoder(self, seed=0):
        return build_model(tiny_spec("AE"), seed=seed).encoder

    def test_single_sample_is_its_latent(self):
        enc = self._encoder()
        x = make_rng(1).normal(size=(1, 16))
        latent = training.encode_eval(enc, x)[0]
        c = init_center(enc, x, eps_c=0.0)
        assert np.allclose(c, latent, atol=1e-12)

    def test_symmetric_cancellation_clamps_everything(self):
        # two rows with opposite latents: mean 0, every coordinate clamped.
        # an empty block list makes encode the identity, so the rows ARE the latents
        enc = self._encoder()
        x = make_rng(2).normal(size=(1, 16))
        latents = training.encode_eval(enc, x)
        X = np.vstack([latents, -latents])
        c = init_center([], X, eps_c=0.1)
        assert np.all(np.abs(c) == 0.1)

    def test_clamp_rule(self):
        c = init_center([], np.array([[0.03, -0.04, 0.5]] * 2), eps_c=0.1)
        assert np.allclose(c, [0.1, -0.1, 0.5])


class TestFinetune:
    def _setup(self, seed=0, n=120, d=16):
        X = low_rank_data(n, d, rank=3, seed=seed, noise=0.05)
        split = split_dataset(n, 0.8, seed=seed)
        spec = tiny_spec("AE", dims=(d, 8, 4))
        pre, _ = pretrain_autoencoder(X, split, spec, _hp(max_epochs=10, seed=seed))
        return X, split, pre

    def test_validation_improves(self):
        X, split, pre = self._setup()
        model, history = finetune_svdd(pre, X, split, _hp(max_epochs=25, seed=1))
        assert history.val_loss[history.best_epoch] <= history.val_loss[0]

    def test_monitored_quantity_is_mean_val_score(self):
        X, split, pre = self._setup(seed=3)
        model, history = finetune_svdd(pre, X, split, _hp(max_epochs=5, patience=5, seed=3))
        val_scores = svdd_score(model, X[split.val_indices])
        assert float(np.mean(val_scores)) == pytest.approx(min(history.val_loss), rel=1e-12)

    def test_deterministic(self):
        X, split, pre = self._setup(seed=4)
        h1 = finetune_svdd(pre, X, split, _hp(max_epochs=6, seed=4))[1]
        h2 = finetune_svdd(pre, X, split, _hp(max_epochs=6, seed=4))[1]
        assert h1.train_loss == h2.train_loss and h1.val_loss == h2.val_loss

    def test_center_fixed_and_threshold_stored(self):
        X, split, pre = self._setup(seed=5)
        expected_center = init_center(pre.encoder, X[split.train_indices], eps_c=0.1)
        model, _ = finetune_svdd(pre, X, split, _hp(max_epochs=4, seed=5))
        assert np.array_equal(model.center, expected_center)
        train_scores = svdd_score(model, X[split.train_indices])
        assert model.training_threshold == pytest.approx(np.quantile(train_scores, 0.95))

    def test_no_bias_strips_and_freezes(self):
        X, split, pre = self._setup(seed=6)
        model, _ = finetune_svdd(pre, X, split, _hp(max_epochs=4, seed=6), no_bias=True)
        for block in model.encoder:
            assert not block.linear.bias.any()
            assert not block.norm.beta.any()

    def test_collapse_warning(self):
        X, split, pre = self._setup(seed=7)
        # zero the encoder affine outputs: every latent is constant
        for block in pre.encoder:
            block.norm.gamma[...] = 0.0
            block.norm.beta[...] = 0.0
        with pytest.warns(RuntimeWarning, match="collapsed"):
            finetune_svdd(pre, X, split, _hp(max_epochs=3, patience=3, seed=7))


class TestSvddScore:
    def _model(self):
        spec = tiny_spec("AE")
        encoder = build_model(spec, seed=0).encoder
        return SvddModel(encoder=encoder, center=np.zeros(4), spec=spec)

    def test_latent_at_center_scores_zero(self):
        model = self._model()
        x = make_rng(1).normal(size=16)
        model.center = training.encode_eval(model.encoder, x[None, :])[0]
        assert svdd_score(model, x) == pytest.approx(0.0, abs=1e-15)

    def test_unit_offset_scores_one(self):
        model = self._model()
        x = make_rng(2).normal(size=16)
        latent = training.encode_eval(model.encoder, x[None, :])[0]
        model.center = latent + np.array([1.0, 0.0, 0.0, 0.0])
        assert svdd_score(model, x) == pytest.approx(1.0, rel=1e-12)

    def test_batch_matches_brute_force(self):
        model = self._model()
        X = make_rng(3).normal(size=(10, 16))
        scores = svdd_score(model, X)
        latents = training.encode_eval(model.encoder, X)
        brute = [sum((latents[i, j] - model.center[j]) ** 2 for j in range(4)) for i in range(10)]
        assert np.allclose(scores, brute, rtol=1e-12)
        assert np.all(scores >= 0)

    def test_width_mismatch(self):
        with pytest.raises(ValueError, match="width"):
            svdd_score(self._model(), np.zeros(17))
