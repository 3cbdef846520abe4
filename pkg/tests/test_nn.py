"""Network block math: ELU, batch norm, dropout, backward passes, grad_check."""

import numpy as np
import pytest

from loopguard import LayerBlock, Sequential, elu, grad_check, init_layer_block, make_rng
from loopguard.nn import (
    EVAL,
    TRAIN,
    BatchNormState,
    DenseLayer,
    block_backward,
    block_forward,
)


class TestElu:
    def test_continuity_at_origin(self):
        assert elu(0.0, 0.1) == 0.0

    def test_identity_on_positives(self):
        assert elu(2.5, 0.1) == 2.5

    def test_negative_branch(self):
        # 0.1 * (e^-1 - 1), evaluated directly
        assert elu(-1.0, 0.1) == pytest.approx(-0.06321205588285576, rel=1e-12)

    def test_monotone_and_asymptote(self):
        xs = np.linspace(-30, 5, 2001)
        ys = elu(xs, 0.1)
        assert np.all(np.diff(ys) >= 0)
        assert ys[0] == pytest.approx(-0.1, abs=1e-8)

    def test_alpha_must_be_positive(self):
        with pytest.raises(ValueError):
            elu(1.0, 0.0)


def identity_block(dim: int, dropout=0.2) -> LayerBlock:
    """W=I, b=0, gamma=1, beta=0, running stats (0, 1): eval forward is elu(x)."""
    return LayerBlock(
        linear=DenseLayer(weights=np.eye(dim), bias=np.zeros(dim)),
        norm=BatchNormState(
            gamma=np.ones(dim),
            beta=np.zeros(dim),
            running_mean=np.zeros(dim),
            running_var=np.ones(dim),
            eps=0.0,
        ),
        dropout_rate=dropout,
    )


class TestBlockForward:
    def test_eval_ignores_rng(self):
        block = init_layer_block(6, 4, make_rng(0), dropout_rate=0.2)
        x = make_rng(1).normal(size=(3, 6))
        out1, _ = block_forward(block, x, mode=EVAL, rng=make_rng(2))
        out2, _ = block_forward(block, x, mode=EVAL, rng=make_rng(99))
        assert np.array_equal(out1, out2)

    def test_identity_composition(self):
        block = identity_block(5)
        x = make_rng(3).normal(size=(4, 5))
        out, _ = block_forward(block, x, mode=EVAL)
        assert np.allclose(out, elu(x, 0.1), atol=1e-12)

    def test_train_deterministic_given_seed(self):
        block = init_layer_block(6, 4, make_rng(0))
        x = make_rng(1).normal(size=(4, 6))
        out1, _ = block_forward(block, x, mode=TRAIN, rng=make_rng(5))
        # reset running stats mutated by the first call
        block.norm.running_mean[...] = 0.0
        block.norm.running_var[...] = 1.0
        out2, _ = block_forward(block, x, mode=TRAIN, rng=make_rng(5))
        assert np.array_equal(out1, out2)

    def test_train_rejects_single_row(self):
        block = init_layer_block(6, 4, make_rng(0))
        with pytest.raises(ValueError, match="at least 2"):
            block_forward(block, np.zeros((1, 6)), mode=TRAIN, rng=make_rng(0))

    def test_width_mismatch(self):
        block = init_layer_block(6, 4, make_rng(0))
        with pytest.raises(ValueError, match="width"):
            block_forward(block, np.zeros((2, 5)), mode=EVAL)

    def test_batchnorm_train_statistics(self):
        # without ELU/dropout the train output per feature has mean ~ beta
        # and variance ~ gamma^2 (biased estimator pulls it down by eps)
        block = init_layer_block(8, 8, make_rng(0), dropout_rate=0.0, use_elu=False)
        block.norm.gamma[...] = 1.7
        block.norm.beta[...] = -0.3
        x = make_rng(7).normal(size=(64, 8)) * 3.0 + 1.0
        out, _ = block_forward(block, x, mode=TRAIN, rng=make_rng(1))
        assert np.allclose(out.mean(axis=0), -0.3, atol=1e-10)
        assert np.allclose(out.var(axis=0), 1.7**2, rtol=1e-4)

    def test_dropout_preserves_expectation(self):
        # Monte Carlo mean of train-mode outputs matches the no-dropout
        # output of the same block within 3 sigma
        rate = 0.2
        block = identity_block(6, dropout=rate)
        ref_block = identity_block(6, dropout=0.0)
        x = make_rng(9).normal(size=(8, 6))
        ref, _ = block_forward(ref_block, x, mode=TRAIN, rng=make_rng(0))
        draws = 4000
        rng = make_rng(31)
        acc = np.zeros_like(ref)
        for _ in range(draws):
            block.norm.running_mean[...] = 0.0
            block.norm.running_var[...] = 1.0
            out, _ = block_forward(block, x, mode=TRAIN, rng=rng)
            acc += out
        mean = acc / draws
        sigma = np.abs(ref) * np.sqrt(rate / (1 - rate) / draws)
        assert np.all(np.abs(mean - ref) <= 3.0 * sigma + 1e-9)

    def test_running_stats_update_rule(self):
        block = init_layer_block(4, 4, make_rng(0), dropout_rate=0.0)
        x = make_rng(2).normal(size=(10, 4))
        lin = x @ block.linear.weights.T + block.linear.bias
        expected_mean = 0.9 * 0.0 + 0.1 * lin.mean(axis=0)
        expected_var = 0.9 * 1.0 + 0.1 * lin.var(axis=0, ddof=1)
        block_forward(block, x, mode=TRAIN, rng=make_rng(1))
        assert np.allclose(block.norm.running_mean, expected_mean, atol=1e-12)
        assert np.allclose(block.norm.running_var, expected_var, atol=1e-12)


class TestBlockBackward:
    def test_zero_grad_out(self):
        block = init_layer_block(5, 3, make_rng(0))
        x = make_rng(1).normal(size=(4, 5))
        _, cache = block_forward(block, x, mode=TRAIN, rng=make_rng(2))
        grad_in, grads = block_backward(block, cache, np.zeros((4, 3)))
        assert not grad_in.any()
        assert not grads.weights.any() and not grads.bias.any()
        assert not grads.gamma.any() and not grads.beta.any()

    def test_bare_linear_chain_rule(self):
        # norm/elu/dropout disabled: dW = g^T x, db = sum g, dx = g W
        rng = make_rng(4)
        block = init_layer_block(5, 3, rng, dropout_rate=0.0, use_norm=False, use_elu=False)
        x = rng.normal(size=(6, 5))
        g = rng.normal(size=(6, 3))
        _, cache = block_forward(block, x, mode=TRAIN, rng=rng)
        grad_in, grads = block_backward(block, cache, g)
        assert np.allclose(grads.weights, g.T @ x, atol=1e-12)
        assert np.allclose(grads.bias, g.sum(axis=0), atol=1e-12)
        assert np.allclose(grad_in, g @ block.linear.weights, atol=1e-12)

    def test_full_block_matches_finite_differences(self):
        block = init_layer_block(7, 5, make_rng(11))
        x = make_rng(12).normal(size=(5, 7))
        err = grad_check([block], "mse", x, eps=1e-4, mode=TRAIN, rng_seed=13)
        assert err < 1e-4


class TestGradCheck:
    def test_zero_parameter_network(self):
        assert grad_check([], "mse", np.zeros((2, 3))) == 0.0

    def test_two_layer_mse_network(self):
        rng = make_rng(21)
        blocks = [init_layer_block(10, 6, rng), init_layer_block(6, 3, rng)]
        x = make_rng(22).normal(size=(4, 10))
        err = grad_check(blocks, "mse", x, eps=1e-5, rng_seed=23)
        assert err < 1e-4

    def test_detects_corrupted_backward(self):
        rng = make_rng(31)
        inner = Sequential([init_layer_block(8, 4, rng)])

        class Corrupted:
            def forward(self, *a, **k):
                return inner.forward(*a, **k)

            def backward(self, caches, g):
                grad_in, grads = inner.backward(caches, g)
                for bg in grads:
                    bg.weights = bg.weights * 2.0
                return grad_in, grads

            def named_parameters(self):
                return inner.named_parameters()

            def named_gradients(self, grads):
                return inner.named_gradients(grads)

            def all_blocks(self):
                return inner.blocks

        x = make_rng(32).normal(size=(4, 8))
        err = grad_check(Corrupted(), "mse", x, eps=1e-5, rng_seed=33)
        assert err == pytest.approx(1.0, abs=0.05)

    def test_svdd_loss_gradients(self):
        rng = make_rng(41)
        blocks = [init_layer_block(6, 4, rng), init_layer_block(4, 2, rng)]
        x = make_rng(42).normal(size=(4, 6))
        err = grad_check(blocks, "svdd", x, eps=1e-5, rng_seed=43, center=np.array([0.3, -0.2]))
        assert err < 1e-4

    def test_eps_bounds(self):
        with pytest.raises(ValueError):
            grad_check([], "mse", np.zeros((2, 2)), eps=1e-2)


def test_eval_forward_is_pure():
    block = init_layer_block(5, 5, make_rng(0))
    x = make_rng(1).normal(size=(3, 5))
    runs = [block_forward(block, x, mode=EVAL)[0] for _ in range(3)]
    assert np.array_equal(runs[0], runs[1]) and np.array_equal(runs[1], runs[2])
