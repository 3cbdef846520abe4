"""Gradient checking walkthrough.

Builds both autoencoder variants at toy widths and compares their
analytic gradients against central finite differences, including a
deliberately broken backward pass to show the checker catching it.

Run: python demos/02_gradient_checking.py
"""

import numpy as np

from loopguard import EncoderSpec, Sequential, build_model, grad_check, init_layer_block, make_rng

batch = make_rng(0).normal(size=(4, 16))

print("full-network gradient checks (train mode, frozen dropout):")
for variant in ("AE", "AEwRES"):
    spec = EncoderSpec(dims=(16, 8, 4), variant=variant, allow_custom_latent=True)
    model = build_model(spec, seed=1)
    err = grad_check(model, "mse", batch, eps=1e-6, rng_seed=2, target=batch)
    print(f"  {variant:7s} worst relative error: {err:.2e}")

print("\nencoder-only check against the hypersphere loss:")
model = build_model(EncoderSpec(dims=(16, 8, 4), variant="AE", allow_custom_latent=True), seed=1)
err = grad_check(model.encoder, "svdd", batch, eps=1e-6, rng_seed=3, center=np.zeros(4))
print(f"  worst relative error: {err:.2e}")


class BrokenBackward:
    """Wraps a network and doubles every weight gradient."""

    def __init__(self, inner):
        self.inner = inner

    def forward(self, *a, **kw):
        return self.inner.forward(*a, **kw)

    def backward(self, caches, g):
        grad_in, grads = self.inner.backward(caches, g)
        for bg in grads:
            bg.weights = bg.weights * 2.0
        return grad_in, grads

    def named_parameters(self):
        return self.inner.named_parameters()

    def named_gradients(self, grads):
        return self.inner.named_gradients(grads)

    def all_blocks(self):
        return self.inner.blocks


print("\nfault injection (weight gradients doubled):")
net = Sequential([init_layer_block(16, 8, make_rng(4)), init_layer_block(8, 4, make_rng(5))])
err = grad_check(BrokenBackward(net), "mse", batch, eps=1e-6, rng_seed=6)
print(f"  worst relative error: {err:.3f}  (a correct backward would be < 1e-4)")
