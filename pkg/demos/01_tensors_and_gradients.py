#!/usr/bin/env python3
"""Tensors, reverse-mode gradients, and the finite-difference oracle.

The library ships its own small autodiff engine on top of numpy arrays.
This script walks through the basics: building expressions, pulling
gradients back through them, and cross-checking against central
differences.
"""

import numpy as np

from winmix import Tensor, finite_difference_gradient, gradients
from winmix import tensor as T

rng = np.random.default_rng(0)

# --- forward expressions are plain function calls --------------------------
a = Tensor(rng.standard_normal((3, 4)), dtype=np.float64, requires_grad=True)
b = Tensor(rng.standard_normal((4, 2)), dtype=np.float64, requires_grad=True)

y = T.gelu(T.matmul(a, b))        # (3, 2)
loss = T.tsum(T.mul(y, y))
print("loss:", loss.item())

# --- one backward call fills .grad on every parameter ----------------------
ga, gb = gradients(loss, [a, b])
print("grad shapes:", ga.shape, gb.shape)

# --- the independent check: central differences, coordinate by coordinate --
fd = finite_difference_gradient(
    lambda t: T.tsum(T.mul(T.gelu(T.matmul(t, b)), T.gelu(T.matmul(t, b)))),
    Tensor(a.numpy()), h=1e-4)
err = np.abs(fd.numpy() - ga.numpy()).max()
print(f"max |analytic - numeric|: {err:.2e}")

# --- softmax and layer norm come with stable implementations ---------------
logits = Tensor(np.array([1000.0, 0.0, -5.0]), dtype=np.float64)
print("softmax of [1000, 0, -5]:", T.softmax_last_axis(logits).numpy())

x = Tensor(rng.standard_normal((2, 8)), dtype=np.float64)
normed = T.layer_norm(x, Tensor(np.ones(8), dtype=np.float64),
                      Tensor(np.zeros(8), dtype=np.float64))
print("per-row mean after norm:", normed.numpy().mean(axis=-1))
print("per-row var  after norm:", normed.numpy().var(axis=-1))

# --- non-finite values raise instead of propagating ------------------------
big = Tensor(np.array([1e38], dtype=np.float32))
try:
    T.mul(big, big)
except T.NumericError as exc:
    print("caught:", exc)
