#!/usr/bin/env python3
"""Tour of the tensor library: forward ops, backprop, gradient check, Adam.

Everything downstream (the VAE, the losses, grad-CAM) is built from these
pieces, so this demo doubles as a minimal reliability check.
"""

import numpy as np

from stylespace import tensor as T

# A tiny computation graph: loss = mean((relu(x @ w) - y)^2)
rng = np.random.default_rng(0)
x = T.Tensor(rng.standard_normal((8, 4)).astype(np.float32))
w = T.parameter(rng.standard_normal((4, 3)).astype(np.float32) * 0.5)
y = T.Tensor(rng.standard_normal((8, 3)).astype(np.float32))

pred = T.relu(T.matmul(x, w))
loss = T.tmean(T.square(T.sub(pred, y)))
loss.backward()
print(f"loss = {loss.item():.4f}, grad shape {w.grad.shape}")

# Check one gradient coordinate against a central finite difference.
idx = (2, 1)
h = 1e-3


def eval_loss(w_data):
    p = np.maximum(x.data @ w_data, 0.0)
    return float(np.mean((p - y.data) ** 2))


wp, wm = w.data.copy(), w.data.copy()
wp[idx] += h
wm[idx] -= h
fd = (eval_loss(wp) - eval_loss(wm)) / (2 * h)
print(f"autodiff dL/dw{idx} = {w.grad[idx]:.6f}, finite difference = {fd:.6f}")

# Drive the same problem to a minimum with Adam.
w2 = T.parameter(rng.standard_normal((4, 3)).astype(np.float32) * 0.5)
state = T.AdamState.for_params([w2])
for step in range(400):
    T.zero_grad([w2])
    current = T.tmean(T.square(T.sub(T.relu(T.matmul(x, w2)), y)))
    current.backward()
    T.adam_step([w2], [w2.grad], state, lr=0.05)
    if step % 100 == 0:
        print(f"step {step:3d}: loss {current.item():.4f}")
print(f"final loss after Adam: {current.item():.4f}")

# Convolution: a 3x3 edge filter over a toy image, plus its gradient.
img = T.parameter(rng.random((1, 1, 8, 8)).astype(np.float32))
kernel = T.Tensor(np.array([[[[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]]], dtype=np.float32))
edges = T.conv2d(img, kernel, stride=1, pad=1)
print(f"conv output shape: {edges.shape}")
T.tsum(T.square(edges)).backward()
print(f"image gradient norm: {np.linalg.norm(img.grad):.4f}")
