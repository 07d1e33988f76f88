"""Pure-numpy reference kernels.

These are the fallback implementations of the hot inner-loop primitives.
The compiled extension (``gaflab._kernels``) exposes the same signatures;
``gaflab.backend`` picks one set at import time.  All kernels accept
C-contiguous float32 or float64 arrays and treat the last axis as the
feature/sequence axis after the caller has flattened leading dims.
"""

import numpy as np


def softmax_fwd(x):
    """Row-wise softmax over the last axis of a 2D array."""
    shifted = x - x.max(axis=-1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=-1, keepdims=True)
    return shifted


def softmax_bwd(out, dout):
    inner = (dout * out).sum(axis=-1, keepdims=True)
    return out * (dout - inner)


def layernorm_fwd(x, gain, bias, eps):
    """Returns (out, xhat, rstd); xhat and rstd are reused by the backward pass."""
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * rstd
    return xhat * gain + bias, xhat, rstd[..., 0]


def layernorm_bwd(xhat, rstd, gain, dout):
    dxhat = dout * gain
    c1 = dxhat.mean(axis=-1, keepdims=True)
    c2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = (dxhat - c1 - xhat * c2) * rstd[..., None]
    dgain = (dout * xhat).sum(axis=0)
    dbias = dout.sum(axis=0)
    return dx, dgain, dbias


def tanh_fwd(x):
    return np.tanh(x)


def tanh_bwd(out, dout):
    return dout * (1.0 - out * out)


def adam_step(param, grad, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """One Adam update, in place on flat views of param/m/v."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / bc1
    vhat = v / bc2
    param -= lr * mhat / (np.sqrt(vhat) + eps)
