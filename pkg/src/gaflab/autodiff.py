"""Reverse-mode automatic differentiation over numpy arrays.

A small tape: each op returns a :class:`Tensor` whose ``_backward`` closure
scatters gradients into its parents.  Reduction- and elementwise-heavy ops
(softmax, layer norm, tanh) dispatch to the active kernel backend; matrix
products stay on numpy/BLAS in both backends.
"""

import numpy as np

from gaflab import backend


class Tensor:
    """An array plus the bookkeeping needed to backpropagate through it."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def backward(self, grad=None):
        """Backpropagate from this tensor (defaults to a gradient of ones)."""
        if grad is None:
            grad = np.ones_like(self.data)
        self.grad = np.asarray(grad, dtype=self.data.dtype)

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad:
                    stack.append((parent, False))

        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)
                # Release the subgraph so per-step graphs do not accumulate.
                node._backward = None
                node._parents = ()

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, neg(_wrap(other, self.dtype)))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, scalar):
        return mul(self, 1.0 / float(scalar))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _wrap(value, dtype):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _accumulate(tensor, grad):
    if tensor.grad is None:
        tensor.grad = grad
    else:
        tensor.grad = tensor.grad + grad


def _make(data, parents, backward):
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    if any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        out._parents = parents
        out._backward = backward
        return out
    return Tensor(data)


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b):
    a = _wrap(a, getattr(b, "dtype", None) or np.float64)
    b = _wrap(b, a.dtype)
    out_data = a.data + b.data

    def backward(dout):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(dout, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(dout, b.data.shape))

    return _make(out_data, (a, b), backward)


def neg(a):
    def backward(dout):
        if a.requires_grad:
            _accumulate(a, -dout)

    return _make(-a.data, (a,), backward)


def mul(a, b):
    b = _wrap(b, a.dtype)
    out_data = a.data * b.data

    def backward(dout):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(dout * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(dout * a.data, b.data.shape))

    return _make(out_data, (a, b), backward)


def matmul(a, b):
    out_data = a.data @ b.data

    def backward(dout):
        if a.requires_grad:
            ga = dout @ np.swapaxes(b.data, -1, -2)
            _accumulate(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ dout
            _accumulate(b, _unbroadcast(gb, b.data.shape))

    return _make(out_data, (a, b), backward)


def reshape(a, shape):
    in_shape = a.data.shape

    def backward(dout):
        if a.requires_grad:
            _accumulate(a, dout.reshape(in_shape))

    return _make(a.data.reshape(shape), (a,), backward)


def moveaxis(a, src, dst):
    def backward(dout):
        if a.requires_grad:
            _accumulate(a, np.ascontiguousarray(np.moveaxis(dout, dst, src)))

    return _make(np.ascontiguousarray(np.moveaxis(a.data, src, dst)), (a,), backward)


def swapaxes(a, ax1, ax2):
    def backward(dout):
        if a.requires_grad:
            _accumulate(a, np.ascontiguousarray(np.swapaxes(dout, ax1, ax2)))

    return _make(np.ascontiguousarray(np.swapaxes(a.data, ax1, ax2)), (a,), backward)


def broadcast_to(a, shape):
    in_shape = a.data.shape

    def backward(dout):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(dout, in_shape))

    return _make(np.ascontiguousarray(np.broadcast_to(a.data, shape)), (a,), backward)


def concat(tensors, axis):
    tensors = list(tensors)
    dtype = tensors[0].dtype
    tensors = [_wrap(t, dtype) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum(sizes)[:-1]

    def backward(dout):
        pieces = np.split(dout, offsets, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                _accumulate(t, np.ascontiguousarray(piece))

    return _make(out_data, tensors, backward)


def tsum(a, axis=None, keepdims=False):
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(dout):
        if not a.requires_grad:
            return
        g = dout
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.data.shape).astype(a.dtype, copy=True))

    return _make(out_data, (a,), backward)


def tmean(a, axis=None, keepdims=False):
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def tmax(a, axis):
    """Max along an axis; ties route the subgradient to the lowest index."""
    idx = np.argmax(a.data, axis=axis)
    out_data = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)
    out_data = np.squeeze(out_data, axis=axis)

    def backward(dout):
        if a.requires_grad:
            grad = np.zeros_like(a.data)
            np.put_along_axis(
                grad, np.expand_dims(idx, axis), np.expand_dims(dout, axis), axis=axis
            )
            _accumulate(a, grad)

    return _make(out_data, (a,), backward)


def tanh(a):
    flat = np.ascontiguousarray(a.data).ravel()
    out_data = backend.kernels.tanh_fwd(flat).reshape(a.data.shape)

    def backward(dout):
        if a.requires_grad:
            dx = backend.kernels.tanh_bwd(
                out_data.ravel(), np.ascontiguousarray(dout).ravel()
            )
            _accumulate(a, dx.reshape(a.data.shape))

    return _make(out_data, (a,), backward)


def softmax(a):
    """Softmax over the last axis."""
    shape = a.data.shape
    x2 = np.ascontiguousarray(a.data).reshape(-1, shape[-1])
    out2 = backend.kernels.softmax_fwd(x2)

    def backward(dout):
        if a.requires_grad:
            d2 = backend.kernels.softmax_bwd(
                out2, np.ascontiguousarray(dout).reshape(-1, shape[-1])
            )
            _accumulate(a, d2.reshape(shape))

    return _make(out2.reshape(shape), (a,), backward)


def layer_norm(a, gain, bias, eps=1e-5):
    """Layer normalization over the last axis with learned gain/bias."""
    shape = a.data.shape
    x2 = np.ascontiguousarray(a.data).reshape(-1, shape[-1])
    out2, xhat, rstd = backend.kernels.layernorm_fwd(x2, gain.data, bias.data, eps)

    def backward(dout):
        d2 = np.ascontiguousarray(dout).reshape(-1, shape[-1])
        dx, dgain, dbias = backend.kernels.layernorm_bwd(xhat, rstd, gain.data, d2)
        if a.requires_grad:
            _accumulate(a, dx.reshape(shape))
        if gain.requires_grad:
            _accumulate(gain, dgain)
        if bias.requires_grad:
            _accumulate(bias, dbias)

    return _make(out2.reshape(shape), (a, gain, bias), backward)


def dropout(a, p, rng):
    """Inverted dropout; call only on the training path."""
    if p <= 0.0:
        return a
    keep = 1.0 - p
    mask = (rng.random(a.data.shape) < keep).astype(a.dtype) / keep

    def backward(dout):
        if a.requires_grad:
            _accumulate(a, dout * mask)

    return _make(a.data * mask, (a,), backward)


def cross_entropy_mean(logits, onehot):
    """Mean over rows of -log softmax(logits)[true class]; rows = all leading dims."""
    shape = logits.data.shape
    x2 = logits.data.reshape(-1, shape[-1])
    t2 = np.asarray(onehot, dtype=logits.dtype).reshape(-1, shape[-1])
    shifted = x2 - x2.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1))
    true_logit = (shifted * t2).sum(axis=-1)
    rows = x2.shape[0]
    loss = (lse - true_logit).mean()

    def backward(dout):
        if logits.requires_grad:
            probs = np.exp(shifted - lse[:, None])
            d2 = (probs - t2) * (dout / rows)
            _accumulate(logits, d2.reshape(shape))

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def mse_mean(pred, target):
    """Mean squared error over every entry; ``target`` carries no gradient."""
    t = np.asarray(target, dtype=pred.dtype)
    diff = pred.data - t
    loss = np.asarray(np.mean(diff * diff), dtype=pred.dtype)

    def backward(dout):
        if pred.requires_grad:
            _accumulate(pred, (2.0 / diff.size) * diff * dout)

    return _make(loss, (pred,), backward)
