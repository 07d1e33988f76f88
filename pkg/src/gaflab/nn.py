"""Network building blocks: linear layers, layer norm, self-attention."""

import math
from dataclasses import dataclass

import numpy as np

from gaflab import autodiff as ad
from gaflab.autodiff import Tensor


@dataclass
class RunCtx:
    """Per-forward switches: dropout only fires when ``training`` is set."""

    training: bool = False
    rng: np.random.Generator | None = None


class Module:
    def __init__(self):
        self._params = {}
        self._children = {}

    def register(self, name, array, trainable=True):
        t = Tensor(np.ascontiguousarray(array), requires_grad=trainable)
        self._params[name] = t
        return t

    def add_child(self, name, module):
        self._children[name] = module
        return module

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def set_trainable(self, flag):
        for _, p in self.named_parameters():
            p.requires_grad = flag


def xavier_uniform(rng, fan_in, fan_out, shape, dtype):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, in_dim, out_dim, rng, dtype):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = self.register(
            "weight", xavier_uniform(rng, in_dim, out_dim, (in_dim, out_dim), dtype)
        )
        self.bias = self.register("bias", np.zeros(out_dim, dtype=dtype))

    def __call__(self, x):
        lead = x.shape[:-1]
        flat = ad.reshape(x, (-1, self.in_dim))
        out = ad.matmul(flat, self.weight) + self.bias
        return ad.reshape(out, lead + (self.out_dim,))


class LayerNorm(Module):
    def __init__(self, dim, dtype, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.gain = self.register("gain", np.ones(dim, dtype=dtype))
        self.bias = self.register("bias", np.zeros(dim, dtype=dtype))

    def __call__(self, x):
        return ad.layer_norm(x, self.gain, self.bias, self.eps)


class MultiHeadSelfAttention(Module):
    """Scaled dot-product self-attention over the middle (sequence) axis.

    Input is (batch, seq, width); all heads share the width, so
    ``width % heads == 0`` is required.
    """

    def __init__(self, width, heads, rng, dtype):
        super().__init__()
        if width % heads != 0:
            raise ValueError(f"width {width} not divisible by heads {heads}")
        self.width = width
        self.heads = heads
        self.head_dim = width // heads
        for name in ("wq", "wk", "wv", "wo"):
            self.add_child(name, Linear(width, width, rng, dtype))

    def _split_heads(self, x, batch, seq):
        x = ad.reshape(x, (batch, seq, self.heads, self.head_dim))
        return ad.moveaxis(x, 2, 1)

    def __call__(self, x):
        batch, seq, _ = x.shape
        q = self._split_heads(self._children["wq"](x), batch, seq)
        k = self._split_heads(self._children["wk"](x), batch, seq)
        v = self._split_heads(self._children["wv"](x), batch, seq)
        scores = ad.matmul(q, ad.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(self.head_dim))
        att = ad.softmax(scores)
        mixed = ad.matmul(att, v)
        mixed = ad.reshape(ad.moveaxis(mixed, 1, 2), (batch, seq, self.width))
        return self._children["wo"](mixed)


class FeedForward(Module):
    def __init__(self, width, hidden, rng, dtype):
        super().__init__()
        self.lin1 = self.add_child("lin1", Linear(width, hidden, rng, dtype))
        self.lin2 = self.add_child("lin2", Linear(hidden, width, rng, dtype))

    def __call__(self, x):
        return self.lin2(ad.tanh(self.lin1(x)))


class EncoderLayer(Module):
    """Post-norm transformer encoder layer: attention and feed-forward
    sublayers, each wrapped in residual + layer norm."""

    def __init__(self, width, heads, ff_mult, dropout, rng, dtype):
        super().__init__()
        self.dropout = dropout
        self.attn = self.add_child("attn", MultiHeadSelfAttention(width, heads, rng, dtype))
        self.ln1 = self.add_child("ln1", LayerNorm(width, dtype))
        self.ff = self.add_child("ff", FeedForward(width, width * ff_mult, rng, dtype))
        self.ln2 = self.add_child("ln2", LayerNorm(width, dtype))

    def _drop(self, x, ctx):
        if ctx.training and self.dropout > 0.0:
            return ad.dropout(x, self.dropout, ctx.rng)
        return x

    def __call__(self, x, ctx):
        x = self.ln1(x + self._drop(self.attn(x), ctx))
        return self.ln2(x + self._drop(self.ff(x), ctx))


class TwoLayerMlp(Module):
    """The width-preserving perceptron inserted between the two encoders
    of each branch (width -> 2*width -> width, tanh in between)."""

    def __init__(self, width, rng, dtype):
        super().__init__()
        self.lin1 = self.add_child("lin1", Linear(width, 2 * width, rng, dtype))
        self.lin2 = self.add_child("lin2", Linear(2 * width, width, rng, dtype))

    def __call__(self, x):
        return self.lin2(ad.tanh(self.lin1(x)))


def sinusoidal_table(length, width, dtype):
    """Classic sin/cos position table: rows are positions, channel pairs
    step down a base-10000 geometric frequency ladder."""
    if width % 2 != 0:
        raise ValueError("positional table width must be even")
    pos = np.arange(length, dtype=np.float64)[:, None]
    k = np.arange(width // 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * k / width)
    table = np.empty((length, width), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table.astype(dtype)
