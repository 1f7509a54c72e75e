"""Small layer library with explicit forward/backward passes.

All tensors are single images in channel-last layout ``(H, W, C)``. Each
layer caches what its backward pass needs during ``forward`` and writes
parameter gradients into ``self.grads`` during ``backward``. A layer is used
at most once per forward pass, so caches are never shared.
"""

import math

import numpy as np

from . import kernels
from .errors import ShapeError


class Layer:
    def __init__(self):
        self.params = {}
        self.grads = {}
        self._children = {}
        self._cache = None

    def add(self, name, layer):
        self._children[name] = layer
        return layer

    def named_parameters(self, prefix=""):
        for name, value in self.params.items():
            yield prefix + name, value
        for child_name, child in self._children.items():
            yield from child.named_parameters(prefix + child_name + ".")

    def named_gradients(self, prefix=""):
        for name in self.params:
            yield prefix + name, self.grads[name]
        for child_name, child in self._children.items():
            yield from child.named_gradients(prefix + child_name + ".")

    def zero_grad(self):
        for name, value in self.params.items():
            self.grads[name] = np.zeros_like(value)
        for child in self._children.values():
            child.zero_grad()


_ONES = {}


def colsum(a):
    """Sum a 2-D array over rows using a BLAS matvec (much faster than a strided reduce)."""
    key = (a.shape[0], a.dtype)
    ones = _ONES.get(key)
    if ones is None:
        ones = _ONES[key] = np.ones(a.shape[0], dtype=a.dtype)
    return ones @ a


def group_count(channels, max_groups=8):
    """Largest group count <= max_groups that divides ``channels``."""
    for g in range(min(max_groups, channels), 0, -1):
        if channels % g == 0:
            return g
    return 1


class Conv2d(Layer):
    def __init__(self, cin, cout, kernel_size, rng, dtype, stride=1, padding=None, zero_init=False):
        super().__init__()
        self.cin, self.cout, self.k, self.stride = cin, cout, kernel_size, stride
        self.pad = kernel_size // 2 if padding is None else padding
        shape = (kernel_size, kernel_size, cin, cout)
        if zero_init:
            w = np.zeros(shape, dtype=dtype)
        else:
            fan_in = cin * kernel_size * kernel_size
            w = (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)
        self.params["weight"] = w
        self.params["bias"] = np.zeros(cout, dtype=dtype)

    def _pointwise(self):
        return self.k == 1 and self.stride == 1 and self.pad == 0

    def forward(self, x):
        H, W, C = x.shape
        if C != self.cin:
            raise ShapeError(f"conv expects {self.cin} input channels, got {C}")
        if self._pointwise():
            cols, Ho, Wo = x.reshape(H * W, C), H, W
        else:
            cols = kernels.im2col(x, self.k, self.k, self.stride, self.pad)
            Ho = (H + 2 * self.pad - self.k) // self.stride + 1
            Wo = (W + 2 * self.pad - self.k) // self.stride + 1
        out = cols @ self.params["weight"].reshape(-1, self.cout)
        out += self.params["bias"]
        self._cache = (x.shape, cols)
        return out.reshape(Ho, Wo, self.cout)

    def backward(self, dout):
        shape, cols = self._cache
        d = dout.reshape(-1, self.cout)
        w = self.params["weight"]
        self.grads["weight"] = (cols.T @ d).reshape(w.shape)
        self.grads["bias"] = colsum(d)
        dcols = d @ w.reshape(-1, self.cout).T
        if self._pointwise():
            return dcols.reshape(shape)
        return kernels.col2im(dcols, shape, self.k, self.k, self.stride, self.pad)


class Linear(Layer):
    def __init__(self, din, dout, rng, dtype):
        super().__init__()
        self.params["weight"] = (rng.standard_normal((dout, din)) / math.sqrt(din)).astype(dtype)
        self.params["bias"] = np.zeros(dout, dtype=dtype)

    def forward(self, v):
        self._cache = v
        return self.params["weight"] @ v + self.params["bias"]

    def backward(self, dy):
        v = self._cache
        self.grads["weight"] = np.outer(dy, v)
        self.grads["bias"] = dy.copy()
        return self.params["weight"].T @ dy


class GroupNorm(Layer):
    def __init__(self, channels, dtype, groups=None, eps=1e-5):
        super().__init__()
        self.channels = channels
        self.groups = groups or group_count(channels)
        self.eps = eps
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)

    def forward(self, x):
        H, W, C = x.shape
        if C != self.channels:
            raise ShapeError(f"group norm expects {self.channels} channels, got {C}")
        G = self.groups
        n = H * W * (C // G)
        x2 = x.reshape(H * W, C)
        mean = colsum(x2).reshape(G, -1).sum(axis=1) / n
        centered = x2 - np.repeat(mean, C // G)
        var = colsum(centered * centered).reshape(G, -1).sum(axis=1) / n
        inv_std = np.repeat(1.0 / np.sqrt(var + self.eps), C // G).astype(x.dtype)
        xhat = centered * inv_std
        self._cache = (xhat.reshape(H, W, C), inv_std)
        return (xhat * self.params["gamma"] + self.params["beta"]).reshape(H, W, C)

    def backward(self, dy):
        xhat, inv_std = self._cache
        H, W, C = xhat.shape
        G = self.groups
        n = H * W * (C // G)
        dy2 = dy.reshape(-1, C)
        xh2 = xhat.reshape(-1, C)
        dy_xh = colsum(dy2 * xh2)
        dy_sum = colsum(dy2)
        self.grads["gamma"] = dy_xh
        self.grads["beta"] = dy_sum
        gamma = self.params["gamma"]
        # group sums of dxhat and dxhat * xhat, broadcast back per channel
        s1 = np.repeat((dy_sum * gamma).reshape(G, -1).sum(axis=1), C // G) / n
        s2 = np.repeat((dy_xh * gamma).reshape(G, -1).sum(axis=1), C // G) / n
        dx = (dy2 * gamma - s1 - xh2 * s2) * inv_std
        return dx.reshape(H, W, C)


class SiLU(Layer):
    def forward(self, x):
        with np.errstate(over="ignore"):
            sig = 1.0 / (1.0 + np.exp(-x))
        self._cache = (x, sig)
        return x * sig

    def backward(self, dy):
        x, sig = self._cache
        return dy * sig * (1.0 + x * (1.0 - sig))


class Upsample(Layer):
    """Nearest-neighbour 2x upsampling followed by a 3x3 convolution."""

    def __init__(self, cin, cout, rng, dtype):
        super().__init__()
        self.conv = self.add("conv", Conv2d(cin, cout, 3, rng, dtype))

    def forward(self, x):
        up = x.repeat(2, axis=0).repeat(2, axis=1)
        return self.conv.forward(up)

    def backward(self, dy):
        dup = self.conv.backward(dy)
        H2, W2, C = dup.shape
        return dup.reshape(H2 // 2, 2, W2 // 2, 2, C).sum(axis=(1, 3))


class ResNetBlock(Layer):
    """Pre-activation residual block with an optional time-embedding injection.

    ``out = skip(x) + conv2(silu(norm2(conv1(silu(norm1(x))) + proj(temb))))``
    where ``skip`` is a 1x1 convolution when the channel count changes.
    """

    def __init__(self, cin, cout, rng, dtype, temb_dim=None, kernel_size=3):
        super().__init__()
        self.cin, self.cout = cin, cout
        self.norm1 = self.add("norm1", GroupNorm(cin, dtype))
        self.act1 = self.add("act1", SiLU())
        self.conv1 = self.add("conv1", Conv2d(cin, cout, kernel_size, rng, dtype))
        self.time_proj = self.add("time_proj", Linear(temb_dim, cout, rng, dtype)) if temb_dim else None
        self.norm2 = self.add("norm2", GroupNorm(cout, dtype))
        self.act2 = self.add("act2", SiLU())
        self.conv2 = self.add("conv2", Conv2d(cout, cout, kernel_size, rng, dtype))
        self.skip = self.add("skip", Conv2d(cin, cout, 1, rng, dtype)) if cin != cout else None

    def forward(self, x, temb=None):
        if x.shape[-1] != self.cin:
            raise ShapeError(f"ResNetBlock expects {self.cin} channels, got {x.shape[-1]}")
        h = self.conv1.forward(self.act1.forward(self.norm1.forward(x)))
        if self.time_proj is not None:
            if temb is None:
                raise ShapeError("time-conditioned ResNetBlock called without an embedding")
            h = h + self.time_proj.forward(temb)
        h = self.conv2.forward(self.act2.forward(self.norm2.forward(h)))
        res = self.skip.forward(x) if self.skip is not None else x
        return res + h

    def backward(self, dout):
        dh = self.norm2.backward(self.act2.backward(self.conv2.backward(dout)))
        if self.time_proj is not None:
            self.time_proj.backward(colsum(dh.reshape(-1, dh.shape[-1])))
        dx = self.norm1.backward(self.act1.backward(self.conv1.backward(dh)))
        if self.skip is not None:
            dx += self.skip.backward(dout)
        else:
            dx += dout
        return dx


def _softmax(a, axis):
    e = np.exp(a - a.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _softmax_backward(s, ds, axis):
    return s * (ds - np.sum(ds * s, axis=axis, keepdims=True))


def efficient_attention(queries, keys, values):
    """Linear-cost attention: ``softmax_rows(Q) @ (softmax_cols(K).T @ V)``.

    Queries are normalised over the feature axis, keys over the position axis,
    so the N x N affinity matrix is never formed.
    """
    q, k, v = np.asarray(queries), np.asarray(keys), np.asarray(values)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ShapeError("efficient_attention expects 2-D (positions, features) arrays")
    if not (q.shape[0] == k.shape[0] == v.shape[0]):
        raise ShapeError(f"row counts differ: {q.shape[0]}, {k.shape[0]}, {v.shape[0]}")
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"query/key widths differ: {q.shape[1]} vs {k.shape[1]}")
    if q.shape[1] < 1 or v.shape[1] < 1:
        raise ShapeError("feature widths must be >= 1")
    return _attention_forward(q, k, v)[0]


def _attention_forward(q, k, v):
    qs = _softmax(q, axis=1)
    ks = _softmax(k, axis=0)
    context = ks.T @ v
    return qs @ context, (qs, ks, v, context)


def _attention_backward(dout, cache):
    qs, ks, v, context = cache
    dqs = dout @ context.T
    dcontext = qs.T @ dout
    dks = v @ dcontext.T
    dv = ks @ dcontext
    return _softmax_backward(qs, dqs, 1), _softmax_backward(ks, dks, 0), dv


class AttentionBlock(Layer):
    """Residual efficient-attention block over all spatial positions."""

    def __init__(self, channels, rng, dtype):
        super().__init__()
        self.channels = channels
        self.norm = self.add("norm", GroupNorm(channels, dtype))
        self.qkv = self.add("qkv", Conv2d(channels, 3 * channels, 1, rng, dtype))
        self.proj = self.add("proj", Conv2d(channels, channels, 1, rng, dtype))

    def forward(self, x):
        H, W, C = x.shape
        qkv = self.qkv.forward(self.norm.forward(x)).reshape(H * W, 3 * C)
        out, cache = _attention_forward(qkv[:, :C], qkv[:, C:2 * C], qkv[:, 2 * C:])
        self._cache = cache
        return x + self.proj.forward(out.reshape(H, W, C))

    def backward(self, dout):
        H, W, C = dout.shape
        dattn = self.proj.backward(dout).reshape(H * W, C)
        dq, dk, dv = _attention_backward(dattn, self._cache)
        dqkv = np.concatenate([dq, dk, dv], axis=1).reshape(H, W, 3 * C)
        return dout + self.norm.backward(self.qkv.backward(dqkv))
