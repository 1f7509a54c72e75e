import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from recdiffseg.errors import ShapeError
from recdiffseg.nn import (
    AttentionBlock,
    Conv2d,
    GroupNorm,
    Linear,
    ResNetBlock,
    Upsample,
    efficient_attention,
    group_count,
)


def brute_attention(q, k, v):
    """Two-stage softmax written out element by element."""
    N, d = q.shape
    qs = np.empty_like(q)
    for i in range(N):
        e = [math.exp(q[i, j]) for j in range(d)]
        qs[i] = [x / sum(e) for x in e]
    ks = np.empty_like(k)
    for j in range(d):
        e = [math.exp(k[i, j]) for i in range(N)]
        ks[:, j] = [x / sum(e) for x in e]
    out = np.zeros((N, v.shape[1]))
    for i in range(N):
        for c in range(v.shape[1]):
            out[i, c] = sum(qs[i, j] * sum(ks[n, j] * v[n, c] for n in range(N)) for j in range(d))
    return out


def naive_conv(x, w, b, stride, pad):
    k = w.shape[0]
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    Ho = (x.shape[0] + 2 * pad - k) // stride + 1
    Wo = (x.shape[1] + 2 * pad - k) // stride + 1
    out = np.zeros((Ho, Wo, w.shape[3]))
    for oy in range(Ho):
        for ox in range(Wo):
            patch = xp[oy * stride:oy * stride + k, ox * stride:ox * stride + k]
            out[oy, ox] = np.tensordot(patch, w, axes=3) + b
    return out


def layer_fd_check(layer, x, forward, rng, h=1e-6):
    """Finite-difference check of input and parameter gradients of a single layer."""
    out = forward(x)
    R = rng.standard_normal(out.shape)
    dx = layer.backward(R)
    loss = lambda: float(np.sum(forward(x) * R))
    for i in rng.choice(x.size, min(x.size, 10), replace=False):
        flat = x.reshape(-1)
        old = flat[i]
        flat[i] = old + h
        a = loss()
        flat[i] = old - h
        b = loss()
        flat[i] = old
        assert abs((a - b) / (2 * h) - dx.reshape(-1)[i]) <= 1e-6 * max(1, abs(dx.reshape(-1)[i]))
    forward(x)
    layer.backward(R)
    grads = dict(layer.named_gradients())
    for name, p in list(layer.named_parameters()):
        flat = p.reshape(-1)
        for i in rng.choice(flat.size, min(flat.size, 6), replace=False):
            old = flat[i]
            flat[i] = old + h
            a = loss()
            flat[i] = old - h
            b = loss()
            flat[i] = old
            g = grads[name].reshape(-1)[i]
            assert abs((a - b) / (2 * h) - g) <= 1e-6 * max(1, abs(g)), name


class TestEfficientAttention:
    def test_constant_values(self):
        rng = np.random.default_rng(0)
        v = np.tile([0.3, -1.0, 2.0], (7, 1))
        out = efficient_attention(rng.standard_normal((7, 4)), rng.standard_normal((7, 4)), v)
        assert np.allclose(out, v, atol=1e-12)

    def test_single_row(self):
        rng = np.random.default_rng(1)
        v = rng.standard_normal((1, 5))
        out = efficient_attention(rng.standard_normal((1, 3)), rng.standard_normal((1, 3)), v)
        assert np.allclose(out, v, atol=1e-12)

    def test_matches_brute_force_3x2(self):
        rng = np.random.default_rng(2)
        q, k, v = rng.standard_normal((3, 2)), rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
        assert np.allclose(efficient_attention(q, k, v), brute_attention(q, k, v), rtol=1e-12, atol=1e-12)

    @given(st.integers(1, 9), st.integers(1, 4), st.integers(1, 4), st.integers(0, 10 ** 6))
    def test_brute_force_property(self, N, d, dv, seed):
        rng = np.random.default_rng(seed)
        q, k = rng.standard_normal((N, d)) * 3, rng.standard_normal((N, d)) * 3
        v = rng.standard_normal((N, dv))
        out = efficient_attention(q, k, v)
        assert np.allclose(out, brute_attention(q, k, v), rtol=1e-10, atol=1e-12)
        # rows are convex combinations of the value rows
        assert np.all(out <= v.max(axis=0) + 1e-12) and np.all(out >= v.min(axis=0) - 1e-12)

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            efficient_attention(np.zeros((3, 2)), np.zeros((4, 2)), np.zeros((3, 2)))
        with pytest.raises(ShapeError):
            efficient_attention(np.zeros((3, 2)), np.zeros((3, 3)), np.zeros((3, 2)))
        with pytest.raises(ShapeError):
            efficient_attention(np.zeros(3), np.zeros(3), np.zeros(3))


class TestResNetBlock:
    def test_zero_path_gives_projected_input(self):
        rng = np.random.default_rng(0)
        block = ResNetBlock(3, 5, rng, np.float64, temb_dim=4)
        for name, p in block.named_parameters():
            if not name.startswith("skip."):
                p[...] = 0
        x = rng.standard_normal((4, 4, 3))
        expected = naive_conv(x, block.skip.params["weight"], block.skip.params["bias"], 1, 0)
        assert np.allclose(block.forward(x, np.ones(4)), expected, atol=1e-12)

    def test_identity_residual_when_channels_match(self):
        block = ResNetBlock(4, 4, np.random.default_rng(0), np.float64)
        block.conv2.params["weight"][...] = 0
        x = np.random.default_rng(1).standard_normal((2, 2, 4))
        assert np.array_equal(block.forward(x), x)

    def test_hand_computed_1x1(self):
        block = ResNetBlock(1, 1, np.random.default_rng(0), np.float64, temb_dim=1, kernel_size=1)
        block.conv1.params["weight"][...] = 2.0
        block.conv1.params["bias"][...] = 0.5
        block.time_proj.params["weight"][...] = 3.0
        block.time_proj.params["bias"][...] = 0.0
        block.conv2.params["weight"][...] = -1.0
        block.conv2.params["bias"][...] = 0.25
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(2, 2, 1)
        temb = np.array([0.1])

        silu = lambda a: a / (1 + math.exp(-a))
        vals = [1.0, 2.0, 3.0, 4.0]
        mu = sum(vals) / 4
        sd = math.sqrt(sum((a - mu) ** 2 for a in vals) / 4 + 1e-5)
        h = [2.0 * silu((a - mu) / sd) + 0.5 + 3.0 * 0.1 for a in vals]
        mu2 = sum(h) / 4
        sd2 = math.sqrt(sum((a - mu2) ** 2 for a in h) / 4 + 1e-5)
        expected = [a - silu((b - mu2) / sd2) + 0.25 for a, b in zip(vals, h)]
        assert np.allclose(block.forward(x, temb).reshape(-1), expected, rtol=1e-12)

    @given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 3), st.integers(1, 3))
    def test_shape_preserved(self, cin, cout, h, w):
        block = ResNetBlock(cin, cout, np.random.default_rng(0), np.float32, temb_dim=2)
        x = np.ones((h * 2, w * 2, cin), np.float32)
        assert block.forward(x, np.zeros(2, np.float32)).shape == (h * 2, w * 2, cout)

    def test_channel_mismatch(self):
        block = ResNetBlock(3, 3, np.random.default_rng(0), np.float64)
        with pytest.raises(ShapeError):
            block.forward(np.zeros((2, 2, 4)))


class TestLayers:
    @pytest.mark.parametrize("channels,expected", [(1, 1), (4, 4), (8, 8), (12, 6), (16, 8), (24, 8), (7, 7), (9, 3)])
    def test_group_count(self, channels, expected):
        assert group_count(channels) == expected

    @pytest.mark.parametrize("k,stride,pad", [(3, 1, 1), (3, 2, 1), (1, 1, 0), (2, 2, 0)])
    def test_conv_matches_naive(self, k, stride, pad):
        rng = np.random.default_rng(k + stride)
        conv = Conv2d(3, 4, k, rng, np.float64, stride=stride, padding=pad)
        conv.params["bias"][...] = rng.standard_normal(4)
        x = rng.standard_normal((6, 6, 3))
        assert np.allclose(conv.forward(x), naive_conv(x, conv.params["weight"], conv.params["bias"], stride, pad))

    def test_zero_init_conv(self):
        conv = Conv2d(2, 3, 3, np.random.default_rng(0), np.float32, zero_init=True)
        assert not conv.forward(np.ones((4, 4, 2), np.float32)).any()

    def test_groupnorm_statistics(self):
        gn = GroupNorm(8, np.float64, groups=2)
        x = np.random.default_rng(0).standard_normal((5, 5, 8)) * 3 + 1
        y = gn.forward(x).reshape(25, 2, 4)
        assert np.allclose(y.mean(axis=(0, 2)), 0, atol=1e-12)
        assert np.allclose(y.var(axis=(0, 2)), 1, atol=1e-5)

    @pytest.mark.parametrize("make", [
        lambda r: (Conv2d(3, 4, 3, r, np.float64), (5, 5, 3)),
        lambda r: (Conv2d(3, 4, 3, r, np.float64, stride=2), (6, 6, 3)),
        lambda r: (GroupNorm(6, np.float64), (3, 4, 6)),
        lambda r: (Upsample(2, 3, r, np.float64), (2, 3, 2)),
        lambda r: (AttentionBlock(4, r, np.float64), (3, 3, 4)),
        lambda r: (ResNetBlock(2, 4, r, np.float64), (4, 4, 2)),
    ])
    def test_layer_gradients(self, make):
        rng = np.random.default_rng(3)
        layer, shape = make(rng)
        for _, p in layer.named_parameters():
            p[...] += rng.standard_normal(p.shape) * 0.2
        x = rng.standard_normal(shape)
        layer_fd_check(layer, x, layer.forward, rng)

    def test_linear_gradients(self):
        rng = np.random.default_rng(4)
        lin = Linear(3, 2, rng, np.float64)
        layer_fd_check(lin, rng.standard_normal(3), lin.forward, rng)
