"""Conditional noise-prediction network.

Four parts, wired as ``H(F(image) + G(noisy_seg), E(t))``:

* ``E``: sinusoidal embedding of the time step (no parameters),
* ``F``: two ResNetBlocks encoding the RGB image,
* ``G``: two ResNetBlocks encoding the noisy one-hot segmentation,
* ``H``: a U-shaped encoder/decoder with time-conditioned ResNetBlocks,
  skip connections by concatenation and efficient attention at the bottleneck.

All tensors are channel-last ``(H, W, C)`` single images.
"""

import hashlib
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidParameterError, ShapeError, StateError
from .nn import AttentionBlock, Conv2d, GroupNorm, Layer, ResNetBlock, SiLU, Upsample


@dataclass(frozen=True)
class DenoiserConfig:
    num_classes: int
    base_channels: int = 32
    depth: int = 3
    embed_dim: int = 64
    attention_at_bottleneck: bool = True

    def __post_init__(self):
        if self.num_classes < 1:
            raise InvalidParameterError("num_classes must be >= 1")
        if self.base_channels < 4:
            raise InvalidParameterError("base_channels must be >= 4")
        if self.depth < 1:
            raise InvalidParameterError("depth must be >= 1")
        if self.embed_dim < 2 or self.embed_dim % 2:
            raise InvalidParameterError("embed_dim must be even and >= 2")

    @property
    def stage_channels(self):
        return [self.base_channels * 2 ** i for i in range(self.depth)]

    def to_dict(self):
        return asdict(self)


def time_embed(t, embed_dim):
    """Sinusoidal embedding: ``[sin(t*w_k)..., cos(t*w_k)...]``, ``w_k = 10000^(-2k/d)``."""
    if embed_dim < 2 or embed_dim % 2:
        raise InvalidParameterError(f"embed_dim must be even and >= 2, got {embed_dim}")
    half = embed_dim // 2
    freqs = 10000.0 ** (-2.0 * np.arange(half) / embed_dim)
    angles = float(t) * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)])


class _Encoder(Layer):
    """Two ResNetBlocks without time conditioning (modules F and G)."""

    def __init__(self, cin, cout, rng, dtype):
        super().__init__()
        self.block0 = self.add("block0", ResNetBlock(cin, cout, rng, dtype))
        self.block1 = self.add("block1", ResNetBlock(cout, cout, rng, dtype))

    def forward(self, x):
        return self.block1.forward(self.block0.forward(x))

    def backward(self, dy):
        return self.block0.backward(self.block1.backward(dy))


class _UNet(Layer):
    """Module H."""

    def __init__(self, cfg, rng, dtype):
        super().__init__()
        chs = cfg.stage_channels
        E = cfg.embed_dim
        self.down_blocks = []
        cin = cfg.base_channels
        for i, ch in enumerate(chs):
            a = self.add(f"down{i}.res0", ResNetBlock(cin, ch, rng, dtype, temb_dim=E))
            b = self.add(f"down{i}.res1", ResNetBlock(ch, ch, rng, dtype, temb_dim=E))
            pool = self.add(f"down{i}.pool", Conv2d(ch, ch, 3, rng, dtype, stride=2))
            self.down_blocks.append((a, b, pool))
            cin = ch
        self.mid0 = self.add("mid.res0", ResNetBlock(chs[-1], chs[-1], rng, dtype, temb_dim=E))
        self.attn = (self.add("mid.attn", AttentionBlock(chs[-1], rng, dtype))
                     if cfg.attention_at_bottleneck else None)
        self.mid1 = self.add("mid.res1", ResNetBlock(chs[-1], chs[-1], rng, dtype, temb_dim=E))
        self.up_blocks = []
        cin = chs[-1]
        for i in reversed(range(len(chs))):
            ch = chs[i]
            up = self.add(f"up{i}.upsample", Upsample(cin, ch, rng, dtype))
            a = self.add(f"up{i}.res0", ResNetBlock(2 * ch, ch, rng, dtype, temb_dim=E))
            b = self.add(f"up{i}.res1", ResNetBlock(ch, ch, rng, dtype, temb_dim=E))
            self.up_blocks.append((up, a, b))
            cin = ch
        self.out_norm = self.add("out.norm", GroupNorm(cfg.base_channels, dtype))
        self.out_act = self.add("out.act", SiLU())
        self.out_conv = self.add("out.conv", Conv2d(cfg.base_channels, cfg.num_classes, 3, rng, dtype,
                                                    zero_init=True))
        self.attention_enabled = True

    def forward(self, x, temb):
        skips = []
        h = x
        for a, b, pool in self.down_blocks:
            h = b.forward(a.forward(h, temb), temb)
            skips.append(h)
            h = pool.forward(h)
        h = self.mid0.forward(h, temb)
        use_attn = self.attn is not None and self.attention_enabled
        if use_attn:
            h = self.attn.forward(h)
        h = self.mid1.forward(h, temb)
        for up, a, b in self.up_blocks:
            h = up.forward(h)
            h = np.concatenate([h, skips.pop()], axis=2)
            h = b.forward(a.forward(h, temb), temb)
        self._cache = use_attn
        return self.out_conv.forward(self.out_act.forward(self.out_norm.forward(h)))

    def backward(self, dy):
        used_attn = self._cache
        dh = self.out_norm.backward(self.out_act.backward(self.out_conv.backward(dy)))
        dskips = []
        for up, a, b in reversed(self.up_blocks):
            dh = a.backward(b.backward(dh))
            ch = dh.shape[2] // 2
            dskips.append(dh[:, :, ch:])
            dh = up.backward(np.ascontiguousarray(dh[:, :, :ch]))
        dh = self.mid1.backward(dh)
        if used_attn:
            dh = self.attn.backward(dh)
        dh = self.mid0.backward(dh)
        for (a, b, pool), dskip in zip(reversed(self.down_blocks), reversed(dskips)):
            dh = pool.backward(dh) + dskip
            dh = a.backward(b.backward(dh))
        return dh


class DenoiserNetwork(Layer):
    """Predicts the total noise in a noisy segmentation map, given the image and step."""

    def __init__(self, config, rng=None, dtype=np.float32):
        super().__init__()
        if rng is None or isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(rng)
        self.config = config
        self.dtype = np.dtype(dtype)
        c = config.base_channels
        self.F = self.add("F", _Encoder(3, c, rng, self.dtype))
        self.G = self.add("G", _Encoder(config.num_classes, c, rng, self.dtype))
        self.H = self.add("H", _UNet(config, rng, self.dtype))
        self._recorded = False
        self.zero_grad()

    @property
    def num_classes(self):
        return self.config.num_classes

    @property
    def attention_enabled(self):
        return self.H.attention_enabled

    @attention_enabled.setter
    def attention_enabled(self, flag):
        # runtime ablation switch; disabled attention parameters receive zero gradient
        self.H.attention_enabled = bool(flag)

    def parameters(self):
        return OrderedDict(self.named_parameters())

    def gradients(self):
        return OrderedDict(self.named_gradients())

    def num_parameters(self):
        return sum(p.size for _, p in self.named_parameters())

    def _check_inputs(self, noisy_seg, image):
        if noisy_seg.ndim != 3 or noisy_seg.shape[2] != self.config.num_classes:
            raise ShapeError(f"noisy segmentation must be (H, W, {self.config.num_classes}), "
                             f"got {noisy_seg.shape}")
        if image.ndim != 3 or image.shape[2] != 3:
            raise ShapeError(f"image must be (H, W, 3), got {image.shape}")
        if image.shape[:2] != noisy_seg.shape[:2]:
            raise ShapeError(f"image {image.shape[:2]} and segmentation {noisy_seg.shape[:2]} "
                             "spatial sizes differ")
        div = 2 ** self.config.depth
        if noisy_seg.shape[0] % div or noisy_seg.shape[1] % div:
            raise ShapeError(f"spatial size {noisy_seg.shape[:2]} not divisible by {div}")

    def forward(self, noisy_seg, image, t):
        noisy_seg = np.asarray(noisy_seg)
        image = np.asarray(image)
        self._check_inputs(noisy_seg, image)
        s = np.ascontiguousarray(noisy_seg, dtype=self.dtype)
        x = np.ascontiguousarray(image, dtype=self.dtype)
        temb = time_embed(t, self.config.embed_dim).astype(self.dtype)
        h = self.F.forward(x) + self.G.forward(s)
        out = self.H.forward(h, temb)
        self._recorded = True
        return out

    predict = forward

    def backward(self, grad_output):
        """Return ``{name: d loss / d param}`` for the most recent forward pass."""
        if not self._recorded:
            raise StateError("backward called without a recorded forward pass")
        g = np.ascontiguousarray(grad_output, dtype=self.dtype)
        self.zero_grad()
        dh = self.H.backward(g)
        self.F.backward(dh)
        self.G.backward(dh)
        self._recorded = False
        return self.gradients()

    def checksum(self):
        h = hashlib.sha256()
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p, dtype="<f4").tobytes())
        return h.hexdigest()


def count_parameters(config):
    """Closed-form parameter count for ``config``; independent of network construction."""

    def conv(cin, cout, k):
        return cout * cin * k * k + cout

    def norm(c):
        return 2 * c

    def res(cin, cout, temb):
        n = norm(cin) + conv(cin, cout, 3) + norm(cout) + conv(cout, cout, 3)
        if temb:
            n += config.embed_dim * cout + cout
        if cin != cout:
            n += conv(cin, cout, 1)
        return n

    c, C = config.base_channels, config.num_classes
    chs = config.stage_channels
    total = res(3, c, False) + res(c, c, False) + res(C, c, False) + res(c, c, False)
    cin = c
    for ch in chs:
        total += res(cin, ch, True) + res(ch, ch, True) + conv(ch, ch, 3)
        cin = ch
    total += 2 * res(chs[-1], chs[-1], True)
    if config.attention_at_bottleneck:
        total += norm(chs[-1]) + conv(chs[-1], 3 * chs[-1], 1) + conv(chs[-1], chs[-1], 1)
    cin = chs[-1]
    for ch in reversed(chs):
        total += conv(cin, ch, 3) + res(2 * ch, ch, True) + res(ch, ch, True)
        cin = ch
    total += norm(c) + conv(c, C, 3)
    return total
