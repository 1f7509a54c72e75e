"""Data handling: one-hot encoding, resizing, augmentation, PNG I/O and a
synthetic multi-class shapes generator.

Images are float arrays ``(H, W, 3)`` in ``[0, 1]``; label maps are integer
arrays ``(H, W)`` of class indices. Sizes are passed as ``(new_w, new_h)``.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from PIL import Image

from .errors import IngestionError, InvalidParameterError, ValidationError


@dataclass
class Sample:
    image: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.image.shape[:2] != self.labels.shape:
            raise ValidationError(f"image {self.image.shape[:2]} and labels {self.labels.shape} differ")


@dataclass(frozen=True)
class ClassPalette:
    entries: tuple  # ((name, (r, g, b)), ...)

    def __post_init__(self):
        colors = [tuple(c) for _, c in self.entries]
        if len(set(colors)) != len(colors):
            raise InvalidParameterError("palette colors must be unique")

    def __len__(self):
        return len(self.entries)

    @property
    def names(self):
        return [name for name, _ in self.entries]

    @property
    def colors(self):
        return np.array([c for _, c in self.entries], dtype=np.uint8)

    def to_text(self):
        return "".join(f"{name}\t{r} {g} {b}\n" for name, (r, g, b) in self.entries)

    @classmethod
    def from_text(cls, text):
        entries = []
        for line in text.splitlines():
            if not line.strip():
                continue
            name, rgb = line.rsplit("\t", 1)
            entries.append((name, tuple(int(v) for v in rgb.split())))
        return cls(tuple(entries))


# Class names are UAVid's; the colors are the ones used by the UAVid label files.
UAVID_PALETTE = ClassPalette((
    ("Building", (128, 0, 0)),
    ("Tree", (0, 128, 0)),
    ("Clutter", (0, 0, 0)),
    ("Road", (128, 64, 128)),
    ("Low Vegetation", (128, 128, 0)),
    ("Static Car", (192, 0, 192)),
    ("Moving Car", (64, 0, 128)),
    ("Human", (64, 64, 0)),
))

_SHAPE_NAMES = ("background", "rectangle", "disc", "triangle")
_SHAPE_LABEL_COLORS = (
    (0, 0, 0), (230, 25, 75), (60, 180, 75), (0, 130, 200), (255, 225, 25),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230), (210, 245, 60),
)


def shapes_palette(num_classes):
    """Palette used for synthetic-shapes label PNGs."""
    if not 2 <= num_classes <= len(_SHAPE_LABEL_COLORS):
        raise InvalidParameterError(f"shapes palette supports 2..{len(_SHAPE_LABEL_COLORS)} classes")
    entries = []
    for c in range(num_classes):
        name = _SHAPE_NAMES[c] if c < len(_SHAPE_NAMES) else f"{_SHAPE_NAMES[1 + (c - 1) % 3]}_{c}"
        entries.append((name, _SHAPE_LABEL_COLORS[c]))
    return ClassPalette(tuple(entries))


def one_hot_encode(labels, num_classes, dtype=np.float32):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        bad = labels[(labels < 0) | (labels >= num_classes)][0]
        raise ValidationError(f"label {bad} outside [0, {num_classes})")
    return (labels[..., None] == np.arange(num_classes)).astype(dtype)


def is_one_hot(seg):
    seg = np.asarray(seg)
    return bool(np.all((seg == 0) | (seg == 1)) and np.all(seg.sum(axis=-1) == 1))


def _check_size(new_w, new_h):
    if new_w < 1 or new_h < 1:
        raise InvalidParameterError(f"target size must be >= 1, got {new_w}x{new_h}")


def _bilinear_axis(n_in, n_out):
    # half-pixel centres: src = (i + 0.5) * n_in / n_out - 0.5, clamped to the edge
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_image(image, new_w, new_h):
    """Bilinear resize of an ``(H, W)`` or ``(H, W, C)`` float array."""
    _check_size(new_w, new_h)
    image = np.asarray(image)
    h, w = image.shape[:2]
    if (h, w) == (new_h, new_w):
        return image.copy()
    dtype = image.dtype if np.issubdtype(image.dtype, np.floating) else np.float64
    out = image.astype(dtype, copy=False)
    if new_h != h:
        y0, y1, fy = _bilinear_axis(h, new_h)
        fy = fy.astype(dtype).reshape((-1,) + (1,) * (out.ndim - 1))
        a = out[y0]
        out = a + (out[y1] - a) * fy
    if new_w != w:
        x0, x1, fx = _bilinear_axis(w, new_w)
        fx = fx.astype(dtype).reshape((1, -1) + (1,) * (out.ndim - 2))
        a = out[:, x0]
        out = a + (out[:, x1] - a) * fx
    # rounding in the blend may step an ulp outside the input range
    return np.clip(out, image.min(), image.max(), out=out) if image.size else out


def _nearest_axis(n_in, n_out):
    return np.minimum(np.floor((np.arange(n_out) + 0.5) * (n_in / n_out)).astype(np.intp), n_in - 1)


def resize_labels(labels, new_w, new_h):
    """Nearest-neighbour resize with half-pixel centres; never invents classes."""
    _check_size(new_w, new_h)
    labels = np.asarray(labels)
    h, w = labels.shape[:2]
    return labels[_nearest_axis(h, new_h)][:, _nearest_axis(w, new_w)]


@dataclass(frozen=True)
class AugmentConfig:
    hflip_p: float = 0.5
    vflip_p: float = 0.0
    contrast_p: float = 0.5
    saturation_p: float = 0.5
    hue_p: float = 0.5
    contrast_factor: float = 0.5
    saturation_factor: float = 0.5
    hue_factor: float = 0.05

    def __post_init__(self):
        for name in ("hflip_p", "vflip_p", "contrast_p", "saturation_p", "hue_p"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidParameterError(f"{name} must be in [0, 1]")
        for name in ("contrast_factor", "saturation_factor", "hue_factor"):
            if getattr(self, name) < 0:
                raise InvalidParameterError(f"{name} must be >= 0")

    @classmethod
    def vaihingen(cls):
        return cls(vflip_p=0.5)

    @classmethod
    def disabled(cls):
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)


_LUMA = np.array([0.299, 0.587, 0.114])


def adjust_contrast(image, factor):
    mean = float(np.mean(image @ _LUMA))
    return np.clip(mean + factor * (image - mean), 0.0, 1.0)


def adjust_saturation(image, factor):
    gray = (image @ _LUMA)[..., None]
    return np.clip(gray + factor * (image - gray), 0.0, 1.0)


def adjust_hue(image, shift):
    """Rotate hue by ``shift`` of a full cycle."""
    hsv = rgb_to_hsv(np.clip(image, 0.0, 1.0))
    hsv[..., 0] = np.mod(hsv[..., 0] + shift, 1.0)
    return hsv_to_rgb(hsv)


def augment(sample, cfg, rng):
    """Random flips (image and labels jointly) and colour jitter (image only).

    Every transform consumes the same random draws whether or not it fires,
    so the rng stream is independent of the outcomes.
    """
    image, labels = sample.image, sample.labels
    dtype = image.dtype
    draws = rng.random(5)
    amounts = rng.uniform(-1.0, 1.0, 3)
    if draws[0] < cfg.hflip_p:
        image, labels = image[:, ::-1], labels[:, ::-1]
    if draws[1] < cfg.vflip_p:
        image, labels = image[::-1], labels[::-1]
    if draws[2] < cfg.contrast_p:
        image = adjust_contrast(image, 1.0 + cfg.contrast_factor * amounts[0])
    if draws[3] < cfg.saturation_p:
        image = adjust_saturation(image, 1.0 + cfg.saturation_factor * amounts[1])
    if draws[4] < cfg.hue_p:
        image = adjust_hue(image, cfg.hue_factor * amounts[2])
    return Sample(np.ascontiguousarray(image, dtype=dtype), np.ascontiguousarray(labels))


# -- synthetic shapes ---------------------------------------------------------

_CLASS_TINTS = np.array([
    (0.45, 0.45, 0.42), (0.85, 0.30, 0.22), (0.25, 0.72, 0.30), (0.22, 0.35, 0.85),
    (0.90, 0.80, 0.20), (0.80, 0.45, 0.85), (0.20, 0.80, 0.80), (0.95, 0.55, 0.15),
    (0.55, 0.30, 0.15), (0.60, 0.90, 0.55),
])


def _shape_mask(kind, h, w, rng):
    yy, xx = np.mgrid[0:h, 0:w]
    if kind == 0:  # axis-aligned rectangle
        rh, rw = rng.integers(max(3, h // 8), max(4, h // 3) + 1), rng.integers(max(3, w // 8), max(4, w // 3) + 1)
        y, x = rng.integers(0, h - rh + 1), rng.integers(0, w - rw + 1)
        return (yy >= y) & (yy < y + rh) & (xx >= x) & (xx < x + rw)
    if kind == 1:  # disc
        r = rng.uniform(max(2.0, min(h, w) / 14), max(3.0, min(h, w) / 6))
        cy, cx = rng.uniform(r, h - r), rng.uniform(r, w - r)
        return (yy + 0.5 - cy) ** 2 + (xx + 0.5 - cx) ** 2 <= r * r
    # upright triangle inside a random box
    bh, bw = rng.integers(max(4, h // 6), max(5, h // 3) + 1), rng.integers(max(4, w // 6), max(5, w // 3) + 1)
    y, x = rng.integers(0, h - bh + 1), rng.integers(0, w - bw + 1)
    fy = (yy + 0.5 - y) / bh
    fx = (xx + 0.5 - x) / bw
    return (fy >= 0) & (fy <= 1) & (np.abs(fx - 0.5) <= 0.5 * fy)


def _background(h, w, rng):
    coarse = rng.uniform(-1.0, 1.0, (5, 5, 3))
    texture = resize_image(coarse, w, h) * 0.08
    tint = _CLASS_TINTS[0] + rng.uniform(-0.05, 0.05, 3)
    return tint + texture


def generate_shapes_dataset(n, w, h, num_classes, seed):
    """Random non-overlapping rectangles (class 1), discs (2) and triangles (3).

    Class 0 is a textured background; classes above 3 reuse the three shape
    kinds with their own colours. Each sample holds 1..4 shapes and, when
    possible, at least one shape of every foreground class. Images are
    quantised to 8 bits so they survive a PNG round trip unchanged.
    """
    if num_classes < 2:
        raise InvalidParameterError("need at least 2 classes (class 0 is background)")
    if num_classes > len(_CLASS_TINTS):
        raise InvalidParameterError(f"at most {len(_CLASS_TINTS)} classes supported")
    if n < 0 or w < 8 or h < 8:
        raise InvalidParameterError("n must be >= 0 and images at least 8x8")
    rng = np.random.default_rng(seed)
    foreground = np.arange(1, num_classes)
    required = min(len(foreground), 4)
    samples = []
    for _ in range(n):
        image = _background(h, w, rng)
        labels = np.zeros((h, w), dtype=np.int64)
        taken = np.zeros((h, w), dtype=bool)
        count = int(rng.integers(max(1, required), 5))
        classes = list(rng.permutation(foreground)[:required])
        classes += list(rng.choice(foreground, size=count - required))
        for cls in classes:
            kind = (int(cls) - 1) % 3
            for _attempt in range(60):
                mask = _shape_mask(kind, h, w, rng)
                grown = mask.copy()
                grown[1:] |= mask[:-1]
                grown[:-1] |= mask[1:]
                grown[:, 1:] |= mask[:, :-1]
                grown[:, :-1] |= mask[:, 1:]
                if mask.any() and not (grown & taken).any():
                    color = _CLASS_TINTS[cls] + rng.uniform(-0.08, 0.08, 3)
                    image[mask] = color
                    labels[mask] = cls
                    taken |= mask
                    break
        image = image + rng.normal(0.0, 0.03, image.shape)
        image = np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0
        samples.append(Sample(image.astype(np.float32), labels))
    return samples


# -- PNG I/O ------------------------------------------------------------------

def save_image_png(image, path):
    arr = np.round(np.clip(np.asarray(image), 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_image_png(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such image: {path}")
    with Image.open(path) as im:
        return (np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0)


def save_label_png(labels, path, palette):
    """Write a label map as a paletted PNG (pixel values are class indices)."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= len(palette)):
        raise ValidationError(f"label map has indices outside the {len(palette)}-class palette")
    im = Image.fromarray(labels.astype(np.uint8), mode="P")
    flat = palette.colors.reshape(-1).tolist()
    im.putpalette(flat + [0] * (768 - len(flat)))
    im.save(path, format="PNG")


def load_label_png(path, palette):
    """Read a label PNG (paletted or RGB) and map its colours to class indices."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such label file: {path}")
    with Image.open(path) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.uint8)
    code = (rgb[..., 0].astype(np.int64) << 16) | (rgb[..., 1].astype(np.int64) << 8) | rgb[..., 2]
    colors = palette.colors.astype(np.int64)
    keys = (colors[:, 0] << 16) | (colors[:, 1] << 8) | colors[:, 2]
    order = np.argsort(keys)
    pos = np.clip(np.searchsorted(keys[order], code), 0, len(keys) - 1)
    found = keys[order][pos] == code
    if not found.all():
        y, x = np.argwhere(~found)[0]
        raise IngestionError(f"{path}: color {tuple(int(v) for v in rgb[y, x])} at pixel (x={x}, y={y}) "
                             "is not in the palette")
    return order[pos]


def load_png_pair(image_path, label_path, palette):
    return Sample(load_image_png(image_path), load_label_png(label_path, palette))


# -- dataset directories ------------------------------------------------------
#   <root>/palette.txt
#   <root>/<split>/manifest.txt      one file stem per line
#   <root>/<split>/images/<stem>.png
#   <root>/<split>/labels/<stem>.png

def write_dataset(samples, root, split, palette):
    root = Path(root)
    img_dir, lab_dir = root / split / "images", root / split / "labels"
    img_dir.mkdir(parents=True, exist_ok=True)
    lab_dir.mkdir(parents=True, exist_ok=True)
    (root / "palette.txt").write_text(palette.to_text())
    stems = [f"{i:05d}" for i in range(len(samples))]
    for stem, s in zip(stems, samples):
        save_image_png(s.image, img_dir / f"{stem}.png")
        save_label_png(s.labels, lab_dir / f"{stem}.png", palette)
    (root / split / "manifest.txt").write_text("".join(f"{s}\n" for s in stems))
    return stems


def read_palette(root):
    path = Path(root) / "palette.txt"
    if not path.exists():
        raise FileNotFoundError(f"missing palette file {path}")
    return ClassPalette.from_text(path.read_text())


def read_manifest(root, split):
    path = Path(root) / split / "manifest.txt"
    if not path.exists():
        raise FileNotFoundError(f"missing manifest {path}")
    return [line.strip() for line in path.read_text().splitlines() if line.strip()]


def read_dataset(root, split, palette=None):
    root = Path(root)
    palette = palette or read_palette(root)
    stems = read_manifest(root, split)
    samples = [load_png_pair(root / split / "images" / f"{s}.png", root / split / "labels" / f"{s}.png", palette)
               for s in stems]
    return samples, stems, palette
