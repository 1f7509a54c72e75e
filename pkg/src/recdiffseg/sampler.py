"""Inference by recursive denoising, with step skipping, scale ladders and ensembles."""

from dataclasses import dataclass

import numpy as np

from .dataset import resize_image
from .diffusion import diffuse, recover_clean
from .errors import InvalidParameterError, ShapeError


@dataclass(frozen=True)
class SampleConfig:
    stride: int = 1
    steps: tuple = None  # explicit executed steps; overrides stride
    M: int = 1
    ensemble_n: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.stride < 1:
            raise InvalidParameterError("stride must be >= 1")
        if self.M < 1:
            raise InvalidParameterError("M must be >= 1")
        if self.ensemble_n < 1:
            raise InvalidParameterError("ensemble_n must be >= 1")

    def step_list(self, T):
        if self.steps is not None:
            steps = [int(s) for s in self.steps]
            if not steps:
                raise InvalidParameterError("empty step list")
            if any(not 1 <= s <= T for s in steps) or any(a <= b for a, b in zip(steps, steps[1:])):
                raise InvalidParameterError(f"steps must be strictly decreasing within [1, {T}]: {steps}")
            return steps
        return list(range(T, 0, -self.stride))


def scale_ladder(width, height, M):
    """Resolutions visited per time step, coarsest first: ``W/2^(m-1) x H/2^(m-1)`` for m = M..1."""
    if M < 1:
        raise InvalidParameterError("M must be >= 1")
    div = 2 ** (M - 1)
    if width % div or height % div:
        raise ShapeError(f"{width}x{height} is not divisible by 2^(M-1) = {div}")
    return [(width // 2 ** (m - 1), height // 2 ** (m - 1)) for m in range(M, 0, -1)]


def argmax_decode(soft):
    """Per-pixel index of the largest channel; ties go to the lowest index."""
    return np.argmax(np.asarray(soft), axis=-1)


def _num_classes(net):
    return getattr(net, "num_classes", None) or net.config.num_classes


def sample(net, image, schedule, cfg, rng=None):
    """Recursive denoising from pure noise.

    ``net`` needs ``predict(noisy_seg, image, t)`` and a ``num_classes``
    attribute. Skipped steps are jumped over by the clean-estimate
    subtraction; the executed steps keep their original ``t``.
    Returns ``(soft, labels)``.
    """
    steps = cfg.step_list(schedule.T)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    image = np.asarray(image)
    H, W = image.shape[:2]
    ladder = scale_ladder(W, H, cfg.M)
    images = [resize_image(image, w, h) for w, h in ladder]
    dtype = np.dtype(getattr(net, "dtype", np.float64))
    images = [x.astype(dtype, copy=False) for x in images]
    est = rng.standard_normal((H, W, _num_classes(net))).astype(dtype, copy=False)
    for t in steps:
        for (w, h), x in zip(ladder, images):
            if est.shape[:2] != (h, w):
                est = resize_image(est, w, h)
            noisy, _ = diffuse(est, t, schedule, rng)
            est = recover_clean(noisy, net.predict(noisy, x, t))
    return est, argmax_decode(est)


def ensemble_seeds(seed, n):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)] if n > 1 else [seed]


def sample_ensemble(net, image, schedule, cfg, seeds=None):
    """Average the continuous outputs of independent runs, then decode.

    With ``ensemble_n == 1`` this is exactly ``sample``.
    """
    seeds = list(seeds) if seeds is not None else ensemble_seeds(cfg.seed, cfg.ensemble_n)
    if not seeds:
        raise InvalidParameterError("no ensemble seeds")
    total = None
    for s in seeds:  # fixed summation order keeps results bit-reproducible
        soft, _ = sample(net, image, schedule, cfg, rng=np.random.default_rng(s))
        total = soft.copy() if total is None else total + soft
    mean = total / len(seeds) if len(seeds) > 1 else total
    return mean, argmax_decode(mean)


def predict_dataset(net, samples, schedule, cfg):
    """Decoded label maps for every sample (ensembled when ``cfg.ensemble_n > 1``)."""
    out = []
    for i, s in enumerate(samples):
        # each image gets its own noise stream derived from the config seed
        seed = int(np.random.SeedSequence([cfg.seed, i]).generate_state(1)[0])
        sub = SampleConfig(cfg.stride, cfg.steps, cfg.M, cfg.ensemble_n, seed=seed)
        out.append(sample_ensemble(net, s.image, schedule, sub)[1])
    return out
