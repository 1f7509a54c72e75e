"""Additive-noise forward process on segmentation maps and its inverse.

The noisy state at step ``t`` is the running estimate plus standard normal
noise scaled by ``t / T``; the network is trained to predict the *total* noise
``noisy - clean`` so that the clean map is recovered by a single subtraction.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, ShapeError


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear schedule ``beta_t = t / T`` for ``t = 0..T``."""

    T: int
    betas: np.ndarray

    def __post_init__(self):
        if self.T < 1:
            raise InvalidParameterError(f"T must be >= 1, got {self.T}")
        if len(self.betas) != self.T + 1:
            raise InvalidParameterError("betas must have T+1 entries")

    def beta(self, t):
        if not 0 <= t <= self.T:
            raise InvalidParameterError(f"time step {t} outside [0, {self.T}]")
        return float(self.betas[t])


def make_schedule(T):
    if int(T) != T or T < 1:
        raise InvalidParameterError(f"T must be a positive integer, got {T!r}")
    T = int(T)
    betas = np.arange(T + 1, dtype=np.float64) / T
    betas.setflags(write=False)
    return NoiseSchedule(T, betas)


def diffuse(seg, t, schedule, rng):
    """Add fresh noise with standard deviation ``t/T`` to ``seg``.

    Returns ``(noisy, z)`` where ``z`` is the unscaled standard normal draw.
    The draw happens even at ``t = 0`` so the rng stream does not depend on t.
    """
    scale = schedule.beta(t)
    seg = np.asarray(seg)
    dtype = seg.dtype if np.issubdtype(seg.dtype, np.floating) else np.dtype(np.float64)
    z = rng.standard_normal(seg.shape).astype(dtype, copy=False)
    noisy = seg + z * dtype.type(scale) if scale else seg.astype(dtype, copy=True)
    return noisy, z


def _check_pair(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def total_noise(noisy, clean):
    noisy, clean = _check_pair(noisy, clean)
    return noisy - clean


def recover_clean(noisy, predicted_noise):
    noisy, predicted_noise = _check_pair(noisy, predicted_noise)
    return noisy - predicted_noise


def mse_loss(predicted, target):
    """Mean squared error and its gradient with respect to ``predicted``."""
    predicted, target = _check_pair(predicted, target)
    if predicted.size == 0:
        raise InvalidParameterError("mse_loss of an empty tensor")
    diff = predicted - target
    loss = float(np.mean(np.square(diff, dtype=np.float64)))
    grad = diff * (diff.dtype.type(2.0) / diff.size)
    return loss, grad
