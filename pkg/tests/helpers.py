"""Shared oracles for the test suite."""

import numpy as np

from recdiffseg.denoiser import DenoiserConfig, DenoiserNetwork

FD_STEP = 1e-5
# Below this magnitude both the analytic and the finite-difference value are
# round-off noise (structurally zero gradients), so they are compared absolutely.
TINY_GRAD = 1e-7


def randomized_net(cfg, seed=0):
    """float64 network with every parameter randomised (the zero-initialised
    output layer would otherwise hide most gradients)."""
    net = DenoiserNetwork(cfg, seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    for name, p in net.named_parameters():
        p[...] = rng.standard_normal(p.shape) * 0.3 + (1.0 if name.endswith("gamma") else 0.0)
    return net


def gradient_check(net, size=8, t=3, entries=None, seed=0):
    """Compare analytic parameter gradients with central differences.

    Uses the scalar loss ``sum(out * R)``. ``entries`` limits the number of
    checked entries per tensor (``None`` checks every entry). Returns
    ``(max_relative_error, max_abs_error_on_tiny, checked, worst_name)``.
    """
    rng = np.random.default_rng(seed)
    C = net.config.num_classes
    s = rng.standard_normal((size, size, C))
    x = rng.random((size, size, 3))
    R = rng.standard_normal((size, size, C)) / s.size

    def loss():
        return float(np.sum(net.forward(s, x, t) * R))

    loss()
    grads = {k: v.copy() for k, v in net.backward(R).items()}
    worst, worst_name, tiny_err, checked = 0.0, None, 0.0, 0
    for name, p in net.named_parameters():
        flat = p.reshape(-1)
        idx = range(flat.size) if entries is None else rng.choice(flat.size, min(entries, flat.size), replace=False)
        g = grads[name].reshape(-1)
        for i in idx:
            old = flat[i]
            flat[i] = old + FD_STEP
            a = loss()
            flat[i] = old - FD_STEP
            b = loss()
            flat[i] = old
            fd = (a - b) / (2 * FD_STEP)
            an = g[i]
            checked += 1
            m = max(abs(fd), abs(an))
            if m < TINY_GRAD:
                tiny_err = max(tiny_err, abs(fd - an))
                continue
            rel = abs(fd - an) / m
            if rel > worst:
                worst, worst_name = rel, name
    return worst, tiny_err, checked, worst_name


def tiny_config(**kw):
    base = dict(num_classes=3, base_channels=8, depth=1, embed_dim=8)
    base.update(kw)
    return DenoiserConfig(**base)


def brute_force_scores(pred, truth, num_classes):
    """Per-class IoU and F1 from explicit pixel-coordinate sets, as exact fractions.

    Classes absent from both maps map to ``None``.
    """
    from fractions import Fraction

    h, w = len(truth), len(truth[0])
    iou, f1 = {}, {}
    for c in range(num_classes):
        P = {(y, x) for y in range(h) for x in range(w) if pred[y][x] == c}
        T = {(y, x) for y in range(h) for x in range(w) if truth[y][x] == c}
        if not P and not T:
            iou[c] = f1[c] = None
            continue
        iou[c] = Fraction(len(P & T), len(P | T))
        f1[c] = Fraction(2 * len(P & T), len(P) + len(T))
    present = [v for v in iou.values() if v is not None]
    miou = sum(present, Fraction(0)) / len(present) if present else None
    return iou, f1, miou
