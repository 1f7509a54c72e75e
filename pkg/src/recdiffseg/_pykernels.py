"""Numpy implementations of the convolution data-movement kernels.

Same contract as the compiled ``_ckernels`` module; used when the extension
is not built or when ``RECDIFFSEG_PURE_PYTHON`` is set.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, kh, kw, stride=1, pad=0):
    """Unfold an (H, W, C) array into (Ho*Wo, kh*kw*C) patch rows."""
    H, W, C = x.shape
    if pad:
        x = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(x, (kh, kw), axis=(0, 1))[::stride, ::stride]
    Ho, Wo = win.shape[0], win.shape[1]
    # (Ho, Wo, C, kh, kw) -> (Ho, Wo, kh, kw, C)
    return np.ascontiguousarray(win.transpose(0, 1, 3, 4, 2)).reshape(Ho * Wo, kh * kw * C)


def col2im(cols, shape, kh, kw, stride=1, pad=0):
    """Scatter-add patch rows back to an (H, W, C) array; adjoint of im2col."""
    H, W, C = shape
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    out = np.zeros((H + 2 * pad, W + 2 * pad, C), dtype=cols.dtype)
    cols = cols.reshape(Ho, Wo, kh, kw, C)
    for i in range(kh):
        for j in range(kw):
            out[i:i + stride * Ho:stride, j:j + stride * Wo:stride] += cols[:, :, i, j]
    if pad:
        out = out[pad:pad + H, pad:pad + W]
    return np.ascontiguousarray(out)
