# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col / col2im for channel-last single images.

Patch rows are laid out as ``(kernel_row, kernel_col, channel)`` so each
inner copy is a contiguous run of ``C`` values.
"""

import numpy as np
cimport numpy as cnp
from libc.string cimport memcpy, memset

ctypedef fused real:
    float
    double


def _im2col(real[:, :, ::1] x, Py_ssize_t kh, Py_ssize_t kw,
            Py_ssize_t stride, Py_ssize_t pad, real[:, ::1] out):
    cdef Py_ssize_t H = x.shape[0], W = x.shape[1], C = x.shape[2]
    cdef Py_ssize_t Ho = (H + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - kw) // stride + 1
    cdef Py_ssize_t oy, ox, i, j, iy, ix
    cdef size_t nbytes = C * sizeof(real)
    cdef real* dst
    with nogil:
        for oy in range(Ho):
            for ox in range(Wo):
                dst = &out[oy * Wo + ox, 0]
                for i in range(kh):
                    iy = oy * stride - pad + i
                    for j in range(kw):
                        ix = ox * stride - pad + j
                        if iy < 0 or iy >= H or ix < 0 or ix >= W:
                            memset(dst, 0, nbytes)
                        else:
                            memcpy(dst, &x[iy, ix, 0], nbytes)
                        dst += C


def _col2im(real[:, ::1] cols, Py_ssize_t kh, Py_ssize_t kw,
            Py_ssize_t stride, Py_ssize_t pad, real[:, :, ::1] out):
    cdef Py_ssize_t H = out.shape[0], W = out.shape[1], C = out.shape[2]
    cdef Py_ssize_t Ho = (H + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - kw) // stride + 1
    cdef Py_ssize_t oy, ox, i, j, iy, ix, c
    cdef real* src
    cdef real* dst
    with nogil:
        for oy in range(Ho):
            for ox in range(Wo):
                src = &cols[oy * Wo + ox, 0]
                for i in range(kh):
                    iy = oy * stride - pad + i
                    for j in range(kw):
                        ix = ox * stride - pad + j
                        if iy >= 0 and iy < H and ix >= 0 and ix < W:
                            dst = &out[iy, ix, 0]
                            for c in range(C):
                                dst[c] += src[c]
                        src += C


def im2col(x, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride=1, Py_ssize_t pad=0):
    x = np.ascontiguousarray(x)
    H, W, C = x.shape
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    out = np.empty((Ho * Wo, kh * kw * C), dtype=x.dtype)
    _im2col(x, kh, kw, stride, pad, out)
    return out


def col2im(cols, shape, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride=1, Py_ssize_t pad=0):
    cols = np.ascontiguousarray(cols)
    out = np.zeros(shape, dtype=cols.dtype)
    _col2im(cols, kh, kw, stride, pad, out)
    return out
