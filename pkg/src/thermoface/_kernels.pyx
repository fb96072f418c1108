# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Every function here has a numpy twin in ``_fallback``
with the same signature and bit-identical results."""

from libc.string cimport memcpy

import numpy as np
cimport numpy as cnp

cnp.import_array()


def kalman_gains(Py_ssize_t n, double q, double r, double init_p):
    """Gain of each update step; identical for every pixel (it ignores the data)."""
    gains = np.empty(n, dtype=np.float64)
    cdef double[::1] g = gains
    cdef double p = init_p, pm, k
    cdef Py_ssize_t s
    for s in range(n):
        pm = p + q
        k = pm / (pm + r)
        g[s] = k
        p = (1.0 - k) * pm
    return gains


cdef inline Py_ssize_t _clamp(Py_ssize_t v, Py_ssize_t hi) nogil:
    return 0 if v < 0 else (hi if v > hi else v)


def kalman_denoise(const double[:, ::1] img, const cnp.int64_t[::1] dy, const cnp.int64_t[::1] dx,
                   double q, double r, double init_p):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], n = dy.shape[0]
    cdef Py_ssize_t i, j, s, reach = 0
    cdef double x
    cdef const double[::1] g = kalman_gains(n, q, r, init_p)
    for s in range(n):
        reach = max(reach, abs(dy[s]), abs(dx[s]))
    out = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t[::1] offs = np.empty(n, dtype=np.intp)
    for s in range(n):
        offs[s] = dy[s] * w + dx[s]
    cdef const double* base = &img[0, 0]
    cdef const double* c
    with nogil:
        for i in range(h):
            for j in range(w):
                x = img[i, j]
                if reach <= i < h - reach and reach <= j < w - reach:
                    c = base + i * w + j
                    for s in range(n):
                        x = x + g[s] * (c[offs[s]] - x)
                else:
                    for s in range(n):
                        x = x + g[s] * (img[_clamp(i + dy[s], h - 1), _clamp(j + dx[s], w - 1)] - x)
                o[i, j] = x
    return out


def im2col(const double[:, :, :, ::1] xp, int kh, int kw, int stride):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1], hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t oh = (hp - kh) // stride + 1, ow = (wp - kw) // stride + 1
    cdef Py_ssize_t b, ch, i, j, y, x
    out = np.empty((n, c * kh * kw, oh * ow), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef double* dst
    cdef const double* src
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        dst = &o[b, (ch * kh + i) * kw + j, 0]
                        for y in range(oh):
                            src = &xp[b, ch, y * stride + i, j]
                            if stride == 1:
                                memcpy(dst, src, ow * sizeof(double))
                            else:
                                for x in range(ow):
                                    dst[x] = src[x * stride]
                            dst += ow
    return out


def col2im(const double[:, :, ::1] cols, tuple padded_shape, int kh, int kw, int stride):
    cdef Py_ssize_t n = padded_shape[0], c = padded_shape[1]
    cdef Py_ssize_t hp = padded_shape[2], wp = padded_shape[3]
    cdef Py_ssize_t oh = (hp - kh) // stride + 1, ow = (wp - kw) // stride + 1
    cdef Py_ssize_t b, ch, i, j, y, x, row
    out = np.zeros((n, c, hp, wp), dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    for b in range(n):
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    for y in range(oh):
                        for x in range(ow):
                            o[b, ch, y * stride + i, x * stride + j] += cols[b, row, y * ow + x]
    return out


def maxpool_forward(const double[:, :, :, ::1] xp, int size, int stride):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1], hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t oh = (hp - size) // stride + 1, ow = (wp - size) // stride + 1
    cdef Py_ssize_t b, ch, y, x, i, j, best_idx, yy, xx
    cdef double best, v
    out = np.empty((n, c, oh, ow), dtype=np.float64)
    arg = np.empty((n, c, oh, ow), dtype=np.int64)
    cdef double[:, :, :, ::1] o = out
    cdef cnp.int64_t[:, :, :, ::1] a = arg
    for b in range(n):
        for ch in range(c):
            for y in range(oh):
                for x in range(ow):
                    best_idx = (y * stride) * wp + x * stride
                    best = xp[b, ch, y * stride, x * stride]
                    for i in range(size):
                        yy = y * stride + i
                        for j in range(size):
                            xx = x * stride + j
                            v = xp[b, ch, yy, xx]
                            # strict comparison keeps the first row-major maximum
                            if v > best:
                                best = v
                                best_idx = yy * wp + xx
                    o[b, ch, y, x] = best
                    a[b, ch, y, x] = best_idx
    return out, arg


def maxpool_backward(const double[:, :, :, ::1] dout, const cnp.int64_t[:, :, :, ::1] arg,
                     tuple padded_shape):
    cdef Py_ssize_t n = dout.shape[0], c = dout.shape[1], oh = dout.shape[2], ow = dout.shape[3]
    cdef Py_ssize_t hp = padded_shape[2], wp = padded_shape[3]
    cdef Py_ssize_t b, ch, y, x, idx
    out = np.zeros((n, c, hp * wp), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    for b in range(n):
        for ch in range(c):
            for y in range(oh):
                for x in range(ow):
                    idx = arg[b, ch, y, x]
                    o[b, ch, idx] += dout[b, ch, y, x]
    return out.reshape(n, c, hp, wp)


def matmul_ordered(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0], kk = a.shape[1], nn = b.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc
    out = np.empty((m, nn), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(m):
        for j in range(nn):
            acc = 0.0
            for k in range(kk):
                acc = acc + a[i, k] * b[k, j]
            o[i, j] = acc
    return out
