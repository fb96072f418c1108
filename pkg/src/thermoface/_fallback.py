"""Numpy implementations of the compiled kernels.

Same signatures and, by construction, the same floating-point operation order
as ``_kernels.pyx``, so both backends produce bit-identical arrays.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def kalman_denoise(img, dy, dx, q, r, init_p):
    h, w = img.shape
    reach = int(max(np.abs(dy).max(initial=0), np.abs(dx).max(initial=0)))
    padded = np.pad(img, reach, mode="edge")
    x = img.copy()
    for k, oy, ox in zip(kalman_gains(len(dy), q, r, init_p), dy, dx):
        z = padded[reach + oy:reach + oy + h, reach + ox:reach + ox + w]
        x = x + k * (z - x)
    return x


def kalman_gains(n, q, r, init_p):
    """Gain of each update step; identical for every pixel (it ignores the data)."""
    gains = np.empty(n)
    p = float(init_p)
    for s in range(n):
        pm = p + q
        k = pm / (pm + r)
        gains[s] = k
        p = (1.0 - k) * pm
    return gains


def im2col(xp, kh, kw, stride):
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2:4]
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * kh * kw, oh * ow)


def col2im(cols, padded_shape, kh, kw, stride):
    n, c, hp, wp = padded_shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    out = np.zeros(padded_shape, dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols[:, :, i, j]
    return out


def maxpool_forward(xp, size, stride):
    n, c, hp, wp = xp.shape
    win = sliding_window_view(xp, (size, size), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2:4]
    flat = win.reshape(n, c, oh, ow, size * size)
    local = flat.argmax(axis=-1)  # first occurrence, row-major within the window
    out = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]
    rows = np.arange(oh)[:, None] * stride + local // size
    cols = np.arange(ow)[None, :] * stride + local % size
    return np.ascontiguousarray(out), (rows * wp + cols).astype(np.int64)


def maxpool_backward(dout, arg, padded_shape):
    n, c, hp, wp = padded_shape
    out = np.zeros((n * c, hp * wp), dtype=np.float64)
    planes = np.repeat(np.arange(n * c), arg.shape[2] * arg.shape[3])
    np.add.at(out, (planes, arg.reshape(-1)), dout.reshape(-1))
    return out.reshape(padded_shape)


def matmul_ordered(a, b):
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float64)
    for k in range(a.shape[1]):
        out += a[:, k:k + 1] * b[k]
    return out
