"""Kernel backend selection.

The compiled Cython module is used when it imports; otherwise (or when
``THERMOFACE_PURE=1`` is set) the numpy fallback is used. Call sites import
from here and never from either backend directly.
"""

import logging
import os

import numpy as np

from . import _fallback

log = logging.getLogger(__name__)

_compiled = None
if os.environ.get("THERMOFACE_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        log.debug("compiled kernels unavailable; using numpy fallback")

BACKEND = "cython" if _compiled is not None else "numpy"
_impl = _compiled if _compiled is not None else _fallback


def _c64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def kalman_denoise(img, dy, dx, q, r, init_p):
    return _impl.kalman_denoise(_c64(img), np.ascontiguousarray(dy, dtype=np.int64),
                                np.ascontiguousarray(dx, dtype=np.int64),
                                float(q), float(r), float(init_p))


def im2col(xp, kh, kw, stride):
    return _impl.im2col(_c64(xp), kh, kw, stride)


def col2im(cols, padded_shape, kh, kw, stride):
    return _impl.col2im(_c64(cols), tuple(int(s) for s in padded_shape), kh, kw, stride)


def maxpool_forward(xp, size, stride):
    return _impl.maxpool_forward(_c64(xp), size, stride)


def maxpool_backward(dout, arg, padded_shape):
    return _impl.maxpool_backward(_c64(dout), np.ascontiguousarray(arg, dtype=np.int64),
                                  tuple(int(s) for s in padded_shape))


def matmul_ordered(a, b):
    return _impl.matmul_ordered(_c64(a), _c64(b))
