"""Dense float64 tensors.

A tensor is a C-ordered ``numpy.ndarray`` of dtype float64. The helpers here
add the validation the rest of the package relies on; everything else uses
numpy directly.
"""

from collections.abc import Callable, Sequence

import numpy as np

from . import kernels

Tensor = np.ndarray


def _check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(d) for d in shape)
    if not shape or any(d < 1 for d in shape):
        raise ValueError(f"all dimensions must be >= 1, got {shape}")
    return shape


def tensor_new(shape: Sequence[int], fill: float | Sequence[float] = 0.0) -> Tensor:
    """Create a tensor of ``shape`` filled with a scalar or a flat value list."""
    shape = _check_shape(shape)
    if np.isscalar(fill):
        return np.full(shape, float(fill), dtype=np.float64)
    values = np.asarray(fill, dtype=np.float64).ravel()
    size = int(np.prod(shape))
    if values.size != size:
        raise ValueError(f"{values.size} values cannot fill shape {shape} ({size} elements)")
    return values.reshape(shape).copy()


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Rank-2 matrix product with a fixed ascending-index reduction order.

    Unlike BLAS, the summation order does not depend on threading or blocking,
    so results are bit-reproducible across machines.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects rank-2 operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return kernels.matmul_ordered(a, b)


def map_elementwise(t: Tensor, f: Callable[[float], float]) -> Tensor:
    if isinstance(f, np.ufunc):
        return f(np.asarray(t, dtype=np.float64))
    flat = np.fromiter((f(float(v)) for v in np.asarray(t).ravel()), dtype=np.float64,
                       count=np.size(t))
    return flat.reshape(np.shape(t))


def reshape(t: Tensor, new_shape: Sequence[int]) -> Tensor:
    new_shape = _check_shape(new_shape)
    if int(np.prod(new_shape)) != t.size:
        raise ValueError(f"cannot reshape {t.shape} ({t.size} elements) to {new_shape}")
    return np.ascontiguousarray(t).reshape(new_shape).copy()
