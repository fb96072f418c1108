"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--quick]

Prints the best-of-``repeat`` wall time per kernel and backend, and checks
that both backends return identical results.
"""

import argparse
import sys
import timeit

import numpy as np

from thermoface import _fallback, kernels
from thermoface.kalman import window_offsets


def cases(quick: bool):
    rng = np.random.default_rng(0)
    side = 64 if quick else 128
    x = rng.standard_normal((8, 16, side, side))
    img = rng.random((side * 2, side * 2))
    dy, dx = window_offsets(5)
    pooled = (8, 16, side // 2, side // 2)
    _, arg = _fallback.maxpool_forward(x, 2, 2)
    cols = _fallback.im2col(x, 3, 3, 1)
    a, b = rng.standard_normal((96, 128)), rng.standard_normal((128, 64))
    return {
        "kalman_denoise 5x5": lambda k: k.kalman_denoise(img, dy, dx, 1e-4, 0.01, 1.0),
        "im2col 3x3": lambda k: k.im2col(x, 3, 3, 1),
        "col2im 3x3": lambda k: k.col2im(cols, x.shape, 3, 3, 1),
        "maxpool fwd 2/2": lambda k: k.maxpool_forward(x, 2, 2),
        "maxpool bwd 2/2": lambda k: k.maxpool_backward(np.ones(pooled), arg, x.shape),
        "matmul ordered": lambda k: k.matmul_ordered(a, b),
    }


def _same(u, v):
    if isinstance(u, tuple):
        return all(np.array_equal(p, q) for p, q in zip(u, v))
    return np.array_equal(u, v)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true", help="smaller inputs")
    args = ap.parse_args(argv)
    compiled = kernels._compiled
    if compiled is None:
        print("compiled kernels unavailable; nothing to compare", file=sys.stderr)
        return 1
    print(f"{'kernel':<20}{'cython ms':>11}{'numpy ms':>11}{'speedup':>9}  identical")
    for name, fn in cases(args.quick).items():
        times = {}
        for label, impl in (("cython", compiled), ("numpy", _fallback)):
            times[label] = min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat)) * 1e3
        same = _same(fn(compiled), fn(_fallback))
        print(f"{name:<20}{times['cython']:>11.2f}{times['numpy']:>11.2f}"
              f"{times['numpy'] / times['cython']:>8.1f}x  {same}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
