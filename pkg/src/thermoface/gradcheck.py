"""Central finite-difference checks for layer and loss gradients."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np

from .layers import ForwardContext, Layer


_U = np.finfo(np.float64).eps


def rel_error(analytic: float, numeric: float, floor: float = 1e-6, noise: float = 0.0) -> float:
    """max(|a - n| - noise, 0) / max(|a|, |n|, floor).

    ``noise`` is the rounding uncertainty of the numeric estimate; a
    discrepancy below it carries no information. Together with the floor it
    keeps exactly-zero gradients (e.g. a conv bias feeding train-mode batch
    norm) from dividing finite-difference roundoff by itself.
    """
    return max(abs(analytic - numeric) - noise, 0.0) / max(abs(analytic), abs(numeric), floor)


def fd_noise(terms_abs_sum: float, eps: float) -> float:
    """Rounding bound of a central difference of a sum with the given sum of |terms|."""
    return _U * terms_abs_sum / eps


def _coords(arr: np.ndarray, n: int, rng: np.random.Generator) -> list[tuple[int, ...]]:
    if arr.size <= n:
        flat = np.arange(arr.size)
    else:
        flat = rng.choice(arr.size, size=n, replace=False)
    return [np.unravel_index(int(i), arr.shape) for i in flat]


def _central(f: Callable[[], float], arr: np.ndarray, idx, eps: float) -> float:
    orig = arr[idx]
    arr[idx] = orig + eps
    fp = f()
    arr[idx] = orig - eps
    fm = f()
    arr[idx] = orig
    return (fp - fm) / (2 * eps)


def layer_param_arrays(layer: Layer) -> dict[str, np.ndarray]:
    """Parameter arrays keyed the way ``layer.backward`` keys its gradients."""
    out = {}
    for path, sub in layer.walk():
        rel = path[len(layer.name) + 1:]
        for key, arr in sub.params.items():
            out[f"{rel}/{key}" if rel else key] = arr
    return out


def check_layer(layer: Layer, x: np.ndarray, mode: str = "train", seed: int = 0,
                n_coords: int = 32, eps: float = 1e-5,
                rng: np.random.Generator | None = None) -> dict[str, float]:
    """Max relative error between analytic and numeric gradients, per tensor.

    The scalar objective is ``sum(layer(x) * w)`` for a fixed random ``w``.
    Each evaluation uses a fresh context with the same seed, so dropout
    masks are identical across the perturbed passes.
    """
    rng = rng or np.random.default_rng(1234)
    x = np.array(x, dtype=np.float64)
    ctx = ForwardContext(mode, seed)
    y = layer.forward(x, ctx)
    w = rng.standard_normal(y.shape)
    dx, grads = layer.backward(w, ctx)

    def objective() -> float:
        return float(np.sum(layer.forward(x, ForwardContext(mode, seed)) * w))

    noise = fd_noise(float(np.sum(np.abs(y * w))), eps)
    errors = {"input": max(rel_error(dx[i], _central(objective, x, i, eps), noise=noise)
                           for i in _coords(x, n_coords, rng))}
    for name, arr in layer_param_arrays(layer).items():
        if name not in grads:
            continue
        g = grads[name]
        errors[name] = max(rel_error(g[i], _central(objective, arr, i, eps), noise=noise)
                           for i in _coords(arr, n_coords, rng))
    return errors


def check_loss(loss_fn, logits: np.ndarray, labels, n_coords: int = 32, eps: float = 1e-5,
               rng: np.random.Generator | None = None) -> float:
    rng = rng or np.random.default_rng(1234)
    logits = np.array(logits, dtype=np.float64)
    _, grad = loss_fn(logits, labels)
    return max(rel_error(grad[i], _central(lambda: loss_fn(logits, labels)[0], logits, i, eps))
               for i in _coords(logits, n_coords, rng))
