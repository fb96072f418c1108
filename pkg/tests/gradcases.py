"""Gradient-check cases shared by the layer tests and the acceptance suite.

Each factory returns ``(layer, x, mode)`` with initialized parameters.
"""

import numpy as np

from thermoface.layers import (BatchNorm, Conv2D, Dense, Dropout, MaxPool2D, ReLU, ResidualBlock,
                               sigmoid_bce, softmax_cross_entropy)


def _init(layer, seed=0):
    rng = np.random.default_rng(seed)
    for _, sub in layer.walk():
        sub.init_params(rng)
        for key, arr in sub.params.items():
            if key in ("beta", "bias", "moving_mean"):
                sub.params[key] = rng.normal(0, 0.3, arr.shape)
            elif key in ("gamma", "moving_var"):
                sub.params[key] = rng.uniform(0.5, 1.5, arr.shape)
    return layer


def _x(shape, seed=1):
    return np.random.default_rng(seed).standard_normal(shape)


def _distinct(shape, seed=1):
    # well-separated values keep max-pool argmaxes stable under perturbation
    n = int(np.prod(shape))
    return np.random.default_rng(seed).permutation(n).reshape(shape) * 0.1


LAYER_CASES = {
    "conv2d_same": lambda: (_init(Conv2D("c", 2, 3, 3, 1, "same")), _x((2, 2, 5, 5)), "train"),
    "conv2d_valid_stride2": lambda: (_init(Conv2D("c", 3, 2, 3, 2, "valid")), _x((2, 3, 7, 6)), "train"),
    "dense": lambda: (_init(Dense("d", 6, 4)), _x((6, 6)), "train"),
    "dense_relu": lambda: (_init(Dense("d", 6, 4, activation="relu")), _x((6, 6)), "train"),
    "relu": lambda: (ReLU("r"), _x((2, 3, 4, 4)), "train"),
    "maxpool_2x2": lambda: (MaxPool2D("p"), _distinct((2, 2, 6, 6)), "train"),
    "maxpool_3x3_s2_pad1": lambda: (MaxPool2D("p", 3, 2, 1), _distinct((1, 2, 7, 7)), "train"),
    "batchnorm_train": lambda: (_init(BatchNorm("bn", 3)), _x((4, 3, 3, 3)), "train"),
    "batchnorm_eval": lambda: (_init(BatchNorm("bn", 3)), _x((2, 3, 3, 3)), "eval"),
    "dropout_fixed_mask": lambda: (Dropout("drop", 0.5), _x((4, 10)), "train"),
    "residual_projection": lambda: (_init(ResidualBlock("res", 4, 2, stride=2, projection=True)),
                                    _x((3, 4, 6, 6)), "train"),
    "residual_identity": lambda: (_init(ResidualBlock("res", 8, 2)), _x((2, 8, 4, 4)), "train"),
}


def _ce_case():
    rng = np.random.default_rng(5)
    return softmax_cross_entropy, rng.standard_normal((8, 5)), rng.integers(0, 5, 8)


def _bce_case():
    rng = np.random.default_rng(6)
    return sigmoid_bce, rng.standard_normal((40, 1)) * 2, rng.integers(0, 2, 40)


LOSS_CASES = {"softmax_cross_entropy": _ce_case, "sigmoid_bce": _bce_case}

TOLERANCE = 1e-4
N_COORDS = 32
