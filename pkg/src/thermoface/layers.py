"""Layers with explicit forward and backward passes.

Layers hold their parameters in ``layer.params`` (float64 arrays keyed by
short names such as ``"weight"``). Activations needed by ``backward`` are
cached in a :class:`ForwardContext`, so a layer object can be shared by many
independent forward passes. ``backward`` returns the input gradient and a
dict of parameter gradients; composite layers prefix their children's keys
with ``"child_name/"``.

Tensors are channel-first: images are ``[N, C, H, W]``.
"""

from __future__ import annotations

import math
from collections.abc import Iterator

import numpy as np

from . import kernels


class MissingCacheError(RuntimeError):
    """Raised when ``backward`` is called without a matching ``forward``."""


class ForwardContext:
    """Mode, dropout randomness and activation cache for one forward/backward pass."""

    def __init__(self, mode: str = "train", rng_seed: int = 0):
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        self.mode = mode
        self.rng_seed = rng_seed
        self.cache: dict[int, dict] = {}
        self._rng: np.random.Generator | None = None

    @property
    def training(self) -> bool:
        return self.mode == "train"

    @property
    def rng(self) -> np.random.Generator:
        if not self.training:
            raise RuntimeError("eval-mode passes must not draw random numbers")
        if self._rng is None:
            self._rng = np.random.default_rng(self.rng_seed)
        return self._rng

    def save(self, layer: Layer, **values) -> None:
        self.cache[id(layer)] = values

    def load(self, layer: Layer) -> dict:
        try:
            return self.cache[id(layer)]
        except KeyError:
            raise MissingCacheError(f"no forward cache for layer {layer.name!r}") from None


class Layer:
    kind = "layer"
    trainable_keys: tuple[str, ...] = ()

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, np.ndarray] = {}
        self.children: list[Layer] = []

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {}

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        """Shape without the batch dimension."""
        return in_shape

    def init_params(self, rng: np.random.Generator) -> None:
        for child in self.children:
            child.init_params(rng)

    def forward(self, x: np.ndarray, ctx: ForwardContext) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray, ctx: ForwardContext) -> tuple[np.ndarray, dict]:
        raise NotImplementedError

    def walk(self, prefix: str = "") -> Iterator[tuple[str, Layer]]:
        """Yield ``(path, layer)`` for this layer and all descendants, depth first."""
        path = f"{prefix}{self.name}"
        yield path, self
        for child in self.children:
            yield from child.walk(path + "/")

    def named_param_shapes(self, prefix: str = "") -> Iterator[tuple[str, tuple[int, ...], bool]]:
        """Yield ``(full_name, shape, trainable)`` without allocating anything."""
        for path, layer in self.walk(prefix):
            for key, shape in layer.param_shapes().items():
                yield f"{path}/{key}", shape, key in layer.trainable_keys

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


def _he_normal(rng, shape, fan_in):
    return rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)


def _prefixed(name: str, grads: dict) -> dict:
    return {f"{name}/{k}": v for k, v in grads.items()}


# --- leaves -----------------------------------------------------------------

class Conv2D(Layer):
    """2-D cross-correlation via im2col; weights are ``[out_c, in_c, kh, kw]``."""

    kind = "conv2d"
    trainable_keys = ("weight", "bias")

    def __init__(self, name, in_channels, filters, kernel_size=3, stride=1, padding="same",
                 use_bias=True):
        super().__init__(name)
        self.in_channels = in_channels
        self.filters = filters
        self.kernel_size = kernel_size
        self.stride = stride
        if padding == "same":
            self.pad = kernel_size // 2
        elif padding == "valid":
            self.pad = 0
        elif isinstance(padding, int) and padding >= 0:
            self.pad = padding
        else:
            raise ValueError(f"padding must be 'same', 'valid' or a non-negative int, got {padding!r}")
        self.use_bias = use_bias
        self.trainable_keys = ("weight", "bias") if use_bias else ("weight",)

    def param_shapes(self):
        k = self.kernel_size
        shapes = {"weight": (self.filters, self.in_channels, k, k)}
        if self.use_bias:
            shapes["bias"] = (self.filters,)
        return shapes

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_channels:
            raise ValueError(f"{self.name}: expected {self.in_channels} input channels, got {c}")
        k, p, s = self.kernel_size, self.pad, self.stride
        if h + 2 * p < k or w + 2 * p < k:
            raise ValueError(f"{self.name}: kernel {k} larger than padded input {h + 2 * p}x{w + 2 * p}")
        return (self.filters, (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)

    def init_params(self, rng):
        k = self.kernel_size
        self.params["weight"] = _he_normal(rng, self.param_shapes()["weight"], self.in_channels * k * k)
        if self.use_bias:
            self.params["bias"] = np.zeros(self.filters)

    def forward(self, x, ctx):
        _, oh, ow = self.output_shape(x.shape[1:])
        p = self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        cols = kernels.im2col(xp, self.kernel_size, self.kernel_size, self.stride)
        w = self.params["weight"].reshape(self.filters, -1)
        out = np.matmul(w, cols)
        if self.use_bias:
            out += self.params["bias"][None, :, None]
        ctx.save(self, cols=cols, padded_shape=xp.shape)
        return out.reshape(x.shape[0], self.filters, oh, ow)

    def backward(self, dy, ctx):
        c = ctx.load(self)
        n = dy.shape[0]
        dy2 = dy.reshape(n, self.filters, -1)
        w = self.params["weight"].reshape(self.filters, -1)
        grads = {"weight": np.tensordot(dy2, c["cols"], axes=([0, 2], [0, 2])).reshape(self.params["weight"].shape)}
        if self.use_bias:
            grads["bias"] = dy2.sum(axis=(0, 2))
        dcols = np.matmul(w.T, dy2)
        k = self.kernel_size
        dxp = kernels.col2im(dcols, c["padded_shape"], k, k, self.stride)
        p = self.pad
        dx = dxp[:, :, p:dxp.shape[2] - p, p:dxp.shape[3] - p] if p else dxp
        return np.ascontiguousarray(dx), grads


class MaxPool2D(Layer):
    """Max pooling; padded border cells never win (padding value is -inf)."""

    kind = "maxpool"

    def __init__(self, name, size=2, stride=2, pad=0):
        super().__init__(name)
        self.size, self.stride, self.pad = size, stride, pad

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if self.pad == 0 and self.size == self.stride and (h % self.size or w % self.size):
            raise ValueError(f"{self.name}: spatial size {h}x{w} not divisible by pool size {self.size}")
        hp, wp = h + 2 * self.pad, w + 2 * self.pad
        if hp < self.size or wp < self.size:
            raise ValueError(f"{self.name}: input {h}x{w} smaller than pool window")
        return (c, (hp - self.size) // self.stride + 1, (wp - self.size) // self.stride + 1)

    def forward(self, x, ctx):
        self.output_shape(x.shape[1:])
        p = self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=-np.inf) if p else x
        out, arg = kernels.maxpool_forward(xp, self.size, self.stride)
        ctx.save(self, arg=arg, padded_shape=xp.shape)
        return out

    def backward(self, dy, ctx):
        c = ctx.load(self)
        dxp = kernels.maxpool_backward(dy, c["arg"], c["padded_shape"])
        p = self.pad
        dx = dxp[:, :, p:dxp.shape[2] - p, p:dxp.shape[3] - p] if p else dxp
        return np.ascontiguousarray(dx), {}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, ctx):
        mask = x > 0
        ctx.save(self, mask=mask)
        return np.where(mask, x, 0.0)

    def backward(self, dy, ctx):
        return np.where(ctx.load(self)["mask"], dy, 0.0), {}


class Dense(Layer):
    """Fully connected layer: ``y = act(x @ W + b)`` with ``W`` of shape ``[in, units]``."""

    kind = "dense"
    trainable_keys = ("weight", "bias")

    def __init__(self, name, in_features, units, activation=None):
        super().__init__(name)
        if activation not in (None, "relu"):
            raise ValueError(f"unsupported activation {activation!r}")
        self.in_features = in_features
        self.units = units
        self.activation = activation

    def param_shapes(self):
        return {"weight": (self.in_features, self.units), "bias": (self.units,)}

    def output_shape(self, in_shape):
        if in_shape != (self.in_features,):
            raise ValueError(f"{self.name}: expected input ({self.in_features},), got {in_shape}")
        return (self.units,)

    def init_params(self, rng):
        self.params["weight"] = _he_normal(rng, (self.in_features, self.units), self.in_features)
        self.params["bias"] = np.zeros(self.units)

    def forward(self, x, ctx):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ValueError(f"{self.name}: expected [N, {self.in_features}] input, got {x.shape}")
        y = x @ self.params["weight"] + self.params["bias"]
        mask = None
        if self.activation == "relu":
            mask = y > 0
            y = np.where(mask, y, 0.0)
        ctx.save(self, x=x, mask=mask)
        return y

    def backward(self, dy, ctx):
        c = ctx.load(self)
        x = c["x"]
        if c["mask"] is not None:
            dy = np.where(c["mask"], dy, 0.0)
        grads = {"weight": x.T @ dy, "bias": dy.sum(axis=0)}
        return dy @ self.params["weight"].T, grads


class Dropout(Layer):
    """Inverted dropout; identity in eval mode."""

    kind = "dropout"

    def __init__(self, name, rate=0.5):
        super().__init__(name)
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, ctx):
        if not ctx.training or self.rate == 0.0:
            ctx.save(self, scale=None)
            return x
        keep = ctx.rng.random(x.shape) >= self.rate
        scale = keep / (1.0 - self.rate)
        ctx.save(self, scale=scale)
        return x * scale

    def backward(self, dy, ctx):
        scale = ctx.load(self)["scale"]
        return (dy if scale is None else dy * scale), {}


class BatchNorm(Layer):
    """Per-channel batch normalization over (N, H, W) of a ``[N, C, H, W]`` input.

    ``moving_mean`` / ``moving_var`` are non-trainable and updated in train
    mode as ``m <- momentum * m + (1 - momentum) * batch_stat`` (biased variance).
    """

    kind = "batchnorm"
    trainable_keys = ("gamma", "beta")

    def __init__(self, name, channels, momentum=0.99, eps=1e-5):
        super().__init__(name)
        self.channels = channels
        self.momentum = momentum
        self.eps = eps

    def param_shapes(self):
        c = (self.channels,)
        return {"gamma": c, "beta": c, "moving_mean": c, "moving_var": c}

    def output_shape(self, in_shape):
        if in_shape[0] != self.channels:
            raise ValueError(f"{self.name}: expected {self.channels} channels, got {in_shape[0]}")
        return in_shape

    def init_params(self, rng):
        c = self.channels
        self.params.update(gamma=np.ones(c), beta=np.zeros(c), moving_mean=np.zeros(c),
                           moving_var=np.ones(c))

    def forward(self, x, ctx):
        g = self.params["gamma"][None, :, None, None]
        b = self.params["beta"][None, :, None, None]
        if ctx.training:
            if x.shape[0] < 2:
                raise ValueError(f"{self.name}: train-mode batch norm needs a batch of at least 2")
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            mom = self.momentum
            self.params["moving_mean"] = mom * self.params["moving_mean"] + (1 - mom) * mean
            self.params["moving_var"] = mom * self.params["moving_var"] + (1 - mom) * var
        else:
            mean, var = self.params["moving_mean"], self.params["moving_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        ctx.save(self, xhat=xhat, inv_std=inv_std, training=ctx.training)
        return g * xhat + b

    def backward(self, dy, ctx):
        c = ctx.load(self)
        xhat, inv_std = c["xhat"], c["inv_std"][None, :, None, None]
        grads = {"gamma": (dy * xhat).sum(axis=(0, 2, 3)), "beta": dy.sum(axis=(0, 2, 3))}
        dxhat = dy * self.params["gamma"][None, :, None, None]
        if not c["training"]:
            return dxhat * inv_std, grads
        m = dy.shape[0] * dy.shape[2] * dy.shape[3]
        s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        dx = inv_std / m * (m * dxhat - s1 - xhat * s2)
        return dx, grads


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, ctx):
        ctx.save(self, shape=x.shape)
        return x.reshape(x.shape[0], -1)

    def backward(self, dy, ctx):
        return dy.reshape(ctx.load(self)["shape"]), {}


class GlobalAvgPool(Layer):
    kind = "global_avg_pool"

    def output_shape(self, in_shape):
        return (in_shape[0],)

    def forward(self, x, ctx):
        ctx.save(self, shape=x.shape)
        return x.mean(axis=(2, 3))

    def backward(self, dy, ctx):
        n, c, h, w = ctx.load(self)["shape"]
        return np.broadcast_to(dy[:, :, None, None] / (h * w), (n, c, h, w)).copy(), {}


# --- composites -------------------------------------------------------------

class Sequential(Layer):
    kind = "sequential"

    def __init__(self, name, layers):
        super().__init__(name)
        self.children = list(layers)

    def output_shape(self, in_shape):
        for layer in self.children:
            in_shape = layer.output_shape(in_shape)
        return in_shape

    def forward(self, x, ctx):
        for layer in self.children:
            x = layer.forward(x, ctx)
        return x

    def backward(self, dy, ctx):
        grads = {}
        for layer in reversed(self.children):
            dy, g = layer.backward(dy, ctx)
            grads.update(_prefixed(layer.name, g))
        return dy, grads


class ResidualBlock(Layer):
    """Bottleneck residual unit: 1x1 reduce, 3x3, 1x1 expand, plus shortcut.

    ``output = relu(branch(x) + shortcut(x))``; the shortcut is the identity,
    or a strided 1x1 convolution with batch norm when ``projection`` is set.
    The stride sits on the first 1x1 convolution.
    """

    kind = "residual_block"

    def __init__(self, name, in_channels, filters, stride=1, projection=False):
        super().__init__(name)
        out_c = 4 * filters
        if not projection and (in_channels != out_c or stride != 1):
            raise ValueError(f"{name}: identity shortcut needs in_channels == {out_c} and stride 1")
        self.in_channels, self.out_channels, self.stride = in_channels, out_c, stride
        self.branch = [
            Conv2D("1_conv", in_channels, filters, 1, stride, "valid"),
            BatchNorm("1_bn", filters), ReLU("1_relu"),
            Conv2D("2_conv", filters, filters, 3, 1, "same"),
            BatchNorm("2_bn", filters), ReLU("2_relu"),
            Conv2D("3_conv", filters, out_c, 1, 1, "valid"),
            BatchNorm("3_bn", out_c),
        ]
        self.shortcut = ([Conv2D("0_conv", in_channels, out_c, 1, stride, "valid"),
                          BatchNorm("0_bn", out_c)] if projection else [])
        self.out_relu = ReLU("out")
        self.children = [*self.shortcut, *self.branch, self.out_relu]

    @property
    def projection(self) -> bool:
        return bool(self.shortcut)

    def output_shape(self, in_shape):
        shape = in_shape
        for layer in self.branch:
            shape = layer.output_shape(shape)
        short = in_shape
        for layer in self.shortcut:
            short = layer.output_shape(short)
        if shape != short:
            raise ValueError(f"{self.name}: branch {shape} and shortcut {short} shapes differ")
        return shape

    def forward(self, x, ctx):
        h = x
        for layer in self.branch:
            h = layer.forward(h, ctx)
        s = x
        for layer in self.shortcut:
            s = layer.forward(s, ctx)
        if h.shape != s.shape:
            raise ValueError(f"{self.name}: branch {h.shape} and shortcut {s.shape} shapes differ")
        ctx.save(self, ok=True)
        return self.out_relu.forward(h + s, ctx)

    def backward(self, dy, ctx):
        ctx.load(self)
        dz, _ = self.out_relu.backward(dy, ctx)
        grads = {}
        dh = dz
        for layer in reversed(self.branch):
            dh, g = layer.backward(dh, ctx)
            grads.update(_prefixed(layer.name, g))
        ds = dz
        for layer in reversed(self.shortcut):
            ds, g = layer.backward(ds, ctx)
            grads.update(_prefixed(layer.name, g))
        return dh + ds, grads


# --- losses -----------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of ``softmax(logits)`` and its gradient w.r.t. the logits."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if k < 2:
        raise ValueError("softmax cross-entropy needs at least 2 classes")
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must be {n} class indices in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - z[rows, labels]))
    grad = np.exp(z - log_norm[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / n


def sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def sigmoid_bce(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy on a ``[N, 1]`` logit column."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    if logits.shape != y.shape:
        raise ValueError(f"logits {logits.shape} do not match {y.shape[0]} labels")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("binary labels must be 0 or 1")
    z = logits
    loss = float(np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))))
    return loss, (sigmoid(z) - y) / z.shape[0]
