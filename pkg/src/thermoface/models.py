"""VGG-19, ResNet-50 and a small CNN, parameter accounting, summaries and weight files.

Models are built as layer trees without allocating parameters, so counting
and summarizing full-size networks is instant; :meth:`Model.initialize`
allocates and seeds the tensors.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .layers import (BatchNorm, Conv2D, Dense, Dropout, Flatten, ForwardContext, Layer,
                     MaxPool2D, ReLU, ResidualBlock, Sequential, sigmoid, sigmoid_bce, softmax,
                     softmax_cross_entropy)


class Model:
    """Ordered top-level layers; the first ``base`` layer is the feature extractor.

    Parameter names are ``"<top-level>/<child>/.../<key>"``, for example
    ``"vgg19/block1_conv1/weight"`` or ``"dense_1/bias"``.
    """

    def __init__(self, name, layers, input_shape, num_outputs, base: str | None = None):
        self.name = name
        self.layers: list[Layer] = list(layers)
        self.input_shape = tuple(input_shape)
        self.num_outputs = num_outputs
        self.base = base
        self.freeze_base = False
        self.class_names: list[str] | None = None
        self.initialized = False
        self.output_shapes()  # validates layer compatibility

    # -- structure --
    def output_shapes(self) -> list[tuple[int, ...]]:
        shapes, s = [], self.input_shape
        for layer in self.layers:
            s = layer.output_shape(s)
            shapes.append(s)
        return shapes

    def walk(self):
        for layer in self.layers:
            yield from layer.walk()

    def named_param_shapes(self):
        for layer in self.layers:
            yield from layer.named_param_shapes()

    def has_batchnorm(self) -> bool:
        return any(isinstance(layer, BatchNorm) for _, layer in self.walk())

    @property
    def binary_head(self) -> bool:
        return self.num_outputs == 1

    # -- parameters --
    def initialize(self, seed: int = 0) -> Model:
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.init_params(rng)
        self.initialized = True
        return self

    def _slots(self) -> dict[str, tuple[Layer, str]]:
        slots = {}
        for path, layer in self.walk():
            for key in layer.param_shapes():
                slots[f"{path}/{key}"] = (layer, key)
        return slots

    def parameters(self) -> dict[str, np.ndarray]:
        if not self.initialized:
            raise RuntimeError("model parameters are not initialized")
        return {name: layer.params[key] for name, (layer, key) in self._slots().items()}

    def set_parameters(self, values: dict[str, np.ndarray]) -> None:
        slots = self._slots()
        for name, arr in values.items():
            layer, key = slots[name]
            layer.params[key] = np.array(arr, dtype=np.float64)

    def trainable_names(self) -> list[str]:
        names = []
        for name, _, trainable in self.named_param_shapes():
            if not trainable:
                continue
            if self.freeze_base and self.base and name.startswith(self.base + "/"):
                continue
            names.append(name)
        return names

    # -- computation --
    def forward(self, x: np.ndarray, ctx: ForwardContext) -> np.ndarray:
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"expected input [N, {', '.join(map(str, self.input_shape))}], got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x, ctx)
        return x

    def backward(self, dy: np.ndarray, ctx: ForwardContext) -> tuple[np.ndarray, dict]:
        grads = {}
        for layer in reversed(self.layers):
            dy, g = layer.backward(dy, ctx)
            grads.update({f"{layer.name}/{k}": v for k, v in g.items()})
        return dy, grads

    def loss(self, logits, labels):
        if self.binary_head:
            return sigmoid_bce(logits, labels)
        return softmax_cross_entropy(logits, labels)

    def predict_proba(self, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
        outs = []
        for i in range(0, len(x), batch_size):
            outs.append(self.forward(x[i:i + batch_size], ForwardContext("eval")))
        logits = np.concatenate(outs)
        return sigmoid(logits) if self.binary_head else softmax(logits)

    def predict(self, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
        proba = self.predict_proba(x, batch_size)
        if self.binary_head:
            return (proba[:, 0] >= 0.5).astype(np.int64)
        return proba.argmax(axis=1)


# --- builders ---------------------------------------------------------------

def _check_hw(input_hw):
    if input_hw < 32 or input_hw % 32:
        raise ValueError(f"input size must be a positive multiple of 32, got {input_hw}")


def _head(in_features, head_width, dropout, num_outputs):
    if num_outputs < 1:
        raise ValueError("num_outputs must be >= 1")
    return [Flatten("flatten"), Dense("dense", in_features, head_width, activation="relu"),
            Dropout("dropout", dropout), Dense("dense_1", head_width, num_outputs)]


def build_vgg19(input_hw: int = 128, num_outputs: int = 1, head_width: int = 256,
                dropout: float = 0.5, in_channels: int = 3) -> Model:
    """VGG-19 convolutional base (blocks of 2-2-4-4-4 3x3 convs) plus a dense head."""
    _check_hw(input_hw)
    layers, c = [], in_channels
    for b, (reps, width) in enumerate(zip((2, 2, 4, 4, 4), (64, 128, 256, 512, 512)), start=1):
        for i in range(1, reps + 1):
            layers += [Conv2D(f"block{b}_conv{i}", c, width, 3, 1, "same"), ReLU(f"block{b}_relu{i}")]
            c = width
        layers.append(MaxPool2D(f"block{b}_pool", 2, 2))
    base = Sequential("vgg19", layers)
    side = input_hw // 32
    return Model("vgg19_classifier", [base, *_head(512 * side * side, head_width, dropout, num_outputs)],
                 (in_channels, input_hw, input_hw), num_outputs, base="vgg19")


def build_resnet50(input_hw: int = 128, num_outputs: int = 1, head_width: int = 256,
                   dropout: float = 0.5, in_channels: int = 3) -> Model:
    """ResNet-50: 7x7/2 stem, 3x3/2 max-pool, bottleneck stages [3, 4, 6, 3], dense head.

    Convolutions carry biases and every convolution is followed by batch norm,
    as in the common Keras application graph.
    """
    _check_hw(input_hw)
    layers: list[Layer] = [Conv2D("conv1_conv", in_channels, 64, 7, 2, padding=3),
                           BatchNorm("conv1_bn", 64), ReLU("conv1_relu"),
                           MaxPool2D("pool1_pool", 3, 2, pad=1)]
    c = 64
    for stage, (blocks, filters) in enumerate(zip((3, 4, 6, 3), (64, 128, 256, 512)), start=2):
        for i in range(1, blocks + 1):
            stride = 1 if (i > 1 or stage == 2) else 2
            layers.append(ResidualBlock(f"conv{stage}_block{i}", c, filters, stride, projection=(i == 1)))
            c = 4 * filters
    base = Sequential("resnet50", layers)
    side = input_hw // 32
    return Model("resnet50_classifier", [base, *_head(2048 * side * side, head_width, dropout, num_outputs)],
                 (in_channels, input_hw, input_hw), num_outputs, base="resnet50")


def build_small_cnn(input_hw: int = 32, num_outputs: int = 2, widths=(8, 16), head_width: int = 32,
                    dropout: float = 0.25, in_channels: int = 1) -> Model:
    """Two conv/ReLU/pool blocks and the same dense head; for desk-scale training."""
    if input_hw < 4 or input_hw % 4:
        raise ValueError(f"input size must be a positive multiple of 4, got {input_hw}")
    layers, c = [], in_channels
    for b, width in enumerate(widths, start=1):
        layers += [Conv2D(f"block{b}_conv", c, width, 3, 1, "same"), ReLU(f"block{b}_relu"),
                   MaxPool2D(f"block{b}_pool", 2, 2)]
        c = width
    side = input_hw // 2 ** len(widths)
    base = Sequential("features", layers)
    return Model("small_cnn", [base, *_head(c * side * side, head_width, dropout, num_outputs)],
                 (in_channels, input_hw, input_hw), num_outputs, base="features")


BUILDERS = {"vgg19": build_vgg19, "resnet50": build_resnet50, "small": build_small_cnn}
DEFAULT_CHANNELS = {"vgg19": 3, "resnet50": 3, "small": 1}


def build_model(kind: str, input_hw: int, num_outputs: int, **kw) -> Model:
    try:
        builder = BUILDERS[kind]
    except KeyError:
        raise ValueError(f"unknown model {kind!r}; choose from {sorted(BUILDERS)}") from None
    return builder(input_hw, num_outputs, **kw)


# --- accounting -------------------------------------------------------------

@dataclass
class ParamCount:
    trainable: int
    non_trainable: int
    total: int
    per_layer: list[tuple[str, tuple[int, ...], int]] = field(default_factory=list)


def _numel(shape) -> int:
    return int(np.prod(shape, dtype=np.int64))


def count_params(m: Model) -> ParamCount:
    """Exact counts from parameter shapes; nothing is allocated."""
    trainable = non_trainable = 0
    for _, shape, is_trainable in m.named_param_shapes():
        if is_trainable:
            trainable += _numel(shape)
        else:
            non_trainable += _numel(shape)
    rows = []
    for layer, shape in zip(m.layers, m.output_shapes()):
        rows.append((layer.name, shape, sum(_numel(s) for _, s, _ in layer.named_param_shapes())))
    return ParamCount(trainable, non_trainable, trainable + non_trainable, rows)


def conv_census(m: Model) -> dict[str, int]:
    """Number of weighted convolutions, split into projection shortcuts and the rest."""
    total = projection = 0
    for path, layer in m.walk():
        if isinstance(layer, Conv2D):
            total += 1
            projection += path.endswith("/0_conv")
    return {"total": total, "projection": projection, "main": total - projection}


_TYPE_LABEL = {"sequential": "Functional", "flatten": "Flatten", "dense": "Dense",
               "dropout": "Dropout", "conv2d": "Conv2D", "maxpool": "MaxPooling2D",
               "relu": "ReLU", "batchnorm": "BatchNormalization", "global_avg_pool": "GlobalAveragePooling2D",
               "residual_block": "ResidualBlock"}


def display_shape(shape: tuple[int, ...]) -> str:
    """Batch-first, channel-last rendering: (C, H, W) -> "(None, H, W, C)"."""
    dims = (*shape[1:], shape[0]) if len(shape) == 3 else shape
    return "(" + ", ".join(["None", *map(str, dims)]) + ")"


def summarize(m: Model) -> str:
    pc = count_params(m)
    rows = [(f"{name} ({_TYPE_LABEL.get(layer.kind, layer.kind)})", display_shape(shape), str(n))
            for (name, shape, n), layer in zip(pc.per_layer, m.layers)]
    header = ("Layer (Type)", "Output Shape", "Parameter")
    w0 = max(len(header[0]), *(len(r[0]) for r in rows))
    w1 = max(len(header[1]), *(len(r[1]) for r in rows))
    w2 = max(len(header[2]), *(len(r[2]) for r in rows))
    rule = "-" * (w0 + w1 + w2 + 6)
    lines = [f'Model: "{m.name}"', rule,
             f"{header[0]:<{w0}}   {header[1]:<{w1}}   {header[2]:>{w2}}", rule]
    lines += [f"{a:<{w0}}   {b:<{w1}}   {c:>{w2}}" for a, b, c in rows]
    lines += [rule, f"Total params: {pc.total}", f"Trainable params: {pc.trainable}",
              f"Non-trainable params: {pc.non_trainable}"]
    return "\n".join(lines)


# --- weight files -----------------------------------------------------------
#
# "TMCW" | u16 version | u32 count | count x (u16 name_len, name, u8 rank,
# rank x u32 dims, f32 data) | u32 CRC32 of every preceding byte. Little endian.

MAGIC = b"TMCW"
FORMAT_VERSION = 1


class WeightFileError(ValueError):
    """Malformed, truncated or corrupted weight file."""


class WeightMismatchError(ValueError):
    """Weight file tensors do not fit the model."""


@dataclass
class LoadReport:
    loaded: list[str]
    missing: list[str]  # model tensors absent from the file (left untouched)
    skipped: list[str]  # file tensors not used (unknown name or shape mismatch)

    def describe(self) -> str:
        lines = [f"loaded {len(self.loaded)} tensors"]
        if self.missing:
            lines.append("not in file: " + ", ".join(self.missing))
        if self.skipped:
            lines.append("not in model: " + ", ".join(self.skipped))
        return "\n".join(lines)


def encode_weights(tensors: dict[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise ValueError(f"tensor {name!r} cannot be encoded")
        out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(out)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_weights(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise WeightFileError(f"bad magic {data[:4]!r}")
    if len(data) < 14:
        raise WeightFileError("truncated weight file")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise WeightFileError("CRC mismatch: weight file is corrupted")
    version, count = struct.unpack_from("<HI", body, 4)
    if version != FORMAT_VERSION:
        raise WeightFileError(f"unsupported weight format version {version}")
    pos, tensors = 10, {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", body, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            nbytes = 4 * _numel(shape)
            if pos + nbytes > len(body):
                raise WeightFileError(f"truncated data for tensor {name!r}")
            tensors[name] = np.frombuffer(body, dtype="<f4", count=_numel(shape),
                                          offset=pos).astype(np.float64).reshape(shape)
            pos += nbytes
    except struct.error as exc:
        raise WeightFileError(f"truncated weight file: {exc}") from exc
    if pos != len(body):
        raise WeightFileError("trailing bytes after last tensor")
    return tensors


def save_weights(m: Model, path, only_base: bool = False) -> None:
    params = m.parameters()
    if only_base:
        params = {k: v for k, v in params.items() if k.startswith(f"{m.base}/")}
    Path(path).write_bytes(encode_weights(params))


def load_weights(m: Model, path, allow_partial: bool = False) -> LoadReport:
    """Load tensors by name into ``m``.

    Model tensors missing from the file are left as they are and reported
    (base-only transfer). File tensors with an unknown name or a different
    shape raise :class:`WeightMismatchError` unless ``allow_partial``. The
    model is only modified once the whole file has validated.
    """
    tensors = decode_weights(Path(path).read_bytes())
    if not m.initialized:
        m.initialize(0)
    shapes = {name: shape for name, shape, _ in m.named_param_shapes()}
    loaded, skipped, problems = [], [], []
    for name, arr in tensors.items():
        if name not in shapes:
            skipped.append(name)
            problems.append(f"  unknown tensor {name} {arr.shape}")
        elif tuple(arr.shape) != tuple(shapes[name]):
            skipped.append(name)
            problems.append(f"  shape mismatch {name}: file {arr.shape} vs model {shapes[name]}")
        else:
            loaded.append(name)
    if problems and not allow_partial:
        problems += [f"  missing from file {name}" for name in shapes if name not in tensors]
        raise WeightMismatchError("weight file does not match model:\n" + "\n".join(problems))
    if not loaded:
        raise WeightMismatchError("no tensor in the weight file matches the model")
    m.set_parameters({name: tensors[name] for name in loaded})
    missing = [name for name in shapes if name not in tensors]
    return LoadReport(loaded, missing, skipped)
