"""Optimizers, the mini-batch training loop, evaluation metrics and history files."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .imageio import LabeledDataset, dataset_tensor, resize_bilinear
from .kalman import denoise_image
from .layers import ForwardContext
from .models import Model


class DivergenceError(ArithmeticError):
    """Training produced a non-finite loss."""


# --- optimizers -------------------------------------------------------------

def sgd_step(param, grad, velocity, lr, momentum):
    """Momentum SGD: ``v' = momentum*v - lr*grad``, ``param' = param + v'``."""
    if param.shape != grad.shape or param.shape != velocity.shape:
        raise ValueError(f"shape mismatch: {param.shape}, {grad.shape}, {velocity.shape}")
    v = momentum * velocity - lr * grad
    return param + v, v


def adam_step(param, grad, m1, m2, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update; returns ``(param, m1, m2)``. ``t`` counts from 1."""
    if t < 1:
        raise ValueError("Adam step count starts at 1")
    m1 = beta1 * m1 + (1 - beta1) * grad
    m2 = beta2 * m2 + (1 - beta2) * grad * grad
    m_hat = m1 / (1 - beta1 ** t)
    v_hat = m2 / (1 - beta2 ** t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m1, m2


class Optimizer:
    """Per-parameter optimizer state keyed by parameter name."""

    def __init__(self, kind: str, lr: float, momentum: float = 0.9):
        if kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {kind!r}")
        self.kind, self.lr, self.momentum = kind, lr, momentum
        self.state: dict[str, tuple] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], names) -> dict:
        self.t += 1
        updated = {}
        for name in names:
            p, g = params[name], grads[name]
            if self.kind == "sgd":
                (v,) = self.state.get(name, (np.zeros_like(p),))
                p, v = sgd_step(p, g, v, self.lr, self.momentum)
                self.state[name] = (v,)
            else:
                m1, m2 = self.state.get(name, (np.zeros_like(p), np.zeros_like(p)))
                p, m1, m2 = adam_step(p, g, m1, m2, self.t, self.lr)
                self.state[name] = (m1, m2)
            updated[name] = p
        return updated


# --- training ---------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    optimizer: str = "sgd"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    seed: int = 0
    denoise: bool = True
    freeze_base: bool | None = None  # None: model's current setting

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be sgd or adam, got {self.optimizer!r}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float


@dataclass
class TrainHistory:
    rows: list[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)


def prepare_inputs(model: Model, ds: LabeledDataset, denoise: bool = False) -> np.ndarray:
    """Resize to the model's input size, optionally denoise, stack into [N, C, H, W]."""
    c, h, w = model.input_shape
    items = []
    for img, label in ds.items:
        if denoise:
            img = denoise_image(img)
        if (img.height, img.width) != (h, w):
            img = resize_bilinear(img, w, h)
        items.append((img, label))
    return dataset_tensor(LabeledDataset(items, ds.class_names), c)


def map_labels(ds: LabeledDataset, class_names: list[str]) -> np.ndarray:
    """Map dataset labels onto ``class_names`` by name; unknown classes become -1."""
    index = {name: i for i, name in enumerate(class_names)}
    lookup = np.array([index.get(name, -1) for name in ds.class_names], dtype=np.int64)
    return lookup[ds.labels] if len(ds) else np.zeros(0, dtype=np.int64)


def _check_head(model: Model, num_classes: int) -> None:
    if model.binary_head:
        if num_classes != 2:
            raise ValueError(f"a 1-unit head needs exactly 2 classes, dataset has {num_classes}")
    elif model.num_outputs != num_classes:
        raise ValueError(f"model has {model.num_outputs} outputs but the training set has {num_classes} classes")


def _batches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    # a trailing singleton would break train-mode batch norm; fold it into the previous batch
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches.pop()])
    return batches


def _eval_loss_acc(model: Model, x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    known = y >= 0
    proba = model.predict_proba(x)
    if model.binary_head:
        pred = (proba[:, 0] >= 0.5).astype(np.int64)
        p = np.clip(proba[known, 0], 1e-12, 1 - 1e-12)
        yk = y[known]
        loss = float(-np.mean(yk * np.log(p) + (1 - yk) * np.log(1 - p))) if known.any() else math.nan
    else:
        pred = proba.argmax(axis=1)
        p = np.clip(proba[known, y[known]], 1e-300, None)
        loss = float(-np.mean(np.log(p))) if known.any() else math.nan
    return loss, float(np.mean(pred == y))


def train(model: Model, train_set: LabeledDataset, test_set: LabeledDataset,
          cfg: TrainConfig) -> tuple[Model, TrainHistory]:
    """Train ``model`` in place and return it with one history row per epoch.

    Everything random (initialization when the model is fresh, shuffles,
    dropout masks) is drawn from ``cfg.seed``.
    """
    if not len(train_set) or not len(test_set):
        raise ValueError("training and test sets must be non-empty")
    _check_head(model, len(train_set.class_names))
    if model.class_names is None:
        model.class_names = list(train_set.class_names)
    if cfg.freeze_base is not None:
        model.freeze_base = cfg.freeze_base

    rng = np.random.default_rng(cfg.seed)
    if not model.initialized:
        model.initialize(int(rng.integers(2 ** 63)))
    x_train = prepare_inputs(model, train_set, cfg.denoise)
    y_train = map_labels(train_set, model.class_names)
    if (y_train < 0).any():
        raise ValueError("training set has classes the model head does not know: "
                         + ", ".join(n for n in train_set.class_names if n not in model.class_names))
    x_test = prepare_inputs(model, test_set, cfg.denoise)
    y_test = map_labels(test_set, model.class_names)

    opt = Optimizer(cfg.optimizer, cfg.learning_rate, cfg.momentum)
    names = model.trainable_names()
    history = TrainHistory()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(x_train))
        loss_sum = correct = 0.0
        for idx in _batches(order, cfg.batch_size):
            ctx = ForwardContext("train", int(rng.integers(2 ** 63)))
            xb, yb = x_train[idx], y_train[idx]
            logits = model.forward(xb, ctx)
            loss, dlogits = model.loss(logits, yb)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss {loss} in epoch {epoch}")
            _, grads = model.backward(dlogits, ctx)
            model.set_parameters(opt.step(model.parameters(), grads, names))
            loss_sum += loss * len(idx)
            pred = (logits[:, 0] >= 0).astype(np.int64) if model.binary_head else logits.argmax(axis=1)
            correct += float(np.sum(pred == yb))
        test_loss, test_acc = _eval_loss_acc(model, x_test, y_test)
        history.rows.append(EpochRecord(epoch, loss_sum / len(x_train), correct / len(x_train),
                                        test_loss, test_acc))
    return model, history


# --- metrics ----------------------------------------------------------------

def confusion_matrix(preds, labels, k: int) -> np.ndarray:
    """``k x k`` counts; entry (i, j) = samples of true class i predicted as j."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ValueError("preds and labels must have equal length")
    for arr in (preds, labels):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise ValueError(f"class index out of range [0, {k})")
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def harmonic_f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def f1_consistent(precision: float, recall: float, f1: float, tol: float = 5e-3) -> bool:
    """Whether a reported (P, R, F1) triple satisfies F1 = 2PR/(P+R) within ``tol``."""
    return abs(harmonic_f1(precision, recall) - f1) <= tol


@dataclass
class ClassMetrics:
    name: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricsReport:
    per_class: list[ClassMetrics]
    precision: float  # macro averages
    recall: float
    f1: float
    support: int
    accuracy: float

    @classmethod
    def from_confusion(cls, cm: np.ndarray, class_names: list[str]) -> MetricsReport:
        per_class = []
        for i, name in enumerate(class_names):
            tp = int(cm[i, i])
            predicted = int(cm[:, i].sum())
            actual = int(cm[i].sum())
            p = tp / predicted if predicted else 0.0
            r = tp / actual if actual else 0.0
            per_class.append(ClassMetrics(name, p, r, harmonic_f1(p, r), actual))
        total = int(cm.sum())
        return cls(per_class,
                   float(np.mean([c.precision for c in per_class])),
                   float(np.mean([c.recall for c in per_class])),
                   float(np.mean([c.f1 for c in per_class])),
                   total, float(np.trace(cm)) / total if total else 0.0)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        lines = [f"{'Precision':<14}{self.precision:.4f}",
                 f"{'Recall':<14}{self.recall:.4f}",
                 f"{'F1 Score':<14}{self.f1:.4f}",
                 f"{'Support':<14}{self.support}",
                 f"{'Test Accuracy':<14}{100 * self.accuracy:.2f}%",
                 "",
                 f"{'class':<16}{'precision':>10}{'recall':>10}{'f1':>10}{'support':>9}"]
        lines += [f"{c.name:<16}{c.precision:>10.4f}{c.recall:>10.4f}{c.f1:>10.4f}{c.support:>9d}"
                  for c in self.per_class]
        return "\n".join(lines)


def evaluate(model: Model, test_set: LabeledDataset, denoise: bool = False) -> MetricsReport:
    """Eval-mode metrics. Test classes are matched to the model's classes by
    name; classes the model never saw are appended and always count as wrong."""
    if not len(test_set):
        raise ValueError("test set is empty")
    names = list(model.class_names or test_set.class_names)
    unseen = [n for n in test_set.class_names if n not in names]
    all_names = names + unseen
    labels = map_labels(test_set, all_names)
    preds = model.predict(prepare_inputs(model, test_set, denoise))
    cm = confusion_matrix(preds, labels, len(all_names))
    return MetricsReport.from_confusion(cm, all_names)


# --- history files ----------------------------------------------------------

HISTORY_HEADER = ["epoch", "train_loss", "train_acc", "test_loss", "test_acc"]


def write_history_csv(h: TrainHistory, path) -> None:
    if not len(h):
        raise ValueError("refusing to write an empty history")
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for r in h.rows:
            w.writerow([r.epoch, *(f"{v:.6f}" for v in (r.train_loss, r.train_acc, r.test_loss, r.test_acc))])


def read_history_csv(path) -> TrainHistory:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return TrainHistory([EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["train_acc"]),
                                     float(r["test_loss"]), float(r["test_acc"])) for r in rows])


__all__ = ["DivergenceError", "sgd_step", "adam_step", "Optimizer", "TrainConfig", "TrainHistory",
           "EpochRecord", "train", "evaluate", "confusion_matrix", "MetricsReport", "ClassMetrics",
           "harmonic_f1", "f1_consistent", "write_history_csv", "read_history_csv", "prepare_inputs",
           "map_labels"]
