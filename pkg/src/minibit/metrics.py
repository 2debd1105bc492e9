"""Accuracy, cross-entropy losses, confusion counts and per-epoch metric rows."""

import csv
import io
from dataclasses import astuple, dataclass, fields

import numpy as np

from minibit.errors import ConfigError, ShapeError

PROB_CLAMP = 1e-7
CSV_HEADER = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr", "wall_seconds"]


class UndefinedMetricError(ConfigError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn,
                               self.fp + other.fp, self.fn + other.fn)


def accuracy(c):
    """(TP + TN) / (TP + TN + FP + FN) * 100."""
    if c.total < 1:
        raise UndefinedMetricError("accuracy undefined for zero samples")
    return 100.0 * (c.tp + c.tn) / c.total


def confusion_update(c, predicted, actual, positive_class=1, num_classes=2):
    if num_classes != 2:
        raise ConfigError("confusion counts need a binary task; use per-class accuracy for K != 2")
    pos_pred = predicted == positive_class
    pos_true = actual == positive_class
    if pos_pred and pos_true:
        return ConfusionCounts(c.tp + 1, c.tn, c.fp, c.fn)
    if pos_pred:
        return ConfusionCounts(c.tp, c.tn, c.fp + 1, c.fn)
    if pos_true:
        return ConfusionCounts(c.tp, c.tn, c.fp, c.fn + 1)
    return ConfusionCounts(c.tp, c.tn + 1, c.fp, c.fn)


def confusion_from_predictions(predicted, actual, positive_class=1):
    c = ConfusionCounts()
    for p, a in zip(predicted, actual):
        c = confusion_update(c, int(p), int(a), positive_class)
    return c


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def binary_cross_entropy(y, yhat):
    """Mean binary cross-entropy; ``yhat`` is clamped to [1e-7, 1 - 1e-7]."""
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(yhat, dtype=np.float64)
    if y.size == 0:
        raise ShapeError("binary_cross_entropy: empty batch")
    if y.shape != p.shape:
        raise ShapeError(f"label shape {y.shape} != prediction shape {p.shape}")
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def binary_cross_entropy_with_logits(y, z):
    """Loss of ``sigmoid(z)`` plus its gradient ``(sigmoid(z) - y) / N`` w.r.t. ``z``."""
    y = np.asarray(y, dtype=np.float64)
    p = sigmoid(z)
    loss = binary_cross_entropy(y, p)
    return loss, (p - y) / y.size


def log_softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_cross_entropy(y, logits):
    """Mean categorical cross-entropy and its gradient w.r.t. ``logits``.

    ``y`` is either integer class indices ``[N]`` or soft label rows ``[N, K]``
    (MixUp). The gradient is returned in the dtype of ``logits``.
    """
    logits = np.asarray(logits)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise ShapeError(f"logits must be a nonempty [N, K] array, got {logits.shape}")
    n, k = logits.shape
    y = np.asarray(y)
    if y.ndim == 1:
        if y.shape[0] != n:
            raise ShapeError("label count does not match batch size")
        if np.any(y < 0) or np.any(y >= k):
            raise ConfigError(f"label out of range [0, {k})")
        target = np.zeros((n, k), dtype=np.float64)
        target[np.arange(n), y.astype(np.int64)] = 1.0
    else:
        if y.shape != (n, k):
            raise ShapeError(f"soft labels {y.shape} do not match logits {logits.shape}")
        target = y.astype(np.float64)
    logp = log_softmax(logits)
    loss = float(-(target * logp).sum() / n)
    grad = (np.exp(logp) * target.sum(axis=1, keepdims=True) - target) / n
    return loss, grad.astype(logits.dtype if logits.dtype.kind == "f" else np.float64)


def predict(logits):
    """Argmax per row; ties go to the lowest class index."""
    return np.argmax(np.asarray(logits), axis=1)


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float
    wall_seconds: float = 0.0

    def csv_row(self):
        vals = astuple(self)
        # lr keeps 10 significant digits so decayed rates survive the round trip
        return ([str(self.epoch)] + [f"{v:.6f}" for v in vals[1:5]]
                + [f"{self.lr:.10g}", f"{self.wall_seconds:.6f}"])


def metrics_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(r.csv_row())
    return buf.getvalue()


def write_metrics_csv(path, rows):
    with open(path, "w", newline="") as fh:
        fh.write(metrics_to_csv(rows))


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"unexpected metrics header {reader.fieldnames}")
        names = [f.name for f in fields(EpochMetrics)]
        return [EpochMetrics(int(r["epoch"]), *(float(r[k]) for k in names[1:])) for r in reader]
