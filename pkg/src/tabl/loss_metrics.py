"""Class-weighted cross-entropy and macro-averaged classification metrics."""

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ValidationError

N_CLASSES = 3
PROB_FLOOR = 1e-12
DEFAULT_C = 1e6

METRIC_COLUMNS = ("accuracy", "precision", "recall", "f1")


@dataclass(frozen=True)
class ClassWeights:
    counts: tuple
    c: float = DEFAULT_C

    def __post_init__(self):
        counts = tuple(int(n) for n in self.counts)
        if len(counts) != N_CLASSES:
            raise ValidationError(f"expected {N_CLASSES} class counts, got {len(counts)}")
        if min(counts) <= 0:
            raise ValidationError(f"every class needs at least one training sample, got counts {counts}")
        object.__setattr__(self, "counts", counts)

    def weights(self):
        """Per-class factor ``c / N_i``."""
        return self.c / np.asarray(self.counts, dtype=np.float64)


def softmax_head(logits):
    """Softmax over the class axis. Accepts ``(3, 1)``, ``(3,)`` or ``(N, 3, 1)``."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-2 if z.ndim >= 2 else -1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-2 if z.ndim >= 2 else -1, keepdims=True)


def _check_labels(labels):
    labels = np.asarray(labels)
    if labels.dtype.kind not in "iu" or np.any((labels < 0) | (labels >= N_CLASSES)):
        raise ValidationError(f"class index must be an integer in 0..{N_CLASSES - 1}, got {labels!r}")
    return labels.astype(np.int64)


def weighted_ce(pred, label, w):
    """Loss ``(c/N_label) * -log(pred[label])`` and its gradient w.r.t. the logits.

    ``pred`` is a softmax output of shape ``(3, 1)`` (single sample, ``label``
    an int) or ``(N, 3, 1)`` (``label`` an int array of length N; the loss and
    gradient are then per sample, unreduced).
    """
    pred = np.asarray(pred, dtype=np.float64)
    single = pred.ndim == 2
    probs = pred[None] if single else pred
    labels = _check_labels(np.atleast_1d(label))
    if probs.shape[1:] != (N_CLASSES, 1) or labels.shape[0] != probs.shape[0]:
        raise ValidationError(f"pred must be (3, 1) or (N, 3, 1) matching labels, got {pred.shape}")
    scale = w.weights()[labels]
    idx = np.arange(len(labels))
    p_true = np.maximum(probs[idx, labels, 0], PROB_FLOOR)
    loss = scale * -np.log(p_true)
    onehot = np.zeros_like(probs)
    onehot[idx, labels, 0] = 1.0
    d_logits = scale[:, None, None] * (probs - onehot)
    if single:
        return float(loss[0]), d_logits[0]
    return loss, d_logits


@dataclass
class MetricsReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: list  # confusion[true][pred]

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def csv_row(self):
        return [self.accuracy, self.macro_precision, self.macro_recall, self.macro_f1]

    def to_csv(self, header=True):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        if header:
            writer.writerow(METRIC_COLUMNS)
        writer.writerow([f"{v:.10f}" for v in self.csv_row()])
        return buf.getvalue()


def confusion_matrix(true, pred, n_classes=N_CLASSES):
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(true), np.asarray(pred)), 1)
    return cm


def per_class_scores(confusion):
    """Per-class ``(precision, recall, f1)``; 0/0 counts as 0."""
    cm = np.asarray(confusion, dtype=np.float64)
    tp = np.diag(cm)
    predicted = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(actual > 0, tp / actual, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    return precision, recall, f1


def compute_metrics(confusion):
    """Macro-averaged metrics from a ``confusion[true][pred]`` count matrix.

    Macro F1 is the mean of per-class F1 scores (not the F1 of macro
    precision and macro recall).
    """
    cm = np.asarray(confusion)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValidationError(f"confusion matrix must be square, got shape {cm.shape}")
    if np.any(cm < 0) or not np.all(np.equal(np.mod(cm, 1), 0)):
        raise ValidationError("confusion matrix must hold non-negative integer counts")
    total = cm.sum()
    if total == 0:
        raise ValidationError("confusion matrix is empty (no samples)")
    precision, recall, f1 = per_class_scores(cm)
    return MetricsReport(
        accuracy=float(np.trace(cm) / total),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        confusion=cm.astype(np.int64).tolist(),
    )


def average_reports(reports):
    """Mean of several reports (fold averaging); confusions are summed."""
    reports = list(reports)
    if not reports:
        raise ValidationError("no reports to average")
    confusion = np.sum([np.asarray(r.confusion) for r in reports], axis=0)
    return MetricsReport(
        accuracy=float(np.mean([r.accuracy for r in reports])),
        macro_precision=float(np.mean([r.macro_precision for r in reports])),
        macro_recall=float(np.mean([r.macro_recall for r in reports])),
        macro_f1=float(np.mean([r.macro_f1 for r in reports])),
        confusion=confusion.tolist(),
    )
