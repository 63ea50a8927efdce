"""Pixel accuracy and per-class precision / recall / F1 for class-code masks."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DataError

CLASS_NAMES = ("background", "figure", "table", "text")


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    present: bool  # in the truth or the prediction


@dataclass
class SegMetrics:
    accuracy: float
    per_class: list[ClassMetrics]
    precision: float  # macro over present classes
    recall: float
    f1: float

    def to_dict(self) -> dict:
        return asdict(self)


def confusion_matrix(pred: np.ndarray, truth: np.ndarray, n_classes: int) -> np.ndarray:
    """``cm[t, p]`` counts pixels of true class t predicted as p."""
    return np.bincount(truth.ravel() * n_classes + pred.ravel(), minlength=n_classes * n_classes).reshape(
        n_classes, n_classes
    )


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def compute_metrics(pred, truth, n_classes: int = 4) -> SegMetrics:
    """One-vs-rest scores per class. Classes absent from both masks are left out of the macro average."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise DataError(f"mask shapes differ: predicted {pred.shape}, truth {truth.shape}")
    for name, m in (("predicted", pred), ("truth", truth)):
        if not np.issubdtype(m.dtype, np.integer):
            raise DataError(f"{name} mask must hold integer class codes, got {m.dtype}")
        if m.size and (m.min() < 0 or m.max() >= n_classes):
            raise DataError(f"{name} mask has values outside [0, {n_classes})")
    if pred.size == 0:
        raise DataError("masks are empty")
    cm = confusion_matrix(pred.astype(np.int64), truth.astype(np.int64), n_classes)
    tp = np.diag(cm).astype(np.float64)
    n_pred = cm.sum(axis=0)
    n_true = cm.sum(axis=1)
    per_class = []
    for c in range(n_classes):
        p = tp[c] / n_pred[c] if n_pred[c] else 0.0
        r = tp[c] / n_true[c] if n_true[c] else 0.0
        per_class.append(ClassMetrics(float(p), float(r), float(_f1(p, r)), bool(n_pred[c] or n_true[c])))
    present = [m for m in per_class if m.present]
    return SegMetrics(
        accuracy=float(tp.sum() / pred.size),
        per_class=per_class,
        precision=float(np.mean([m.precision for m in present])),
        recall=float(np.mean([m.recall for m in present])),
        f1=float(np.mean([m.f1 for m in present])),
    )
