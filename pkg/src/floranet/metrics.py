"""Confusion-matrix accumulation and macro-averaged classification metrics.

All six macro metrics derive from per-class TP/FP/FN/TN counts averaged
uniformly over classes; top-1 accuracy (trace / total) is reported alongside
the per-class binary macro accuracy because the two are routinely conflated
in published result tables.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


class MetricsError(ValueError):
    pass


class UndefinedRatioWarning(UserWarning):
    """A per-class ratio had a zero denominator and contributed 0 to the mean."""


class ConfusionMatrix:
    """K x K counts; rows are actual classes, columns are predicted classes."""

    def __init__(self, size: int):
        if size < 1:
            raise MetricsError(f"size must be >= 1, got {size}")
        self.size = size
        self.counts = np.zeros((size, size), dtype=np.int64)

    def accumulate(self, actual: int, predicted: int, n: int = 1) -> None:
        if not (0 <= actual < self.size and 0 <= predicted < self.size):
            raise MetricsError(
                f"indices ({actual}, {predicted}) out of range for size {self.size}")
        self.counts[actual, predicted] += n

    def accumulate_batch(self, actual: np.ndarray, predicted: np.ndarray) -> None:
        for a, p in zip(actual, predicted):
            self.accumulate(int(a), int(p))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def trace(self) -> int:
        return int(np.trace(self.counts))

    @staticmethod
    def from_counts(counts) -> "ConfusionMatrix":
        arr = np.asarray(counts, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise MetricsError(f"counts must be square, got shape {arr.shape}")
        if (arr < 0).any():
            raise MetricsError("counts must be non-negative")
        cm = ConfusionMatrix(arr.shape[0])
        cm.counts = arr.copy()
        return cm


def per_class_counts(cm: ConfusionMatrix, i: int) -> dict:
    """TP/FP/FN/TN for class i treated as the positive class."""
    if not (0 <= i < cm.size):
        raise MetricsError(f"class {i} out of range for size {cm.size}")
    tp = int(cm.counts[i, i])
    fn = int(cm.counts[i, :].sum()) - tp
    fp = int(cm.counts[:, i].sum()) - tp
    tn = cm.total - tp - fp - fn
    return {"TP": tp, "FP": fp, "FN": fn, "TN": tn}


def _safe_ratio(num: float, den: float, what: str) -> float:
    if den == 0:
        warnings.warn(f"{what} undefined (zero denominator); counted as 0",
                      UndefinedRatioWarning, stacklevel=3)
        return 0.0
    return num / den


def macro_metrics(cm: ConfusionMatrix) -> dict:
    """The six macro metrics plus top-1 accuracy.

    accuracy_eq1 averages per-class binary accuracy (TP+TN)/total; error_rate
    averages (FP+FN)/total, so the two always sum to 1. f1 combines the macro
    precision and recall (not per-class f1 values).
    """
    total = cm.total
    if total == 0:
        raise MetricsError("empty confusion matrix")
    k = cm.size
    acc = spec = prec = rec = err = 0.0
    for i in range(k):
        c = per_class_counts(cm, i)
        acc += (c["TP"] + c["TN"]) / total
        err += (c["FP"] + c["FN"]) / total
        spec += _safe_ratio(c["TN"], c["FP"] + c["TN"], f"specificity[{i}]")
        prec += _safe_ratio(c["TP"], c["TP"] + c["FP"], f"precision[{i}]")
        rec += _safe_ratio(c["TP"], c["TP"] + c["FN"], f"recall[{i}]")
    acc, spec, prec, rec, err = (v / k for v in (acc, spec, prec, rec, err))
    f1 = _safe_ratio(2.0 * prec * rec, prec + rec, "f1")
    return {
        "accuracy_eq1": acc,
        "specificity": spec,
        "precision": prec,
        "recall": rec,
        "error_rate": err,
        "f1": f1,
        "top1_accuracy": cm.trace / total,
    }


@dataclass
class SampleRecord:
    """One evaluated sample: identity, truth, prediction, and confidence."""

    sample_id: str
    actual: int
    predicted: int
    confidence: float


def dump_misclassified(records: list[SampleRecord],
                       class_names: list[str]) -> list[dict]:
    """All misclassified samples, most confident mistakes first."""
    out = [
        {
            "sample_id": r.sample_id,
            "actual": class_names[r.actual],
            "predicted": class_names[r.predicted],
            "confidence": r.confidence,
        }
        for r in records if r.actual != r.predicted
    ]
    out.sort(key=lambda d: -d["confidence"])
    return out


def render_report(cm: ConfusionMatrix, class_names: list[str],
                  loss: float | None = None) -> str:
    """Metric values at four decimals plus the integer confusion grid."""
    m = macro_metrics(cm)
    lines = ["metrics:"]
    order = ("accuracy_eq1", "specificity", "precision", "recall", "error_rate",
             "f1", "top1_accuracy")
    for key in order:
        lines.append(f"  {key:<14s} {m[key]:.4f}")
    if loss is not None:
        lines.append(f"  {'loss':<14s} {loss:.4f}")
    lines.append("")
    lines.append(f"confusion matrix ({cm.size} classes, {cm.total} samples):")
    width = max(max((len(n) for n in class_names), default=5),
                len(str(int(cm.counts.max(initial=0)))), 5)
    header = " " * (width + 2) + " ".join(f"{n[:width]:>{width}s}" for n in class_names)
    lines.append(header)
    for i, name in enumerate(class_names):
        row = " ".join(f"{int(v):>{width}d}" for v in cm.counts[i])
        lines.append(f"{name[:width]:>{width}s}  {row}")
    return "\n".join(lines) + "\n"
