"""Macro-averaged one-vs-rest classification metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    accuracy: float
    fpr: float
    top1: float  # plain fraction of correct predictions
    classes: np.ndarray = field(repr=False)
    per_class: dict = field(repr=False)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("precision", "recall", "f1", "accuracy", "fpr", "top1")}


def _ratio(num, den):
    out = np.zeros_like(num, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def macro_metrics(predictions, labels, class_count: int | None = None) -> MetricsReport:
    """One-vs-rest counts per class, averaged over classes that occur in labels or predictions.

    Macro F1 is the harmonic mean of macro precision and macro recall.
    """
    pred = np.asarray(predictions, dtype=np.int64).ravel()
    lab = np.asarray(labels, dtype=np.int64).ravel()
    if pred.shape != lab.shape:
        raise DimensionError(f"{pred.size} predictions but {lab.size} labels")
    if lab.size == 0:
        raise ValueError("no predictions to score")
    hi = int(max(pred.max(), lab.max())) + 1
    if class_count is not None:
        if hi > class_count:
            raise DimensionError(f"class id {hi - 1} >= class_count {class_count}")
        hi = class_count
    total = lab.size
    tp = np.bincount(lab[pred == lab], minlength=hi).astype(np.float64)
    n_true = np.bincount(lab, minlength=hi).astype(np.float64)
    n_pred = np.bincount(pred, minlength=hi).astype(np.float64)
    fp = n_pred - tp
    fn = n_true - tp
    tn = total - tp - fp - fn
    classes = np.flatnonzero((n_true > 0) | (n_pred > 0))
    prec = _ratio(tp, tp + fp)[classes]
    rec = _ratio(tp, tp + fn)[classes]
    fpr = _ratio(fp, fp + tn)[classes]
    acc = ((tp + tn) / total)[classes]
    P, R = float(prec.mean()), float(rec.mean())
    f1 = 2 * P * R / (P + R) if P + R > 0 else 0.0
    per_class = {
        "tp": tp[classes], "fp": fp[classes], "fn": fn[classes], "tn": tn[classes],
        "precision": prec, "recall": rec, "fpr": fpr, "accuracy": acc,
    }
    return MetricsReport(P, R, f1, float(acc.mean()), float(fpr.mean()), float(np.mean(pred == lab)),
                         classes, per_class)


def class_recall(report: MetricsReport, c: int) -> float:
    hit = np.flatnonzero(report.classes == c)
    if hit.size == 0:
        raise KeyError(f"class {c} does not occur")
    return float(report.per_class["recall"][hit[0]])
