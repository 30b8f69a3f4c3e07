"""Per-class and support-weighted F-scores."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np


@dataclass
class Metrics:
    confusion: np.ndarray  # rows: true class, columns: predicted class
    per_class_f: np.ndarray
    support: np.ndarray
    weighted_f: float

    def summary(self) -> str:
        per = " ".join(f"{f:.4f}" for f in self.per_class_f)
        return f"weighted_f={self.weighted_f:.6f} per_class=[{per}]"


def confusion_matrix(preds, labels, n_classes: int) -> np.ndarray:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ValueError(f"preds {preds.shape} and labels {labels.shape} must be equal-length 1-D")
    if preds.size == 0:
        raise ValueError("weighted F-score of an empty prediction set is undefined")
    for name, arr in (("pred", preds), ("label", labels)):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise ValueError(f"{name} outside [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def weighted_f_score(preds, labels, n_classes: int) -> Metrics:
    """F1 per class (0 when the class is neither predicted nor present), weighted by support.

    Scores are computed in exact rational arithmetic and rounded once, so
    they do not depend on summation order.
    """
    cm = confusion_matrix(preds, labels, n_classes)
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    exact = []
    for c in range(n_classes):
        denom = int(2 * tp[c] + fp[c] + fn[c])
        exact.append(Fraction(2 * int(tp[c]), denom) if denom else Fraction(0))
    support = cm.sum(axis=1)
    weighted = sum(int(s) * f for s, f in zip(support, exact)) / int(support.sum())
    per_class = np.array([float(f) for f in exact])
    return Metrics(cm, per_class, support, float(weighted))
