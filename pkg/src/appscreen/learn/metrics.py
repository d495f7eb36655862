"""Classification metrics over per-participant prediction rows."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from ..errors import EmptyReport


@dataclass(frozen=True)
class Metrics:
    precision: float
    sensitivity: float
    specificity: float
    f1: float
    accuracy: float
    balanced_accuracy: float
    auc: float
    tp: int
    fp: int
    tn: int
    fn: int
    # names of metrics whose denominator was zero (reported as 0)
    undefined: tuple[str, ...] = field(default=())

    def to_json(self) -> dict:
        out = asdict(self)
        out["undefined"] = list(self.undefined)
        return out


def balanced_accuracy(sensitivity: float, specificity: float) -> float:
    return (sensitivity + specificity) / 2.0


def auc_score(y_true, scores) -> float:
    """Mann-Whitney AUC with midranks for tied scores; nan when a class is absent."""
    y = np.asarray(y_true).astype(int)
    s = np.asarray(scores, float)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(s, method="average")
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def metrics(y_true, y_pred, prob=None) -> Metrics:
    y = np.asarray(y_true).astype(int)
    p = np.asarray(y_pred).astype(int)
    if y.size == 0:
        raise EmptyReport("no prediction rows")
    tp = int(((y == 1) & (p == 1)).sum())
    fp = int(((y == 0) & (p == 1)).sum())
    tn = int(((y == 0) & (p == 0)).sum())
    fn = int(((y == 1) & (p == 0)).sum())
    undefined = []

    def ratio(num, den, name):
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    precision = ratio(tp, tp + fp, "precision")
    sensitivity = ratio(tp, tp + fn, "sensitivity")
    specificity = ratio(tn, tn + fp, "specificity")
    f1 = ratio(2 * precision * sensitivity, precision + sensitivity, "f1")
    accuracy = (tp + tn) / len(y)
    auc = auc_score(y, p if prob is None else prob)
    if np.isnan(auc):
        undefined.append("auc")
        auc = 0.0
    return Metrics(precision, sensitivity, specificity, f1, accuracy,
                   balanced_accuracy(sensitivity, specificity), auc, tp, fp, tn, fn, tuple(undefined))


def f1_score(y_true, y_pred) -> float:
    y = np.asarray(y_true).astype(int)
    p = np.asarray(y_pred).astype(int)
    tp = int(((y == 1) & (p == 1)).sum())
    den = 2 * tp + int(((y == 0) & (p == 1)).sum()) + int(((y == 1) & (p == 0)).sum())
    return 2 * tp / den if den else 0.0
