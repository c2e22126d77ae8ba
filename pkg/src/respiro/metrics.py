"""ICBHI evaluation: confusion matrix, Sp, Se, Score and seed aggregation.

Class order is (normal, crackle, wheeze, both); rows are true classes and
columns predictions. Sensitivity only credits an abnormal sample when its
exact abnormal class is predicted.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, DegenerateInputError, ShapeError

CLASSES = ("normal", "crackle", "wheeze", "both")


@dataclass
class MetricsReport:
    sp: float
    se: float
    score: float
    per_class_acc: list
    n_seeds: int = 1
    std: dict = field(default_factory=dict)

    def to_json(self):
        return {
            "sp": self.sp,
            "se": self.se,
            "score": self.score,
            "per_class": dict(zip(CLASSES, self.per_class_acc)),
            "seeds": self.n_seeds,
            "std": self.std,
        }


def confusion(preds, labels, n_classes=4):
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ShapeError("confusion", preds.shape, labels.shape)
    both = np.concatenate([preds, labels])
    if both.size and (both.min() < 0 or both.max() >= n_classes):
        raise ArgumentError(f"class indices must lie in [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def icbhi_metrics(cm):
    cm = np.asarray(cm, dtype=np.int64)
    rows = cm.sum(axis=1)
    if rows[0] == 0:
        raise DegenerateInputError("no normal samples: specificity undefined")
    abnormal = rows[1:].sum()
    if abnormal == 0:
        raise DegenerateInputError("no abnormal samples: sensitivity undefined")
    sp = 100.0 * cm[0, 0] / rows[0]
    se = 100.0 * np.trace(cm[1:, 1:]) / abnormal
    per_class = [100.0 * cm[i, i] / rows[i] if rows[i] else None for i in range(len(cm))]
    return MetricsReport(float(sp), float(se), float((sp + se) / 2.0), per_class)


def aggregate_seeds(reports):
    """Mean and sample standard deviation (ddof=1; 0 for a single report)."""
    if not reports:
        raise ArgumentError("no reports to aggregate")
    k = len(reports)

    def stats(values):
        arr = np.asarray(values, dtype=np.float64)
        return float(arr.mean()), float(arr.std(ddof=1)) if k > 1 else 0.0

    sp, sp_std = stats([r.sp for r in reports])
    se, se_std = stats([r.se for r in reports])
    score, score_std = stats([r.score for r in reports])
    per_class, per_class_std = [], {}
    for i, name in enumerate(CLASSES):
        values = [r.per_class_acc[i] for r in reports if r.per_class_acc[i] is not None]
        if values:
            mean, std = stats(values) if len(values) == k else (float(np.mean(values)), 0.0)
            per_class.append(mean)
            per_class_std[name] = std
        else:
            per_class.append(None)
    std = {"sp": sp_std, "se": se_std, "score": score_std, "per_class": per_class_std}
    return MetricsReport(sp, se, score, per_class, n_seeds=k, std=std)


def confusion_csv(cm):
    lines = ["true\\pred," + ",".join(CLASSES)]
    for name, row in zip(CLASSES, np.asarray(cm)):
        lines.append(name + "," + ",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"
