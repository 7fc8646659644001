"""Binary and multi-label classification metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata


class UndefinedMetricError(ValueError):
    """Metric needs both positive and negative examples."""


@dataclass
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _div(num: float, den: float) -> float:
    return float(num) / float(den) if den else 0.0


def confusion_counts(pred, labels) -> Confusion:
    pred = np.asarray(pred).astype(bool)
    labels = np.asarray(labels).astype(bool)
    if pred.shape != labels.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {labels.shape}")
    return Confusion(
        tp=int(np.sum(pred & labels)),
        fp=int(np.sum(pred & ~labels)),
        tn=int(np.sum(~pred & ~labels)),
        fn=int(np.sum(~pred & labels)),
    )


def rates(c: Confusion) -> dict[str, float]:
    """Accuracy, precision, F1, sensitivity and specificity; 0/0 is reported as 0."""
    precision = _div(c.tp, c.tp + c.fp)
    sensitivity = _div(c.tp, c.tp + c.fn)
    return {
        "accuracy": _div(c.tp + c.tn, c.n),
        "precision": precision,
        "f1": _div(2 * c.tp, 2 * c.tp + c.fp + c.fn),
        "sensitivity": sensitivity,
        "specificity": _div(c.tn, c.tn + c.fp),
    }


def auc(scores, labels) -> float:
    """ROC AUC via the Mann-Whitney rank statistic; ties contribute one half."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def choose_threshold(scores, labels, policy: str = "youden", fixed: float = 0.5) -> float:
    """Decision threshold (predict positive when score >= threshold)."""
    if policy == "fixed":
        return float(fixed)
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if labels.all() or not labels.any():
        raise UndefinedMetricError("threshold selection needs both classes")
    best_t, best_val = None, -np.inf
    # descending candidates; strict improvement keeps the highest threshold among ties
    for t in np.unique(scores)[::-1]:
        r = rates(confusion_counts(scores >= t, labels))
        if policy == "youden":
            val = r["sensitivity"] + r["specificity"] - 1.0
        elif policy == "max_f1":
            val = r["f1"]
        else:
            raise ValueError(f"unknown threshold policy {policy!r}")
        if val > best_val:
            best_t, best_val = float(t), val
    return best_t


def classification_metrics(scores, labels, threshold_policy: str = "youden", fixed_threshold: float = 0.5) -> dict:
    """AUC plus thresholded metrics for a single class."""
    t = choose_threshold(scores, labels, threshold_policy, fixed_threshold)
    out = rates(confusion_counts(np.asarray(scores) >= t, labels))
    out["auc"] = auc(scores, labels)
    out["threshold"] = t
    return out


@dataclass
class MetricsReport:
    """Named scalar metrics plus an optional per-class breakdown."""

    scalars: dict[str, float] = field(default_factory=dict)
    per_class: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {**self.scalars, "per_class": self.per_class}


MACRO_KEYS = ("auc", "accuracy", "f1", "precision", "sensitivity", "specificity")


def multilabel_metrics(score_matrix, label_matrix, class_names: list[str],
                       threshold_policy: str = "youden", fixed_threshold: float = 0.5) -> MetricsReport:
    """Per-class metrics and their macro average over classes with both outcomes present."""
    S = np.asarray(score_matrix, dtype=np.float64)
    Y = np.asarray(label_matrix) >= 0.5
    if S.shape != Y.shape or S.shape[1] != len(class_names):
        raise ValueError(f"shape mismatch: scores {S.shape}, labels {Y.shape}, {len(class_names)} classes")
    per_class = {}
    for k, name in enumerate(class_names):
        if Y[:, k].all() or not Y[:, k].any():
            continue
        per_class[name] = classification_metrics(S[:, k], Y[:, k], threshold_policy, fixed_threshold)
    if not per_class:
        raise UndefinedMetricError("no class has both positive and negative examples")
    scalars = {key: float(np.mean([m[key] for m in per_class.values()])) for key in MACRO_KEYS}
    return MetricsReport(scalars, per_class)
