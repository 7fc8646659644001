"""Classification, zero-shot, retrieval and scaling-law metrics."""

from .metrics import UndefinedMetricError, auc, choose_threshold, classification_metrics, confusion_counts, multilabel_metrics
from .retrieval import average_precision_at_k, map_at_k, rank_order, recall_at_k, shares_positive
from .scaling import ScalingLawFit, fit_scaling_law
from .zeroshot import ZeroShotProtocol, two_way_softmax, zero_shot_scores

__all__ = [
    "ScalingLawFit",
    "UndefinedMetricError",
    "ZeroShotProtocol",
    "auc",
    "average_precision_at_k",
    "choose_threshold",
    "classification_metrics",
    "confusion_counts",
    "fit_scaling_law",
    "map_at_k",
    "multilabel_metrics",
    "rank_order",
    "recall_at_k",
    "shares_positive",
    "two_way_softmax",
    "zero_shot_scores",
]
