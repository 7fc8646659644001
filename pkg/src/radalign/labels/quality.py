from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..data.records import LabelVector
from ..evaluation.metrics import auc, confusion_counts, rates

QUALITY_KEYS = ("auc", "accuracy", "precision", "f1", "sensitivity", "specificity")


@dataclass
class LabelQualityReport:
    macro: dict[str, float]
    per_class: dict[str, dict[str, float]] = field(default_factory=dict)
    n_reports: int = 0

    def to_dict(self) -> dict:
        return {"n_reports": self.n_reports, **self.macro, "per_class": self.per_class}


def evaluate_label_quality(candidate: list[LabelVector], reference: list[LabelVector]) -> LabelQualityReport:
    """Score extracted labels against reference labels, class by class.

    Soft candidates are binarised at 0.5 (ties positive). Classes whose
    reference column is constant get counts but no AUC and are left out of the
    macro average.
    """
    if len(candidate) != len(reference) or not candidate:
        raise ValueError("candidate and reference must be non-empty and aligned")
    vocab = reference[0].vocabulary
    for lab in (*candidate, *reference):
        if lab.vocabulary != vocab:
            raise ValueError("vocabulary mismatch between candidate and reference labels")
    pred = np.stack([c.values for c in candidate]) >= 0.5
    ref = np.stack([r.values for r in reference]) >= 0.5

    per_class, included = {}, []
    for k, name in enumerate(vocab):
        c = confusion_counts(pred[:, k], ref[:, k])
        entry = {**rates(c), "tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn}
        if ref[:, k].any() and not ref[:, k].all():
            entry["auc"] = auc(pred[:, k].astype(float), ref[:, k])
            included.append(name)
        per_class[name] = entry
    if included:
        macro = {key: float(np.mean([per_class[n][key] for n in included])) for key in QUALITY_KEYS}
    else:
        macro = {key: float("nan") for key in QUALITY_KEYS}
    return LabelQualityReport(macro, per_class, len(candidate))
