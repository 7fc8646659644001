from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ScalingLawFit:
    """``performance = a * n ** b`` fitted by least squares in log-log space."""

    a: float
    b: float
    residual: float
    points: list[tuple[float, float]] = field(default_factory=list)

    def predict(self, n):
        return self.a * np.asarray(n, dtype=np.float64) ** self.b

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "residual": self.residual, "points": [list(p) for p in self.points]}


def fit_scaling_law(points) -> ScalingLawFit:
    pts = [(float(n), float(y)) for n, y in points]
    if len(pts) < 2:
        raise ValueError("need at least two points to fit a scaling law")
    n = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    if np.any(n <= 0) or np.any(y <= 0):
        raise ValueError("data sizes and performances must be positive")
    if len(np.unique(n)) != len(n):
        raise ValueError("data sizes must be distinct")
    X = np.column_stack([np.ones_like(n), np.log(n)])
    coef, *_ = np.linalg.lstsq(X, np.log(y), rcond=None)
    resid = np.log(y) - X @ coef
    return ScalingLawFit(float(np.exp(coef[0])), float(coef[1]), float(resid @ resid), pts)
