from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class PipelineStateError(RuntimeError):
    """A preprocessing step was applied out of order."""


@dataclass
class VolumeRecord:
    """One 3D scan. ``voxels`` are Hounsfield units until ``normalized`` is set."""

    id: str
    voxels: np.ndarray
    spacing_mm: tuple[float, float, float]
    normalized: bool = False

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels)
        if self.voxels.ndim != 3 or min(self.voxels.shape) < 1:
            raise ValueError(f"volume {self.id!r} must be a non-empty 3D array, got shape {self.voxels.shape}")
        self.spacing_mm = tuple(float(s) for s in self.spacing_mm)
        if len(self.spacing_mm) != 3 or any(s <= 0 for s in self.spacing_mm):
            raise ValueError(f"volume {self.id!r} spacing must be three positive values, got {self.spacing_mm}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.voxels.shape)


@dataclass
class ReportRecord:
    id: str
    text: str
    paired_volume_id: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError(f"report {self.id!r} has empty text")


class LabelKind(str, Enum):
    HARD = "hard"
    SOFT = "soft"


@dataclass
class LabelVector:
    values: np.ndarray
    vocabulary: list[str]
    kind: LabelKind = LabelKind.HARD

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        self.kind = LabelKind(self.kind)
        if len(self.values) != len(self.vocabulary):
            raise ValueError(f"label length {len(self.values)} != vocabulary size {len(self.vocabulary)}")
        if self.kind is LabelKind.HARD:
            if not np.all((self.values == 0) | (self.values == 1)):
                raise ValueError("hard labels must be 0 or 1")
        elif not np.all((self.values >= 0) & (self.values <= 1)):
            raise ValueError("soft labels must lie in [0, 1]")

    def as_soft(self) -> LabelVector:
        return LabelVector(self.values.copy(), list(self.vocabulary), LabelKind.SOFT)


class SplitName(str, Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    EXTERNAL = "external"


@dataclass
class DatasetSplit:
    name: SplitName
    volume_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.name = SplitName(self.name)


def check_disjoint(splits: list[DatasetSplit]) -> None:
    seen: dict[str, str] = {}
    for split in splits:
        for vid in split.volume_ids:
            if vid in seen:
                raise ValueError(f"volume {vid!r} appears in both {seen[vid]} and {split.name.value}")
            seen[vid] = split.name.value


def check_pairing(volumes: list[VolumeRecord], reports: list[ReportRecord]) -> None:
    ids = [v.id for v in volumes]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate volume ids")
    counts = {vid: 0 for vid in ids}
    for r in reports:
        if r.paired_volume_id not in counts:
            raise ValueError(f"report {r.id!r} is paired with unknown volume {r.paired_volume_id!r}")
        counts[r.paired_volume_id] += 1
