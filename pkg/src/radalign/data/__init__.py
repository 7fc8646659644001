"""Volume/report records, CT preprocessing, synthetic corpus and file formats."""

from .io import (
    read_labels_csv,
    read_manifest,
    read_volume,
    write_labels_csv,
    write_manifest,
    write_volume,
)
from .preprocess import (
    clip_and_normalize,
    crop_for_training,
    pad_or_crop,
    preprocess_volume,
    resample_volume,
)
from .records import (
    DatasetSplit,
    LabelKind,
    LabelVector,
    PipelineStateError,
    ReportRecord,
    SplitName,
    VolumeRecord,
)
from .synthetic import generate_synthetic_corpus

__all__ = [
    "DatasetSplit",
    "LabelKind",
    "LabelVector",
    "PipelineStateError",
    "ReportRecord",
    "SplitName",
    "VolumeRecord",
    "clip_and_normalize",
    "crop_for_training",
    "generate_synthetic_corpus",
    "pad_or_crop",
    "preprocess_volume",
    "read_labels_csv",
    "read_manifest",
    "read_volume",
    "resample_volume",
    "write_labels_csv",
    "write_manifest",
    "write_volume",
]
