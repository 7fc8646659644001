"""Experiment plumbing: stage runner, run log, loss-curve comparison, data sweep and CLI."""

from .curves import compare_loss_curves, final_mean, read_loss_trace
from .manifest import IntegrityError, RunManifest, digest_path, verify_artifacts
from .pipeline import STAGES, MissingInputError, StageError, run_pipeline, train_subset
from .sweep import check_fractions, collect_points, sweep_data_fractions

__all__ = [
    "IntegrityError",
    "MissingInputError",
    "RunManifest",
    "STAGES",
    "StageError",
    "check_fractions",
    "collect_points",
    "compare_loss_curves",
    "digest_path",
    "final_mean",
    "read_loss_trace",
    "run_pipeline",
    "sweep_data_fractions",
    "train_subset",
    "verify_artifacts",
]
