"""3D vision encoder, classification/segmentation losses and supervised pre-training."""

from .encoder import ResNet3D, SegHead, SupervisedModel, build_encoder
from .losses import aux_seg_loss, bce_loss, bce_with_logits, classify, global_average_pool, smooth_labels
from .train import TrainingDiverged, TrainState, load_state, save_state, supervised_train

__all__ = [
    "ResNet3D",
    "SegHead",
    "SupervisedModel",
    "TrainState",
    "TrainingDiverged",
    "aux_seg_loss",
    "bce_loss",
    "bce_with_logits",
    "build_encoder",
    "classify",
    "global_average_pool",
    "load_state",
    "save_state",
    "smooth_labels",
    "supervised_train",
]
