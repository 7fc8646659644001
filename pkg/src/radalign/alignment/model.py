from __future__ import annotations

import torch
import torch.nn as nn

from ..vision.encoder import build_encoder
from ..vision.losses import global_average_pool
from .text import HashingTextEncoder


class DualEncoder(nn.Module):
    """Vision and text encoders with one affine projection each into the shared space."""

    def __init__(self, vision: nn.Module, text: nn.Module, shared_dim: int = 128):
        super().__init__()
        self.vision = vision
        self.text = text
        self.image_proj = nn.Linear(vision.out_channels, shared_dim)
        self.text_proj = nn.Linear(text.out_dim, shared_dim)
        self.shared_dim = shared_dim

    def encode_image(self, x: torch.Tensor) -> torch.Tensor:
        return self.image_proj(global_average_pool(self.vision(x)))

    def encode_text(self, texts: list[str]) -> torch.Tensor:
        return self.text_proj(self.text(texts))


def build_dual_encoder(config: dict, seed: int) -> DualEncoder:
    """Text side and projections are seeded independently of the vision encoder,
    so runs that differ only in vision initialisation share everything else."""
    torch.manual_seed(seed)
    vision = build_encoder(config.get("encoder"))
    torch.manual_seed(seed + 104729)
    text = HashingTextEncoder(config.get("text_buckets", 4096), config.get("text_dim", 128))
    return DualEncoder(vision, text, config.get("shared_dim", 128))
