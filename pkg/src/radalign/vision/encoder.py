from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .losses import global_average_pool

_ACTIVATIONS = {"relu": nn.ReLU, "silu": nn.SiLU, "gelu": nn.GELU, "tanh": nn.Tanh}


def _norm(c: int) -> nn.Module:
    return nn.GroupNorm(min(4, c), c)


class BasicBlock3d(nn.Module):
    def __init__(self, cin: int, cout: int, activation: str = "relu"):
        super().__init__()
        act = _ACTIVATIONS[activation]
        self.conv1 = nn.Conv3d(cin, cout, 3, padding=1, bias=False)
        self.norm1 = _norm(cout)
        self.conv2 = nn.Conv3d(cout, cout, 3, padding=1, bias=False)
        self.norm2 = _norm(cout)
        self.act = act()
        self.skip = nn.Identity() if cin == cout else nn.Conv3d(cin, cout, 1, bias=False)

    def forward(self, x):
        out = self.act(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        return self.act(out + self.skip(x))


class ResNet3D(nn.Module):
    """Small 3D residual encoder.

    A stem convolution is followed by one residual block per entry of
    ``widths``; 2x average pooling after the stem and between blocks gives a
    total downsampling of ``2 ** len(widths)`` per axis (floor division).
    """

    def __init__(self, in_channels: int = 1, widths=(16, 32, 64), activation: str = "relu"):
        super().__init__()
        widths = tuple(int(w) for w in widths)
        if not widths:
            raise ValueError("need at least one stage width")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        act = _ACTIVATIONS[activation]
        self.stem = nn.Sequential(nn.Conv3d(in_channels, widths[0], 3, padding=1, bias=False), _norm(widths[0]), act())
        blocks = []
        prev = widths[0]
        for w in widths:
            blocks.append(nn.AvgPool3d(2))
            blocks.append(BasicBlock3d(prev, w, activation))
            prev = w
        self.blocks = nn.Sequential(*blocks)
        self.out_channels = prev
        self.downsample = (2 ** len(widths),) * 3

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 4:
            x = x.unsqueeze(1)
        return self.blocks(self.stem(x))


class R3D18Adapter(nn.Module):
    """torchvision's video ResNet-18 used as a volumetric encoder (grey input repeated to RGB).

    ``pretrained=True`` fetches the Kinetics-400 weights through torchvision.
    """

    def __init__(self, pretrained: bool = False):
        super().__init__()
        from torchvision.models.video import R3D_18_Weights, r3d_18

        net = r3d_18(weights=R3D_18_Weights.KINETICS400_V1 if pretrained else None)
        self.stem, self.layer1, self.layer2, self.layer3, self.layer4 = (
            net.stem, net.layer1, net.layer2, net.layer3, net.layer4)
        self.out_channels = 512
        self.downsample = (8, 16, 16)

    def forward(self, x):
        if x.dim() == 4:
            x = x.unsqueeze(1)
        x = x.expand(-1, 3, -1, -1, -1)
        return self.layer4(self.layer3(self.layer2(self.layer1(self.stem(x)))))


def build_encoder(spec: dict | None = None) -> nn.Module:
    spec = dict(spec or {})
    arch = spec.pop("arch", "resnet3d")
    if arch == "resnet3d":
        return ResNet3D(widths=spec.get("widths", (16, 32, 64)), activation=spec.get("activation", "relu"))
    if arch == "r3d18":
        return R3D18Adapter(pretrained=bool(spec.get("pretrained", False)))
    raise ValueError(f"unknown encoder arch {arch!r}")


class SegHead(nn.Module):
    """One upsampling block on the last feature map producing per-structure mask logits."""

    def __init__(self, in_channels: int, n_structures: int, mask_shape):
        super().__init__()
        mid = max(in_channels // 2, 1)
        self.mask_shape = tuple(int(s) for s in mask_shape)
        self.n_structures = n_structures
        self.reduce = nn.Conv3d(in_channels, mid, 3, padding=1)
        self.out = nn.Conv3d(mid, n_structures, 1)

    def forward(self, feature_map: torch.Tensor) -> torch.Tensor:
        h = F.relu(self.reduce(feature_map))
        h = F.interpolate(h, size=self.mask_shape, mode="trilinear", align_corners=False)
        return self.out(h)


class SupervisedModel(nn.Module):
    """Encoder + global average pooling + linear classifier, with an optional seg head."""

    def __init__(self, encoder: nn.Module, n_classes: int, seg_head: SegHead | None = None):
        super().__init__()
        self.encoder = encoder
        self.head = nn.Linear(encoder.out_channels, n_classes)
        self.seg_head = seg_head

    def forward(self, x):
        fmap = self.encoder(x)
        z = global_average_pool(fmap)
        logits = self.head(z)
        seg = self.seg_head(fmap) if self.seg_head is not None else None
        return logits, seg
