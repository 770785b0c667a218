"""Domain discriminators over generator feature maps.

The default (pixel kind) upsamples a shallow feature map with three stride-2
transposed 3x3 convolutions, resizes bilinearly to the input-image dims and
squashes each pixel into [0, 1]: one inpainted-vs-clean score per image pixel.
The patch kind is the same stack resized to a coarser output grid; the global
kind pools to a single real/fake probability per image.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError
from .generator import FeaturePyramid

DISCRIMINATOR_KINDS = ("pixel", "global", "patch")
FEATURE_LEVELS = ("shallow", "deep", "fusion")


@dataclass
class DiscriminatorConfig:
    kind: str = "pixel"
    patch_dims: tuple[int, int] | None = None
    feature_level: str = "shallow"

    def __post_init__(self):
        if self.kind not in DISCRIMINATOR_KINDS:
            raise ConfigError(f"unknown discriminator kind {self.kind!r}")
        if self.feature_level not in FEATURE_LEVELS:
            raise ConfigError(f"unknown feature level {self.feature_level!r}")
        if self.kind == "patch":
            if self.patch_dims is None:
                raise ConfigError("patch discriminator needs patch_dims")
            self.patch_dims = tuple(int(v) for v in self.patch_dims)
        elif self.patch_dims is not None:
            self.patch_dims = tuple(int(v) for v in self.patch_dims)

    def to_dict(self) -> dict:
        return {"kind": self.kind,
                "patch_dims": list(self.patch_dims) if self.patch_dims else None,
                "feature_level": self.feature_level}

    @classmethod
    def from_dict(cls, d: dict) -> "DiscriminatorConfig":
        patch = d.get("patch_dims")
        return cls(kind=d.get("kind", "pixel"),
                   patch_dims=tuple(patch) if patch else None,
                   feature_level=d.get("feature_level", "shallow"))


def select_features(pyramid: FeaturePyramid, feature_level: str) -> torch.Tensor:
    if feature_level == "shallow":
        return pyramid.shallow
    if feature_level == "deep":
        return pyramid.deep
    if feature_level == "fusion":
        return pyramid.fused
    raise ConfigError(f"unknown feature level {feature_level!r}")


class MapDiscriminator(nn.Module):
    """Three transposed convolutions (x8 upsample), bilinear resize to the
    requested output dims, then per-pixel sigmoid. Fully convolutional, so the
    parameter count is independent of input size."""

    def __init__(self, in_channels: int):
        super().__init__()
        c1 = max(in_channels // 2, 4)
        c2 = max(in_channels // 4, 2)
        self.up1 = nn.ConvTranspose2d(in_channels, c1, 3, stride=2,
                                      padding=1, output_padding=1)
        self.up2 = nn.ConvTranspose2d(c1, c2, 3, stride=2,
                                      padding=1, output_padding=1)
        self.up3 = nn.ConvTranspose2d(c2, 1, 3, stride=2,
                                      padding=1, output_padding=1)

    def forward(self, features: torch.Tensor,
                out_dims: tuple[int, int]) -> torch.Tensor:
        h = F.leaky_relu(self.up1(features), 0.2)
        h = F.leaky_relu(self.up2(h), 0.2)
        h = self.up3(h)
        if h.shape[-2:] != tuple(out_dims):
            h = F.interpolate(h, size=tuple(out_dims), mode="bilinear",
                              align_corners=False)
        return torch.sigmoid(h).squeeze(1)   # (B, H, W)


class GlobalDiscriminator(nn.Module):
    """Global average pool -> 2-layer perceptron -> one probability per image."""

    def __init__(self, in_channels: int, hidden: int = 64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_channels, hidden),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Linear(hidden, 1),
        )

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        pooled = features.mean(dim=(-2, -1))
        return torch.sigmoid(self.net(pooled)).squeeze(-1)   # (B,)


def discriminate_pixels(disc: MapDiscriminator, features: torch.Tensor,
                        target_dims: tuple[int, int]) -> torch.Tensor:
    """Per-pixel prediction map with dims exactly equal to the input image's."""
    out = disc(features, target_dims)
    if out.shape[-2:] != tuple(target_dims):
        raise RuntimeError(f"pixel map dims {tuple(out.shape[-2:])} != {target_dims}")
    return out


def discriminate_patches(disc: MapDiscriminator, features: torch.Tensor,
                         patch_dims: tuple[int, int]) -> torch.Tensor:
    return disc(features, patch_dims)


def discriminate_global(disc: GlobalDiscriminator,
                        features: torch.Tensor) -> torch.Tensor:
    return disc(features)


def downsample_map(white_patch: torch.Tensor,
                   patch_dims: tuple[int, int]) -> torch.Tensor:
    """Area-average a (B, H, W) map down to patch_dims, kept fractional
    (no thresholding) so the L1 target stays unbiased."""
    if white_patch.shape[-2:] == tuple(patch_dims):
        return white_patch
    return F.interpolate(white_patch.unsqueeze(1), size=tuple(patch_dims),
                         mode="area").squeeze(1)


def build_discriminator(config: DiscriminatorConfig,
                        backbone_widths: tuple[int, ...]) -> nn.Module:
    in_channels = {
        "shallow": backbone_widths[0],
        "deep": backbone_widths[-1],
        "fusion": backbone_widths[0],
    }[config.feature_level]
    if config.kind == "global":
        return GlobalDiscriminator(in_channels)
    return MapDiscriminator(in_channels)
