"""Layout generator network.

A multi-scale residual CNN over (image, saliency) feeds a transformer
encoder-decoder whose learned queries each predict one layout element:
a class distribution over the four categories plus "no object", and a
(cx, cy, w, h) box squashed into [0, 1]. The shallow (level-1, stride-4)
feature map is the one handed to the pixel-level discriminator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .elements import NO_OBJECT, NUM_CATEGORIES, Category, Layout, LayoutElement, clamp_box

BACKBONE_WIDTHS = (32, 64, 128, 256)


@dataclass
class FeaturePyramid:
    levels: list[torch.Tensor]   # 4 maps (B, C_k, h, w); levels[i] at stride 4 * 2**i
    fused: torch.Tensor          # levels projected + upsampled to level-1 dims, summed

    @property
    def shallow(self) -> torch.Tensor:
        return self.levels[0]

    @property
    def deep(self) -> torch.Tensor:
        return self.levels[-1]


@dataclass
class LayoutPrediction:
    class_logits: torch.Tensor   # (..., N_q, K+1)
    boxes: torch.Tensor          # (..., N_q, 4), cxcywh in [0, 1]

    def class_probs(self) -> torch.Tensor:
        return F.softmax(self.class_logits, dim=-1)

    @property
    def batched(self) -> bool:
        return self.class_logits.dim() == 3

    def __len__(self) -> int:
        return self.class_logits.shape[0] if self.batched else 1

    def sample(self, i: int) -> "LayoutPrediction":
        if not self.batched:
            if i != 0:
                raise IndexError(i)
            return self
        return LayoutPrediction(self.class_logits[i], self.boxes[i])


def _group_norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(8, channels), channels)


class ResidualBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1)
        self.norm1 = _group_norm(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.norm2 = _group_norm(c_out)
        if stride != 1 or c_in != c_out:
            self.shortcut = nn.Conv2d(c_in, c_out, 1, stride=stride)
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        h = F.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return F.relu(h + self.shortcut(x))


class MultiScaleBackbone(nn.Module):
    """Four residual stages; stride-2 k3 convs give ceil-division spatial dims,
    so level 1 is exactly ceil(H/4) x ceil(W/4)."""

    def __init__(self, in_channels: int = 4, widths: tuple[int, ...] = BACKBONE_WIDTHS):
        super().__init__()
        self.widths = tuple(widths)
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, widths[0], 3, stride=2, padding=1),
            _group_norm(widths[0]),
            nn.ReLU(inplace=True),
        )
        self.blocks = nn.ModuleList([
            ResidualBlock(widths[0], widths[0], stride=2),
            ResidualBlock(widths[0], widths[1], stride=2),
            ResidualBlock(widths[1], widths[2], stride=2),
            ResidualBlock(widths[2], widths[3], stride=2),
        ])
        self.fuse_projs = nn.ModuleList(
            [nn.Conv2d(w, widths[0], 1) for w in widths])

    def forward(self, x: torch.Tensor) -> FeaturePyramid:
        h = self.stem(x)
        levels = []
        for block in self.blocks:
            h = block(h)
            levels.append(h)
        base_dims = levels[0].shape[-2:]
        fused = None
        for proj, level in zip(self.fuse_projs, levels):
            p = proj(level)
            if p.shape[-2:] != base_dims:
                p = F.interpolate(p, size=base_dims, mode="bilinear",
                                  align_corners=False)
            fused = p if fused is None else fused + p
        return FeaturePyramid(levels=levels, fused=fused)


def sine_position_embedding(height: int, width: int, channels: int,
                            device=None, dtype=None,
                            temperature: float = 10000.0) -> torch.Tensor:
    """2-D sine/cosine positional encoding, (1, channels, height, width)."""
    if channels % 4 != 0:
        raise ValueError("position embedding channels must be divisible by 4")
    half = channels // 2
    ys = torch.arange(height, device=device, dtype=dtype or torch.float32)
    xs = torch.arange(width, device=device, dtype=dtype or torch.float32)
    dim_t = torch.arange(half // 2, device=device, dtype=dtype or torch.float32)
    dim_t = temperature ** (2 * dim_t / half)
    pos_y = ys[:, None] / dim_t            # (H, half/2)
    pos_x = xs[:, None] / dim_t
    emb_y = torch.cat([pos_y.sin(), pos_y.cos()], dim=1)   # (H, half)
    emb_x = torch.cat([pos_x.sin(), pos_x.cos()], dim=1)   # (W, half)
    emb = torch.cat([
        emb_y[:, None, :].expand(height, width, half),
        emb_x[None, :, :].expand(height, width, half),
    ], dim=-1)                                             # (H, W, C)
    return emb.permute(2, 0, 1).unsqueeze(0)


class _BoxHead(nn.Module):
    def __init__(self, d_model: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(d_model, d_model), nn.ReLU(inplace=True),
            nn.Linear(d_model, d_model), nn.ReLU(inplace=True),
            nn.Linear(d_model, 4),
        )

    def forward(self, x):
        return torch.sigmoid(self.net(x))


class LayoutGenerator(nn.Module):
    def __init__(self, n_queries: int = 8, d_model: int = 128, n_heads: int = 4,
                 n_encoder_layers: int = 2, n_decoder_layers: int = 2,
                 dim_feedforward: int = 256,
                 backbone_widths: tuple[int, ...] = BACKBONE_WIDTHS,
                 in_channels: int = 4):
        super().__init__()
        self.n_queries = n_queries
        self.d_model = d_model
        self.backbone = MultiScaleBackbone(in_channels=in_channels,
                                           widths=backbone_widths)
        self.input_proj = nn.Conv2d(backbone_widths[-1], d_model, 1)
        self.transformer = nn.Transformer(
            d_model=d_model, nhead=n_heads,
            num_encoder_layers=n_encoder_layers,
            num_decoder_layers=n_decoder_layers,
            dim_feedforward=dim_feedforward,
            dropout=0.0, batch_first=True,
        )
        self.query_embed = nn.Embedding(n_queries, d_model)
        self.class_head = nn.Linear(d_model, NUM_CATEGORIES + 1)
        self.box_head = _BoxHead(d_model)

    def extract_features(self, images: torch.Tensor,
                         saliency: torch.Tensor) -> FeaturePyramid:
        """images (B, 3, H, W), saliency (B, H, W) or (B, 1, H, W), all in [0, 1]."""
        if saliency.dim() == 3:
            saliency = saliency.unsqueeze(1)
        if images.shape[-2:] != saliency.shape[-2:]:
            raise ValueError(
                f"image dims {tuple(images.shape[-2:])} != "
                f"saliency dims {tuple(saliency.shape[-2:])}")
        return self.backbone(torch.cat([images, saliency], dim=1))

    def predict(self, pyramid: FeaturePyramid) -> LayoutPrediction:
        src = self.input_proj(pyramid.deep)
        b, c, h, w = src.shape
        pos = sine_position_embedding(h, w, c, device=src.device, dtype=src.dtype)
        tokens = (src + pos).flatten(2).transpose(1, 2)      # (B, h*w, C)
        queries = self.query_embed.weight.unsqueeze(0).expand(b, -1, -1)
        decoded = self.transformer(tokens, queries)          # (B, N_q, C)
        return LayoutPrediction(class_logits=self.class_head(decoded),
                                boxes=self.box_head(decoded))

    def forward(self, images: torch.Tensor, saliency: torch.Tensor
                ) -> tuple[FeaturePyramid, LayoutPrediction]:
        pyramid = self.extract_features(images, saliency)
        return pyramid, self.predict(pyramid)

    def backbone_parameters(self):
        return self.backbone.parameters()

    def head_parameters(self):
        """Everything that is not the backbone (transformer, heads, queries)."""
        backbone_ids = {id(p) for p in self.backbone.parameters()}
        return (p for p in self.parameters() if id(p) not in backbone_ids)


def decode_layout(pred: LayoutPrediction, score_threshold: float = 0.5,
                  image_id: str = "") -> Layout:
    """Turn one sample's set prediction into a concrete Layout.

    Keeps queries whose most likely class is a real category with probability
    >= score_threshold; boxes are clamped into the unit square; elements come
    out order-normalized, sorted by (category, cy, cx).
    """
    if pred.batched:
        raise ValueError("decode_layout expects a single-sample prediction")
    if not 0.0 <= score_threshold < 1.0:
        raise ValueError(f"score_threshold must be in [0, 1): {score_threshold}")
    probs = pred.class_probs().detach().cpu().numpy()
    boxes = pred.boxes.detach().cpu().numpy()
    elements = []
    for q in range(probs.shape[0]):
        best = int(np.argmax(probs[q]))
        if best == NO_OBJECT or probs[q, best] < score_threshold:
            continue
        cx, cy, w, h = (float(v) for v in boxes[q])
        elements.append(LayoutElement(Category(best), clamp_box(cx, cy, w, h)))
    elements.sort(key=lambda e: (int(e.category), e.box[1], e.box[0]))
    return Layout(elements=elements, image_id=image_id)


def samples_to_tensors(samples, device="cpu") -> tuple[torch.Tensor, torch.Tensor]:
    """Stack DomainSamples into (images (B,3,H,W), saliency (B,H,W)) tensors."""
    images = torch.from_numpy(
        np.stack([s.image for s in samples]).astype(np.float32))
    saliency = torch.from_numpy(
        np.stack([s.saliency for s in samples]).astype(np.float32))
    return images.permute(0, 3, 1, 2).to(device), saliency.to(device)
