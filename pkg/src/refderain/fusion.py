"""Soft-gated merging of transferred features and cross-scale feature integration."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import AttentionResult
from .extractor import FeaturePyramid

ORDERS = {"fine_to_coarse": (0, 1, 2), "coarse_to_fine": (2, 1, 0)}


class ResBlock(nn.Module):
    """``x + conv(relu(conv(x)))``."""

    def __init__(self, ch):
        super().__init__()
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(x)))


def _up(x, like):
    return F.interpolate(x, size=like.shape[-2:], mode="bilinear", align_corners=False)


class CrossScaleExchange(nn.Module):
    """Every level receives the sum of all other levels resampled to its scale.

    Upsampling is bilinear followed by a 1x1 channel projection; downsampling
    is one stride-2 3x3 convolution per halving. Each level then passes
    through its own stack of residual blocks.
    """

    def __init__(self, channels: int, n_res: int = 2):
        super().__init__()
        c1, c2, c3 = channels, 2 * channels, 4 * channels
        self.up21 = nn.Conv2d(c2, c1, 1)
        self.up31 = nn.Conv2d(c3, c1, 1)
        self.up32 = nn.Conv2d(c3, c2, 1)
        self.down12 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.down13 = nn.Sequential(nn.Conv2d(c1, c1, 3, stride=2, padding=1), nn.ReLU(),
                                    nn.Conv2d(c1, c3, 3, stride=2, padding=1))
        self.down23 = nn.Conv2d(c2, c3, 3, stride=2, padding=1)
        self.res = nn.ModuleList(
            nn.Sequential(*[ResBlock(c) for _ in range(n_res)]) for c in (c1, c2, c3))

    def forward(self, f1, f2, f3):
        s1 = f1 + self.up21(_up(f2, f1)) + self.up31(_up(f3, f1))
        s2 = f2 + self.down12(f1) + self.up32(_up(f3, f2))
        s3 = f3 + self.down13(f1) + self.down23(f2)
        return self.res[0](s1), self.res[1](s2), self.res[2](s3)


def csfi_exchange(levels, exchange: CrossScaleExchange):
    """Functional alias; returns a :class:`FeaturePyramid`."""
    return FeaturePyramid(*exchange(*levels))


def soft_reweight(query: torch.Tensor, transferred: torch.Tensor, soft: torch.Tensor,
                  merge: nn.Module) -> torch.Tensor:
    """``query + merge(concat(query, transferred)) * soft``.

    ``soft`` is the soft attention already broadcast to the level's
    resolution, shape ``(B, 1, H, W)``.
    """
    if query.shape != transferred.shape:
        raise ValueError(f"query/transferred shape mismatch: {tuple(query.shape)} vs "
                         f"{tuple(transferred.shape)}")
    if soft.shape[-2:] != query.shape[-2:] or soft.shape[0] != query.shape[0]:
        raise ValueError(f"soft map {tuple(soft.shape)} does not cover features {tuple(query.shape)}")
    return query + merge(torch.cat([query, transferred], dim=1)) * soft


class FeatureFusion(nn.Module):
    """Level-ordered compensation with CSFI, then projection to an image residual."""

    def __init__(self, channels: int = 16, n_res: int = 2, order: str = "fine_to_coarse",
                 zero_init_tail: bool = True):
        super().__init__()
        if order not in ORDERS:
            raise ValueError(f"order must be one of {sorted(ORDERS)}")
        c = channels
        self.order = order
        self.merge = nn.ModuleList(nn.Conv2d(2 * k, k, 3, padding=1) for k in (c, 2 * c, 4 * c))
        self.exchange = nn.ModuleList(CrossScaleExchange(c, n_res) for _ in range(3))
        self.tail = nn.Sequential(nn.Conv2d(7 * c, c, 3, padding=1), nn.ReLU(),
                                  nn.Conv2d(c, 3, 3, padding=1))
        if zero_init_tail:
            nn.init.zeros_(self.tail[-1].weight)
            nn.init.zeros_(self.tail[-1].bias)

    def forward(self, query: FeaturePyramid, transferred: FeaturePyramid, attn: AttentionResult,
                patch_sizes, base: torch.Tensor) -> torch.Tensor:
        feats = list(query)
        for stage, lvl in enumerate(ORDERS[self.order]):
            soft = attn.soft_map(patch_sizes[lvl]).to(feats[lvl].dtype)
            feats[lvl] = soft_reweight(feats[lvl], transferred[lvl], soft, self.merge[lvl])
            feats = list(self.exchange[stage](*feats))
        full = torch.cat([feats[0], _up(feats[1], feats[0]), _up(feats[2], feats[0])], dim=1)
        if full.shape[-2:] != base.shape[-2:]:
            raise ValueError("base image and level-1 features differ in size")
        return (base + self.tail(full)).clamp(0.0, 1.0)

    def projection(self) -> nn.Conv2d:
        return self.tail[-1]


def fuse_and_project(query: FeaturePyramid, transferred: FeaturePyramid, attn: AttentionResult,
                     params: FeatureFusion, base: torch.Tensor, patch_sizes) -> torch.Tensor:
    return params(query, transferred, attn, patch_sizes, base)
