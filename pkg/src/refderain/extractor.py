"""Shared three-level feature extractor."""
from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn as nn


class FeaturePyramid(NamedTuple):
    """Features at full, half and quarter resolution with C, 2C, 4C channels."""

    level1: torch.Tensor
    level2: torch.Tensor
    level3: torch.Tensor

    @property
    def channels(self) -> int:
        return self.level1.shape[1]


def _block(cin, cout, stride=1):
    return [nn.Conv2d(cin, cout, 3, stride=stride, padding=1), nn.ReLU(inplace=False)]


class FeatureExtractor(nn.Module):
    """Two 3x3 conv+ReLU blocks per level, stride-2 convolution between levels."""

    def __init__(self, channels: int = 16, in_channels: int = 3):
        super().__init__()
        c = channels
        self.channels = c
        self.level1 = nn.Sequential(*_block(in_channels, c), *_block(c, c))
        self.level2 = nn.Sequential(*_block(c, 2 * c, stride=2), *_block(2 * c, 2 * c))
        self.level3 = nn.Sequential(*_block(2 * c, 4 * c, stride=2), *_block(4 * c, 4 * c))
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
                nn.init.zeros_(m.bias)

    def forward(self, img: torch.Tensor) -> FeaturePyramid:
        if img.dim() == 3:
            img = img.unsqueeze(0)
        h, w = img.shape[-2:]
        if h % 4 or w % 4:
            raise ValueError(f"image size {h}x{w} must be divisible by 4; pad upstream")
        f1 = self.level1(img)
        f2 = self.level2(f1)
        f3 = self.level3(f2)
        return FeaturePyramid(f1, f2, f3)

    def conv_layers(self) -> list[nn.Conv2d]:
        return [m for m in self.modules() if isinstance(m, nn.Conv2d)]

    def load_pretrained(self, weights) -> int:
        """Copy externally supplied conv weights in layer order.

        ``weights`` is a sequence of ``(weight, bias)`` pairs, e.g. the first
        convolutions of a pretrained classification backbone. Pairs whose
        shapes do not match the corresponding layer are skipped. Returns the
        number of layers loaded.
        """
        loaded = 0
        with torch.no_grad():
            for conv, (w, b) in zip(self.conv_layers(), weights):
                w, b = torch.as_tensor(w), torch.as_tensor(b)
                if w.shape == conv.weight.shape and b.shape == conv.bias.shape:
                    conv.weight.copy_(w)
                    conv.bias.copy_(b)
                    loaded += 1
        return loaded


def extract_pyramid(extractor: FeatureExtractor, img) -> FeaturePyramid:
    """Apply ``extractor`` to a ``(C, H, W)`` or batched image tensor/array."""
    if not isinstance(img, torch.Tensor):
        img = torch.as_tensor(img, dtype=next(extractor.parameters()).dtype)
    return extractor(img)
