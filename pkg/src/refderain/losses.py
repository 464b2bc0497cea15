"""L1, SSIM and the weighted SSIM-L1 objective.

All functions accept torch tensors (and stay differentiable) or numpy
arrays (returning a Python float). Images are ``(C, H, W)`` or
``(B, C, H, W)`` in ``[0, 1]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

C1 = 0.01 ** 2
C2 = 0.03 ** 2
MS_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


@dataclass(frozen=True)
class LossWeights:
    alpha1: float = 0.6
    alpha2: float = 0.4

    def __post_init__(self):
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("loss weights must be non-negative")


def _pair(x, y):
    numpy_in = not isinstance(x, torch.Tensor)
    if numpy_in:
        x = torch.as_tensor(np.asarray(x, dtype=np.float64))
        y = torch.as_tensor(np.asarray(y, dtype=np.float64))
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    y = y.to(x.dtype)
    return x, y, numpy_in


def _out(v, numpy_in):
    return float(v) if numpy_in else v


def l1_loss(pred, target):
    """Mean absolute difference over all elements."""
    p, t, numpy_in = _pair(pred, target)
    return _out((p - t).abs().mean(), numpy_in)


def gaussian_window(size: int = 11, sigma: float = 1.5, dtype=torch.float64) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype) - (size - 1) / 2.0
    g = torch.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


def _batched(x):
    return x.unsqueeze(0) if x.dim() == 3 else x


def _ssim_terms(x, y, window, sigma):
    x, y = _batched(x), _batched(y)
    b, c, h, w = x.shape
    if h < window or w < window:
        raise ValueError(f"image {h}x{w} smaller than SSIM window {window}")
    kernel = gaussian_window(window, sigma, x.dtype).expand(c, 1, window, window)

    def filt(z):
        return F.conv2d(z, kernel, groups=c)

    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x ** 2
    syy = filt(y * y) - mu_y ** 2
    sxy = filt(x * y) - mu_x * mu_y
    luminance = (2 * mu_x * mu_y + C1) / (mu_x ** 2 + mu_y ** 2 + C1)
    contrast_structure = (2 * sxy + C2) / (sxx + syy + C2)
    return luminance, contrast_structure


def ssim(x, y, window: int = 11, sigma: float = 1.5):
    """Mean local SSIM (Gaussian window, valid positions only, channels averaged)."""
    x, y, numpy_in = _pair(x, y)
    lum, cs = _ssim_terms(x, y, window, sigma)
    return _out((lum * cs).mean(), numpy_in)


def ms_ssim(x, y, window: int = 11, sigma: float = 1.5, scales: int = 5):
    """Multi-scale SSIM; uses as many scales as the image size allows."""
    x, y, numpy_in = _pair(x, y)
    x, y = _batched(x), _batched(y)
    usable = 1
    while usable < scales and min(x.shape[-2:]) // (2 ** usable) >= window:
        usable += 1
    weights = torch.tensor(MS_WEIGHTS[:usable], dtype=x.dtype)
    weights = weights / weights.sum()
    value = torch.ones((), dtype=x.dtype)
    for s in range(usable):
        lum, cs = _ssim_terms(x, y, window, sigma)
        term = (lum * cs).mean() if s == usable - 1 else cs.mean()
        value = value * term.clamp_min(1e-8) ** weights[s]
        if s < usable - 1:
            x, y = F.avg_pool2d(x, 2), F.avg_pool2d(y, 2)
    return _out(value, numpy_in)


def ssim_l1_loss(pred, target, weights: LossWeights = LossWeights(), window: int = 11,
                 sigma: float = 1.5, multiscale: bool = False):
    """``alpha1 * L1 + alpha2 * (1 - SSIM)``."""
    p, t, numpy_in = _pair(pred, target)
    sim = (ms_ssim if multiscale else ssim)(p, t, window, sigma)
    value = weights.alpha1 * l1_loss(p, t) + weights.alpha2 * (1.0 - sim)
    return _out(value, numpy_in)
