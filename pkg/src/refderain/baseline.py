"""Baseline de-rainers: a median-filter prior and a small recurrent CNN.

Both expose ``derain(rainy)`` taking a ``(C, H, W)`` or ``(N, C, H, W)``
array in ``[0, 1]`` and returning the clipped estimate with the same shape.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy.ndimage import median_filter

from ._validation import check_image_batch, to_tensor
from .checkpoint import load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

MIN_SIZE = 16
LEARNED_ARCH = "baseline-recurrent-v1"
PRIOR_ARCH = "baseline-median-v1"


class TrainingDivergedError(RuntimeError):
    """Raised when a training loss becomes NaN or infinite."""


def _as_batch(rainy):
    single = np.asarray(rainy).ndim == 3
    return check_image_batch(rainy, name="rainy", min_size=MIN_SIZE), single


class MedianBaseline:
    """Per-channel median filter; stands in for prior-based de-raining."""

    kind = "prior"

    def __init__(self, size: int = 5):
        self.size = size

    def derain(self, rainy) -> np.ndarray:
        batch, single = _as_batch(rainy)
        out = median_filter(batch, size=(1, 1, self.size, self.size), mode="reflect")
        out = np.clip(out, 0.0, 1.0).astype(np.float32)
        return out[0] if single else out

    def save(self, path) -> Path:
        return save_checkpoint(path, PRIOR_ARCH, {}, {"size": self.size})


class ResBlock(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)

    def forward(self, x):
        return F.relu(x + self.conv2(F.relu(self.conv1(x))))


@dataclass
class BaselineConfig:
    kind: str = "learned"
    channels: int = 16
    stages: int = 5
    steps: int = 200
    batch_size: int = 4
    lr: float = 1e-3
    seed: int = 0


class RecurrentBaseline(nn.Module):
    """Progressive recurrent CNN: each stage refines the estimate from (rainy, estimate).

    Weights are shared across stages. The estimate is produced directly by
    the output convolution (no input skip), so all-zero weights yield the
    output bias everywhere.
    """

    kind = "learned"

    def __init__(self, channels: int = 16, stages: int = 5):
        super().__init__()
        self.channels = channels
        self.stages = stages
        self.conv_in = nn.Conv2d(6, channels, 3, padding=1)
        self.blocks = nn.Sequential(ResBlock(channels), ResBlock(channels))
        self.conv_out = nn.Conv2d(channels, 3, 3, padding=1)

    def forward(self, rainy: torch.Tensor) -> torch.Tensor:
        est = rainy
        for _ in range(self.stages):
            h = F.relu(self.conv_in(torch.cat([rainy, est], dim=1)))
            est = self.conv_out(self.blocks(h))
        return est

    def derain(self, rainy) -> np.ndarray:
        batch, single = _as_batch(rainy)
        p = next(self.parameters())
        with torch.no_grad():
            out = self(to_tensor(batch, dtype=p.dtype)).clamp(0.0, 1.0)
        out = out.cpu().numpy().astype(np.float32)
        return out[0] if single else out

    def save(self, path) -> Path:
        return save_checkpoint(path, LEARNED_ARCH, self.state_dict(),
                               {"channels": self.channels, "stages": self.stages})

    @classmethod
    def load(cls, path) -> "RecurrentBaseline":
        _, cfg, state = load_checkpoint(path, expect_arch=LEARNED_ARCH)
        model = cls(**cfg)
        model.load_state_dict(state)
        model.eval()
        return model


def make_baseline(cfg: BaselineConfig):
    if cfg.kind == "prior":
        return MedianBaseline()
    if cfg.kind == "learned":
        torch.manual_seed(cfg.seed)
        return RecurrentBaseline(cfg.channels, cfg.stages)
    raise ValueError(f"unknown baseline kind {cfg.kind!r}")


def train_baseline(samples, cfg: BaselineConfig, checkpoint_path=None, log_path=None):
    """Fit a learned baseline with the L1 objective against clean targets.

    ``samples`` is a :class:`~refderain.data.PairedSamples`. Returns the
    model in eval mode; ``model.loss_history`` holds per-step losses.
    """
    if cfg.kind != "learned":
        raise ValueError("only learned baselines are trainable")
    if len(samples) == 0:
        raise ValueError("training split is empty")
    model = make_baseline(cfg)
    rng = np.random.default_rng(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    rainy = torch.from_numpy(samples.rainy)
    clean = torch.from_numpy(samples.clean)
    history = []
    log = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log = open(log_path, "a", encoding="utf-8")
    try:
        model.train()
        for step in range(cfg.steps):
            idx = rng.choice(len(samples), size=min(cfg.batch_size, len(samples)), replace=False)
            idx_t = torch.from_numpy(np.sort(idx))
            loss = F.l1_loss(model(rainy[idx_t]), clean[idx_t])
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingDivergedError(f"baseline loss became {value} at step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            history.append(value)
            if log:
                log.write(json.dumps({"step": step, "stage": "baseline", "loss": value,
                                      "lr": cfg.lr, "sample_id": [samples.ids[i] for i in sorted(idx)],
                                      "ref_id": None}) + "\n")
    finally:
        if log:
            log.close()
    model.eval()
    model.loss_history = history
    if checkpoint_path is not None:
        model.save(checkpoint_path)
    logger.info("baseline trained for %d steps; final loss %s", cfg.steps,
                history[-1] if history else None)
    return model


def load_baseline(path):
    """Load either baseline kind from its checkpoint."""
    arch, cfg, state = load_checkpoint(path)
    if arch == PRIOR_ARCH:
        return MedianBaseline(**cfg)
    if arch == LEARNED_ARCH:
        model = RecurrentBaseline(**cfg)
        model.load_state_dict(state)
        model.eval()
        return model
    raise ValueError(f"{path}: not a baseline checkpoint (arch {arch!r})")
