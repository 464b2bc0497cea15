"""Procedural 16-image corpus used by the tests and the CLI smoke pipeline.

Images come in four scene families (street, blobs, stripes, tiles). The
four variants of a family are offset crops of one shared canvas with a
small colour jitter, so every image has close neighbours for reference
retrieval, much like nearby frames of a driving sequence.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .imageio import save_image

FAMILIES = ("street", "blobs", "stripes", "tiles")


def _grid(size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / (size - 1)
    return yy, xx


def _street(rng, size, shift):
    yy, xx = _grid(size)
    sky = np.stack([0.45 + 0.3 * yy, 0.6 + 0.25 * yy, 0.85 - 0.1 * yy])
    img = sky.copy()
    horizon = 0.55 + shift[0] * 0.05
    ground = yy > horizon
    img[:, ground] = np.array([0.35, 0.33, 0.3])[:, None]
    for b in range(5):
        x0 = (b * 0.2 + shift[1] * 0.04 + rng.uniform(-0.02, 0.02)) % 1.0
        w = 0.1 + 0.03 * rng.uniform()
        top = horizon - (0.2 + 0.25 * ((b * 37) % 5) / 5)
        mask = (xx >= x0) & (xx < x0 + w) & (yy >= top) & (yy <= horizon)
        img[:, mask] = np.array([0.55 + 0.08 * b, 0.4 + 0.05 * b, 0.3])[:, None] * 0.9
    road = ground & (np.abs(xx - 0.5) < (yy - horizon) * 0.8)
    img[:, road] = 0.22
    return img


def _blobs(rng, size, shift):
    yy, xx = _grid(size)
    img = np.stack([0.2 + 0.5 * xx, 0.3 + 0.2 * yy, 0.5 - 0.2 * xx])
    centres = [(0.3, 0.3), (0.7, 0.35), (0.5, 0.72)]
    colours = [(0.9, 0.3, 0.2), (0.2, 0.8, 0.3), (0.95, 0.85, 0.2)]
    for (cy, cx), col in zip(centres, colours):
        cy += shift[0] * 0.04 + rng.uniform(-0.01, 0.01)
        cx += shift[1] * 0.04 + rng.uniform(-0.01, 0.01)
        r = 0.15 + 0.02 * rng.uniform()
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r ** 2
        img[:, mask] = np.array(col)[:, None]
    return img


def _stripes(rng, size, shift):
    yy, xx = _grid(size)
    freq = 3 + shift[0]
    phase = shift[1] * 0.5 + rng.uniform(0, 0.2)
    wave = 0.5 + 0.35 * np.sin(2 * np.pi * (freq * (xx + 0.3 * yy)) + phase)
    return np.stack([wave * 0.9, 0.3 + 0.4 * yy, 1.0 - wave * 0.8])


def _tiles(rng, size, shift):
    yy, xx = _grid(size)
    n = 4 + (shift[0] % 2)
    cells = (np.floor(yy * n + shift[1] * 0.1) + np.floor(xx * n)) % 2
    base = np.stack([0.25 + 0.5 * cells, 0.25 + 0.35 * cells, 0.4 + 0.2 * (1 - cells)])
    return base + 0.05 * (xx - 0.5)


_BUILDERS = {"street": _street, "blobs": _blobs, "stripes": _stripes, "tiles": _tiles}
_OFFSETS = ((0, 0), (0, 1), (1, 0), (1, 1))
PAD = 3


def toy_images(size: int = 64, seed: int = 0) -> dict[str, np.ndarray]:
    """``{name: (3, size, size) float32}`` for all 16 corpus images."""
    rng = np.random.default_rng(seed)
    out = {}
    pad = max(1, PAD * size // 64)
    for family in FAMILIES:
        canvas = _BUILDERS[family](rng, size + pad, (0, 1))
        for v, (oy, ox) in enumerate(_OFFSETS):
            img = canvas[:, oy * pad:oy * pad + size, ox * pad:ox * pad + size]
            jitter = rng.uniform(-0.04, 0.04, size=3)[:, None, None]
            out[f"{family}_{v}"] = np.clip(img + jitter, 0.0, 1.0).astype(np.float32)
    return out


def write_toy_corpus(out_dir, size: int = 64, seed: int = 0) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, img in toy_images(size, seed).items():
        save_image(img, out_dir / f"{name}.png")
    return out_dir
