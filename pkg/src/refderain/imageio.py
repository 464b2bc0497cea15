"""PNG read/write for ``[0, 1]`` float images (8-bit on disk)."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def load_image(path) -> np.ndarray:
    """Decode an image file into a float32 ``(3, H, W)`` array in ``[0, 1]``."""
    with Image.open(path) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.float32)
    return np.ascontiguousarray(rgb.transpose(2, 0, 1) / 255.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    """``(C, H, W)`` float to ``(H, W, C)`` uint8 with round-to-nearest."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.round(arr * 255.0).astype(np.uint8).transpose(1, 2, 0)


def save_image(img: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    hwc = to_uint8(img)
    if hwc.shape[2] == 1:
        hwc = hwc[:, :, 0]
    Image.fromarray(hwc).save(path, format="PNG")
    return path
