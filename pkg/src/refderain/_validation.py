"""Input validation helpers shared by every public entry point.

Images cross module boundaries as ``numpy`` float arrays in ``[0, 1]``,
channels first: ``(C, H, W)`` for a single image and ``(N, C, H, W)`` for
a batch.
"""
from __future__ import annotations

import numpy as np
import torch


def check_image(img, *, name: str = "image", min_size: int = 1,
                check_range: bool = True) -> np.ndarray:
    """Return ``img`` as a float32 ``(C, H, W)`` array or raise ``ValueError``.

    A 2-D input is treated as a single-channel image.
    """
    if isinstance(img, torch.Tensor):
        img = img.detach().cpu().numpy()
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"{name}: expected (C, H, W) array, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.number):
        raise ValueError(f"{name}: expected numeric dtype, got {arr.dtype}")
    arr = arr.astype(np.float32, copy=False)
    if arr.shape[1] < min_size or arr.shape[2] < min_size:
        raise ValueError(
            f"{name}: spatial size {arr.shape[1]}x{arr.shape[2]} below minimum {min_size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite values")
    if check_range and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(f"{name}: values must lie in [0, 1]")
    return arr


def check_image_batch(X, *, name: str = "X", min_size: int = 1) -> np.ndarray:
    """Return ``X`` as a float32 ``(N, C, H, W)`` array; a single image is promoted."""
    if isinstance(X, torch.Tensor):
        X = X.detach().cpu().numpy()
    arr = np.asarray(X)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ValueError(f"{name}: expected (N, C, H, W) array, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError(f"{name}: empty batch")
    return np.stack([check_image(a, name=name, min_size=min_size) for a in arr])


def check_same_shape(*arrays, names=None) -> None:
    shapes = [tuple(a.shape) for a in arrays]
    if len(set(shapes)) > 1:
        label = ", ".join(names) if names else "inputs"
        raise ValueError(f"shape mismatch among {label}: {shapes}")


def to_tensor(img: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """``(C, H, W)`` or ``(N, C, H, W)`` array to a batched tensor."""
    t = torch.as_tensor(np.ascontiguousarray(img), dtype=dtype)
    return t.unsqueeze(0) if t.dim() == 3 else t


def to_array(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().astype(np.float32, copy=False)
