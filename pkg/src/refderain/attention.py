"""Patch-level hard/soft attention and reference feature transfer.

Relevance is computed once, between level-3 patches of the query
(de-rained input) and key (de-rained reference). The resulting hard index
map then selects value (clean reference) patches at every level, with
patch sizes scaled so that the three patch grids coincide.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn.functional as F

from .extractor import FeaturePyramid

TransferredPyramid = FeaturePyramid


@dataclass
class PatchMatrix:
    """Flattened patches ``(B, N, D)`` plus the geometry needed to fold them back."""

    patches: torch.Tensor
    patch: int
    stride: int
    grid: tuple[int, int]
    channels: int

    @property
    def n(self) -> int:
        return self.patches.shape[-2]


@dataclass
class AttentionResult:
    """Per query patch: index of best reference patch (``hard``) and its relevance (``soft``)."""

    hard: torch.Tensor  # (B, N) int64
    soft: torch.Tensor  # (B, N)
    grid: tuple[int, int]

    def soft_map(self, patch: int = 1) -> torch.Tensor:
        """``soft`` on the query grid, each score repeated over a ``patch x patch`` block."""
        b = self.soft.shape[0]
        s = self.soft.reshape(b, 1, *self.grid)
        if patch > 1:
            s = s.repeat_interleave(patch, dim=2).repeat_interleave(patch, dim=3)
        return s

    def detach(self) -> "AttentionResult":
        return AttentionResult(self.hard.detach(), self.soft.detach(), self.grid)

    def to_dict(self, item: int = 0) -> dict:
        return {
            "grid": list(self.grid),
            "H": [int(v) for v in self.hard[item].tolist()],
            "S": [float(v) for v in self.soft[item].detach().tolist()],
        }

    def save_json(self, path, item: int = 0) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(item)) + "\n", encoding="utf-8")
        return path

    @classmethod
    def from_dict(cls, doc: dict) -> "AttentionResult":
        return cls(torch.tensor([doc["H"]], dtype=torch.int64),
                   torch.tensor([doc["S"]], dtype=torch.float64),
                   tuple(doc["grid"]))


def unfold_patches(feat: torch.Tensor, patch: int, stride: int | None = None) -> PatchMatrix:
    """Row ``i`` is the flattened ``(C, patch, patch)`` block at grid position ``i`` (row-major)."""
    stride = patch if stride is None else stride
    if feat.dim() == 3:
        feat = feat.unsqueeze(0)
    _, c, h, w = feat.shape
    if patch < stride:
        raise ValueError(f"patch ({patch}) must be >= stride ({stride})")
    if h % stride or w % stride or h < patch or w < patch:
        raise ValueError(f"feature size {h}x{w} incompatible with patch={patch}, stride={stride}")
    grid = ((h - patch) // stride + 1, (w - patch) // stride + 1)
    cols = F.unfold(feat, kernel_size=patch, stride=stride)  # (B, D, N)
    return PatchMatrix(cols.transpose(1, 2), patch, stride, grid, c)


def fold_patches(pm: PatchMatrix) -> torch.Tensor:
    """Inverse of :func:`unfold_patches`; overlapping contributions are averaged."""
    gh, gw = pm.grid
    size = ((gh - 1) * pm.stride + pm.patch, (gw - 1) * pm.stride + pm.patch)
    cols = pm.patches.transpose(1, 2)
    out = F.fold(cols, size, kernel_size=pm.patch, stride=pm.stride)
    if pm.stride == pm.patch:
        return out
    ones = torch.ones_like(cols)
    return out / F.fold(ones, size, kernel_size=pm.patch, stride=pm.stride)


def _unit_rows(x: torch.Tensor) -> torch.Tensor:
    norm = x.norm(dim=-1, keepdim=True)
    return x / torch.where(norm > 0, norm, torch.ones_like(norm))


def relevance(q, k) -> torch.Tensor:
    """Cosine similarity between every query row and every key row.

    Accepts :class:`PatchMatrix` or tensors shaped ``(N, D)`` / ``(B, N, D)``.
    Zero-norm rows give zero relevance.
    """
    q = q.patches if isinstance(q, PatchMatrix) else q
    k = k.patches if isinstance(k, PatchMatrix) else k
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"patch dimension mismatch: {q.shape[-1]} vs {k.shape[-1]}")
    return _unit_rows(q) @ _unit_rows(k).transpose(-1, -2)


def attend(rel: torch.Tensor, grid: tuple[int, int] | None = None) -> AttentionResult:
    """Row-wise max (soft) and argmax (hard, first index on ties)."""
    if rel.numel() == 0:
        raise ValueError("empty relevance matrix")
    if rel.dim() == 2:
        rel = rel.unsqueeze(0)
    soft, hard = rel.max(dim=-1)
    n = rel.shape[1]
    if grid is None:
        grid = (1, n)
    if grid[0] * grid[1] != n:
        raise ValueError(f"grid {grid} does not match {n} query patches")
    return AttentionResult(hard, soft, tuple(grid))


def level_patch_sizes(level3_patch: int) -> tuple[int, int, int]:
    """Index-compatible patch sizes for levels 1, 2, 3."""
    return 4 * level3_patch, 2 * level3_patch, level3_patch


def gather_reference(value: FeaturePyramid, attn: AttentionResult,
                     patch_sizes: tuple[int, int, int]) -> TransferredPyramid:
    """Copy value patch ``hard[i]`` into query position ``i`` at every level."""
    out = []
    n_ref = None
    for feat, p in zip(value, patch_sizes):
        pm = unfold_patches(feat, p, p)
        if n_ref is None:
            n_ref = pm.n
        elif pm.n != n_ref:
            raise ValueError("value pyramid levels have incompatible patch grids for sizes "
                             f"{patch_sizes}")
        if int(attn.hard.max()) >= pm.n or int(attn.hard.min()) < 0:
            raise ValueError("hard attention index out of range of the value patch grid")
        if attn.hard.shape[0] != pm.patches.shape[0]:
            raise ValueError("batch size mismatch between attention and value features")
        idx = attn.hard.unsqueeze(-1).expand(-1, -1, pm.patches.shape[-1])
        picked = torch.gather(pm.patches, 1, idx)
        out.append(fold_patches(PatchMatrix(picked, p, p, attn.grid, pm.channels)))
    return TransferredPyramid(*out)


def search(query3: torch.Tensor, key3: torch.Tensor, patch: int) -> AttentionResult:
    """Level-3 unfold -> relevance -> attend."""
    q = unfold_patches(query3, patch, patch)
    k = unfold_patches(key3, patch, patch)
    return attend(relevance(q, k), q.grid)
