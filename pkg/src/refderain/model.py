"""The reference-guided de-raining filter: extractor + attention + fusion."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ._validation import check_image_batch, check_same_shape, to_tensor
from .attention import AttentionResult, gather_reference, level_patch_sizes, search
from .checkpoint import load_checkpoint, save_checkpoint
from .extractor import FeatureExtractor
from .fusion import FeatureFusion

ARCH_ID = "rdf-v1"


@dataclass
class RdfConfig:
    channels: int = 16
    level3_patch: int = 1
    n_res: int = 2
    order: str = "fine_to_coarse"
    freeze_extractor: bool = False
    zero_init_tail: bool = True

    @property
    def patch_sizes(self) -> tuple[int, int, int]:
        return level_patch_sizes(self.level3_patch)

    @classmethod
    def full_size(cls) -> "RdfConfig":
        """64/128/256 channels and 12/6/3 patch sizes."""
        return cls(channels=64, level3_patch=3)


class RdfModel(nn.Module):
    def __init__(self, config: RdfConfig | None = None):
        super().__init__()
        self.config = config or RdfConfig()
        c = self.config
        self.extractor = FeatureExtractor(c.channels)
        self.fusion = FeatureFusion(c.channels, c.n_res, c.order, c.zero_init_tail)
        self.set_extractor_frozen(c.freeze_extractor)

    def set_extractor_frozen(self, frozen: bool) -> None:
        for p in self.extractor.parameters():
            p.requires_grad_(not frozen)

    @property
    def multiple(self) -> int:
        return 4 * self.config.level3_patch

    def _pad(self, x):
        h, w = x.shape[-2:]
        m = self.multiple
        ph, pw = (-h) % m, (-w) % m
        if ph == 0 and pw == 0:
            return x
        mode = "reflect" if ph < h and pw < w else "replicate"
        return F.pad(x, (0, pw, 0, ph), mode=mode)

    def forward(self, x_hat: torch.Tensor, r_hat: torch.Tensor, r_clean: torch.Tensor):
        """Return ``(enhanced, attention)`` for batched ``(B, 3, H, W)`` inputs."""
        if not (x_hat.shape == r_hat.shape == r_clean.shape):
            raise ValueError(f"input shapes differ: {tuple(x_hat.shape)}, {tuple(r_hat.shape)}, "
                             f"{tuple(r_clean.shape)}")
        h, w = x_hat.shape[-2:]
        xp, rp, cp = self._pad(x_hat), self._pad(r_hat), self._pad(r_clean)
        q = self.extractor(xp)
        k = self.extractor(rp)
        v = self.extractor(cp)
        attn = search(q.level3, k.level3, self.config.level3_patch)
        transferred = gather_reference(v, attn, self.config.patch_sizes)
        out = self.fusion(q, transferred, attn, self.config.patch_sizes, xp)
        return out[..., :h, :w], attn

    def enhance(self, x_hat, r_hat, r_clean) -> tuple[np.ndarray, AttentionResult]:
        """Array convenience wrapper: ``(C, H, W)`` or batched numpy in, numpy out."""
        single = np.asarray(x_hat).ndim == 3
        arrays = [check_image_batch(a, name=n) for a, n in
                  ((x_hat, "x_hat"), (r_hat, "r_hat"), (r_clean, "r_clean"))]
        check_same_shape(*arrays, names=("x_hat", "r_hat", "r_clean"))
        dtype = next(self.parameters()).dtype
        with torch.no_grad():
            out, attn = self(*(to_tensor(a, dtype) for a in arrays))
        out = out.cpu().numpy().astype(np.float32)
        return (out[0] if single else out), attn

    def save(self, path) -> Path:
        return save_checkpoint(path, ARCH_ID, self.state_dict(), asdict(self.config))

    @classmethod
    def load(cls, path) -> "RdfModel":
        _, cfg, state = load_checkpoint(path, expect_arch=ARCH_ID)
        model = cls(RdfConfig(**cfg))
        model.load_state_dict(state)
        model.eval()
        return model
