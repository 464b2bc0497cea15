"""In-memory paired samples loaded from a manifest split."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imageio import load_image


@dataclass
class PairedSamples:
    ids: list[str]
    rainy: np.ndarray  # (N, 3, H, W)
    clean: np.ndarray  # (N, 3, H, W)

    def __post_init__(self):
        if not (len(self.ids) == len(self.rainy) == len(self.clean)):
            raise ValueError("ids, rainy and clean must have equal length")
        if self.rainy.shape != self.clean.shape:
            raise ValueError(f"rainy/clean shapes differ: {self.rainy.shape} vs {self.clean.shape}")

    def __len__(self):
        return len(self.ids)


def load_split(manifest, split: str) -> PairedSamples:
    records = manifest.split(split)
    if not records:
        raise ValueError(f"split {split!r} is empty")
    rainy = [load_image(manifest.resolve(r.rainy_path)) for r in records]
    clean = [load_image(manifest.resolve(r.clean_path)) for r in records]
    shapes = {a.shape for a in rainy + clean}
    if len(shapes) != 1:
        raise ValueError(f"split {split!r} mixes image shapes {sorted(shapes)}")
    return PairedSamples([r.sample_id for r in records], np.stack(rainy), np.stack(clean))
