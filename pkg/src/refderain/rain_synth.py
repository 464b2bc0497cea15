"""Deterministic synthetic rain and paired-dataset construction."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .imageio import load_image, save_image

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


@dataclass(frozen=True)
class RainParams:
    streak_count: int = 60
    streak_length_px: int = 10
    angle_deg: float = 10.0
    intensity: float = 0.6
    blur_sigma: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if self.streak_count < 0:
            raise ValueError("streak_count must be >= 0")
        if self.streak_length_px < 1:
            raise ValueError("streak_length_px must be >= 1")
        if not -45.0 <= self.angle_deg <= 45.0:
            raise ValueError("angle_deg must lie in [-45, 45]")
        if not 0.0 <= self.intensity <= 1.0:
            raise ValueError("intensity must lie in [0, 1]")
        if self.blur_sigma < 0:
            raise ValueError("blur_sigma must be >= 0")


def derive_seed(global_seed: int, key: str) -> int:
    """64-bit seed from ``(global_seed, key)``; independent of processing order."""
    digest = hashlib.blake2b(f"{int(global_seed)}:{key}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def streak_layer(height: int, width: int, params: RainParams) -> np.ndarray:
    """Rain-only layer ``(H, W)``: blurred oriented segments with peak <= 1."""
    rng = np.random.default_rng(params.seed)
    layer = np.zeros((height, width), dtype=np.float64)
    n = params.streak_count
    if n == 0:
        return layer
    length = params.streak_length_px
    theta = np.deg2rad(params.angle_deg)
    # Angle is measured from vertical; streaks fall downwards.
    dx, dy = np.sin(theta), np.cos(theta)
    x0 = rng.uniform(-length * abs(dx), width, size=n)
    y0 = rng.uniform(-length, height, size=n)
    brightness = rng.uniform(0.6, 1.0, size=n)
    t = np.linspace(0.0, length, 2 * length + 1)
    xs = np.rint(x0[:, None] + t[None, :] * dx).astype(np.int64)
    ys = np.rint(y0[:, None] + t[None, :] * dy).astype(np.int64)
    vals = np.broadcast_to(brightness[:, None], xs.shape)
    inside = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
    np.maximum.at(layer, (ys[inside], xs[inside]), vals[inside])
    if params.blur_sigma > 0:
        layer = gaussian_filter(layer, sigma=params.blur_sigma, mode="constant")
    return layer


def synthesize_streaks(clean, params: RainParams) -> np.ndarray:
    """Add rain streaks to a ``(C, H, W)`` image in ``[0, 1]``.

    Output is clipped to ``[0, 1]`` and is a pure function of
    ``(clean, params)``. With no streaks or zero intensity the input is
    returned unchanged (as a copy).
    """
    img = np.asarray(clean)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3:
        raise ValueError(f"expected (C, H, W) image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("clean image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("clean image values must lie in [0, 1]")
    if params.streak_count == 0 or params.intensity == 0.0:
        return img.copy()
    layer = streak_layer(img.shape[1], img.shape[2], params)
    out = img.astype(np.float64) + params.intensity * layer[None]
    return np.clip(out, 0.0, 1.0).astype(img.dtype)


@dataclass(frozen=True)
class ManifestRecord:
    sample_id: str
    rainy_path: str
    clean_path: str
    split: str
    seed: int


@dataclass
class DatasetManifest:
    """Paired rainy/clean records; paths are relative to ``root``."""

    root: Path
    records: list[ManifestRecord]
    global_seed: int = 0
    log: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.root = Path(self.root)
        ids = [r.sample_id for r in self.records]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate sample_id in manifest")

    def split(self, tag: str) -> list[ManifestRecord]:
        if tag == "all":
            return list(self.records)
        return [r for r in self.records if r.split == tag]

    def resolve(self, rel: str) -> Path:
        return (self.root / rel).resolve()

    def to_json(self) -> str:
        doc = {
            "version": MANIFEST_VERSION,
            "global_seed": self.global_seed,
            "records": [
                {"id": r.sample_id, "rainy": r.rainy_path, "clean": r.clean_path,
                 "split": r.split, "seed": r.seed}
                for r in self.records
            ],
            "log": list(self.log),
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def save(self, path=None) -> Path:
        path = Path(path) if path is not None else self.root / "manifest.json"
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path, *, check_files: bool = True) -> "DatasetManifest":
        path = Path(path)
        doc = json.loads(path.read_text(encoding="utf-8"))
        if doc.get("version") != MANIFEST_VERSION:
            raise ValueError(f"{path}: unsupported manifest version {doc.get('version')!r}")
        records = [
            ManifestRecord(d["id"], d["rainy"], d["clean"], d["split"], int(d["seed"]))
            for d in doc["records"]
        ]
        manifest = cls(path.parent, records, int(doc.get("global_seed", 0)), list(doc.get("log", [])))
        if check_files:
            missing = [str(manifest.resolve(p)) for r in records
                       for p in (r.rainy_path, r.clean_path)
                       if not manifest.resolve(p).is_file()]
            if missing:
                raise FileNotFoundError("manifest references missing files: " + ", ".join(missing))
        return manifest


def _split_counts(n: int, fractions: Sequence[float]) -> list[int]:
    # Largest-remainder rounding so counts always sum to n.
    raw = [f * n for f in fractions]
    counts = [int(np.floor(r + 1e-9)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def _normalize_splits(splits) -> dict[str, float]:
    if isinstance(splits, Mapping):
        out = {str(k): float(v) for k, v in splits.items()}
    else:
        splits = [float(s) for s in splits]
        tags = {2: ("train", "test"), 3: ("train", "val", "test")}.get(len(splits))
        if tags is None:
            raise ValueError("splits must be a mapping or 2/3 fractions")
        out = dict(zip(tags, splits))
    if any(v < 0 for v in out.values()) or abs(sum(out.values()) - 1.0) > 1e-6:
        raise ValueError(f"split fractions must be non-negative and sum to 1, got {out}")
    # Canonical tag order so equivalent mappings assign identical splits.
    return dict(sorted(out.items()))


def make_dataset(clean_dir, params: RainParams, splits=(0.8, 0.2), out_dir=None) -> DatasetManifest:
    """Synthesize a rainy twin for every image in ``clean_dir``.

    Rainy PNGs go to ``out_dir/rainy/`` and the manifest to
    ``out_dir/manifest.json``. ``params.seed`` is the global seed; each
    sample gets ``derive_seed(params.seed, sample_id)``.
    """
    clean_dir = Path(clean_dir)
    if not clean_dir.is_dir():
        raise FileNotFoundError(f"clean_dir does not exist: {clean_dir}")
    out_dir = Path(out_dir) if out_dir is not None else clean_dir.parent / "dataset"
    fractions = _normalize_splits(splits)

    files = sorted(p for p in clean_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise ValueError(f"no images found in {clean_dir}")
    stems = [p.stem for p in files]
    if len(stems) != len(set(stems)):
        raise ValueError(f"duplicate image stems in {clean_dir}")

    log: list[str] = []
    decoded: list[tuple[str, Path, np.ndarray]] = []
    for p in files:
        try:
            decoded.append((p.stem, p, load_image(p)))
        except Exception as exc:  # PIL raises a zoo of exception types
            msg = f"skipped undecodable image {p.name}: {exc.__class__.__name__}"
            logger.warning(msg)
            log.append(msg)
    if len(decoded) < 2:
        raise ValueError(f"need at least 2 decodable images in {clean_dir}, found {len(decoded)}")

    n = len(decoded)
    perm = np.random.default_rng(params.seed).permutation(n)
    tags: list[str] = [""] * n
    pos = 0
    for tag, count in zip(fractions, _split_counts(n, list(fractions.values()))):
        for k in perm[pos: pos + count]:
            tags[k] = tag
        pos += count

    rainy_dir = out_dir / "rainy"
    rainy_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for (sample_id, src, img), tag in zip(decoded, tags):
        seed = derive_seed(params.seed, sample_id)
        rainy = synthesize_streaks(img, dataclasses.replace(params, seed=seed))
        dst = save_image(rainy, rainy_dir / f"{sample_id}.png")
        records.append(ManifestRecord(
            sample_id,
            os.path.relpath(dst, out_dir),
            os.path.relpath(src.resolve(), out_dir.resolve()),
            tag, seed))
    manifest = DatasetManifest(out_dir, records, params.seed, log)
    manifest.save()
    return manifest
