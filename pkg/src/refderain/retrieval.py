"""Reference retrieval by nearest neighbour in 64-bit DCT perceptual-hash space."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.fft import dctn

from .imageio import load_image

INDEX_VERSION = 1
HASH_RESOLUTION = 32
_MASK64 = (1 << 64) - 1
_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)


@dataclass(frozen=True, order=True)
class PerceptualHash:
    bits: int

    def __post_init__(self):
        if not 0 <= self.bits <= _MASK64:
            raise ValueError("perceptual hash must fit in 64 bits")

    @property
    def hex(self) -> str:
        return f"{self.bits:016x}"

    @classmethod
    def from_hex(cls, text: str) -> "PerceptualHash":
        return cls(int(text, 16))

    def __invert__(self) -> "PerceptualHash":
        return PerceptualHash(~self.bits & _MASK64)


def _bits(h) -> int:
    return h.bits if isinstance(h, PerceptualHash) else int(h)


def hamming(a, b) -> int:
    """Number of differing bits between two hashes (or plain ints)."""
    return (_bits(a) ^ _bits(b)).bit_count()


def _grayscale(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[0] == 3:
        return np.tensordot(_LUMA, img, axes=1)
    return img.mean(axis=0)


def _hash_coefficients(img) -> np.ndarray:
    gray = _grayscale(img)
    if gray.size == 0:
        raise ValueError("cannot hash an empty image")
    small = Image.fromarray(gray.astype(np.float32), mode="F").resize(
        (HASH_RESOLUTION, HASH_RESOLUTION), Image.Resampling.BOX)
    small = np.asarray(small, dtype=np.float64)
    if np.ptp(small) == 0.0:
        return np.zeros(64)
    coeffs = dctn(small, type=2, norm="ortho")
    # 8x8 low-frequency block without DC, topped up with coefficient (0, 8).
    block = coeffs[:8, :8].ravel()[1:]
    return np.append(block, coeffs[0, 8])


def perceptual_hash(img) -> PerceptualHash:
    """64-bit pHash of a ``(C, H, W)`` or ``(H, W)`` image.

    Luma, box-resample to 32x32, orthonormal 2-D DCT-II, take 64
    low-frequency AC coefficients and set a bit wherever a coefficient
    exceeds their median. The first coefficient maps to the most
    significant bit. A constant image hashes to 0.
    """
    values = _hash_coefficients(img)
    bits = values > np.median(values)
    out = 0
    for b in bits:
        out = (out << 1) | int(b)
    return PerceptualHash(out)


@dataclass(frozen=True)
class IndexEntry:
    sample_id: str
    hash: PerceptualHash
    path: str


@dataclass
class RetrievalIndex:
    """Immutable-after-build table of ``(sample_id, hash, clean_path)``.

    Paths are resolved against ``root``. Images supplied in memory (see
    :func:`index_from_arrays`) are served from ``images`` instead of disk.
    """

    entries: list[IndexEntry]
    root: Path = Path(".")
    images: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.root = Path(self.root)
        ids = [e.sample_id for e in self.entries]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate sample_id in retrieval index")
        self.entries = sorted(self.entries, key=lambda e: e.sample_id)

    def __len__(self):
        return len(self.entries)

    @property
    def ids(self) -> list[str]:
        return [e.sample_id for e in self.entries]

    def restrict(self, ids) -> "RetrievalIndex":
        keep = set(ids)
        return RetrievalIndex([e for e in self.entries if e.sample_id in keep], self.root,
                              {k: v for k, v in self.images.items() if k in keep})

    def image(self, sample_id: str) -> np.ndarray:
        if sample_id in self.images:
            return self.images[sample_id]
        for e in self.entries:
            if e.sample_id == sample_id:
                return load_image(self.root / e.path)
        raise KeyError(sample_id)

    def to_json(self) -> str:
        doc = {
            "version": INDEX_VERSION,
            "entries": [{"id": e.sample_id, "hash_hex": e.hash.hex, "path": e.path}
                        for e in self.entries],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path, root=None) -> "RetrievalIndex":
        path = Path(path)
        doc = json.loads(path.read_text(encoding="utf-8"))
        if doc.get("version") != INDEX_VERSION:
            raise ValueError(f"{path}: unsupported index version {doc.get('version')!r}")
        entries = [IndexEntry(d["id"], PerceptualHash.from_hex(d["hash_hex"]), d["path"])
                   for d in doc["entries"]]
        return cls(entries, root if root is not None else path.parent)


def build_index(manifest, which_split: str = "train") -> RetrievalIndex:
    """Hash every clean image of ``which_split`` (``"all"`` for every record)."""
    entries = []
    for rec in manifest.split(which_split):
        full = manifest.resolve(rec.clean_path)
        if not full.is_file():
            raise FileNotFoundError(f"clean image missing for {rec.sample_id}: {full}")
        entries.append(IndexEntry(rec.sample_id, perceptual_hash(load_image(full)), rec.clean_path))
    return RetrievalIndex(entries, manifest.root)


def index_from_arrays(ids, images) -> RetrievalIndex:
    ids = [str(i) for i in ids]
    entries = [IndexEntry(i, perceptual_hash(img), "") for i, img in zip(ids, images)]
    return RetrievalIndex(entries, Path("."), dict(zip(ids, images)))


def nearest_id(index: RetrievalIndex, query_hash, exclude_id=None) -> str:
    """Id minimizing Hamming distance to ``query_hash``; ties go to the lowest id."""
    best = None
    for e in index.entries:
        if exclude_id is not None and e.sample_id == exclude_id:
            continue
        key = (hamming(e.hash, query_hash), e.sample_id)
        if best is None or key < best:
            best = key
    if best is None:
        raise LookupError("retrieval index is empty after exclusion")
    return best[1]


def nearest_reference(index: RetrievalIndex, query, exclude_id=None):
    """Return ``(sample_id, clean image)`` of the closest indexed entry to ``query``."""
    ref_id = nearest_id(index, perceptual_hash(query), exclude_id)
    return ref_id, index.image(ref_id)
