"""PSNR/SSIM evaluation, reference-type ablation and attention-map export."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from matplotlib import colormaps
from PIL import Image

from .attention import AttentionResult
from .losses import ssim
from .rain_synth import RainParams, derive_seed
from .trainer import infer

PSNR_TABLE_CAP = 100.0
CSV_FIELDS = ("method", "dataset", "sample_id", "ref_id", "psnr_base", "ssim_base",
              "psnr_rdf", "ssim_rdf")
METRIC_NOTE = "metrics on float RGB in [0, 1], PSNR peak 1.0, SSIM gaussian 11/1.5 channel mean"
COLORMAP = "inferno"


def psnr(x, y, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)``; identical inputs give ``inf``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak ** 2 / mse)


def capped(value: float) -> float:
    return min(value, PSNR_TABLE_CAP)


def noise_reference(shape, key: str, seed: int = 0) -> np.ndarray:
    """Standard-normal image mapped to ``[0, 1]`` by clamping at +-3 sigma."""
    rng = np.random.default_rng(derive_seed(seed, f"noise:{key}"))
    z = np.clip(rng.standard_normal(shape), -3.0, 3.0)
    return ((z + 3.0) / 6.0).astype(np.float32)


@dataclass
class SampleResult:
    method: str
    dataset: str
    sample_id: str
    ref_id: str
    psnr_base: float
    ssim_base: float
    psnr_rdf: float
    ssim_rdf: float


@dataclass
class ReportRow:
    method: str
    dataset: str
    psnr_base: float
    ssim_base: float
    psnr_rdf: float
    ssim_rdf: float

    @property
    def psnr_delta(self) -> float:
        return self.psnr_rdf - self.psnr_base

    @property
    def ssim_delta(self) -> float:
        return self.ssim_rdf - self.ssim_base


@dataclass
class EvalReport:
    rows: list[ReportRow] = field(default_factory=list)
    samples: list[SampleResult] = field(default_factory=list)

    def row(self, method: str, dataset: str | None = None) -> ReportRow:
        for r in self.rows:
            if r.method == method and (dataset is None or r.dataset == dataset):
                return r
        raise KeyError(method)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for s in self.samples:
            w.writerow([s.method, s.dataset, s.sample_id, s.ref_id,
                        *(f"{v:.6f}" for v in (s.psnr_base, s.ssim_base, s.psnr_rdf, s.ssim_rdf))])
        return buf.getvalue()

    def to_table(self) -> str:
        lines = [f"# {METRIC_NOTE}",
                 f"{'Method':<28} {'Dataset':<10} {'PSNR':>18} {'SSIM':>20}"]
        for r in self.rows:
            lines.append(f"{r.method:<28} {r.dataset:<10} {capped(r.psnr_base):>18.2f} "
                         f"{r.ssim_base:>20.4f}")
        lines.append("-" * 79)
        for r in self.rows:
            p = f"{capped(r.psnr_rdf):.2f}_({r.psnr_delta:+.2f})"
            s = f"{r.ssim_rdf:.4f}_({r.ssim_delta:+.4f})"
            lines.append(f"{r.method + ' + RDF':<28} {r.dataset:<10} {p:>18} {s:>20}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir, stem: str = "eval") -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / f"{stem}.csv"
        txt_path = out_dir / f"{stem}.txt"
        csv_path.write_text(self.to_csv(), encoding="utf-8")
        txt_path.write_text(self.to_table(), encoding="utf-8")
        return csv_path, txt_path


def _aggregate(method, dataset, samples: list[SampleResult]) -> ReportRow:
    def mean(attr):
        vals = [capped(getattr(s, attr)) if attr.startswith("psnr") else getattr(s, attr)
                for s in samples]
        return math.fsum(vals) / len(vals)

    return ReportRow(method, dataset, mean("psnr_base"), mean("ssim_base"),
                     mean("psnr_rdf"), mean("ssim_rdf"))


def _score(method, dataset, sid, clean, result) -> SampleResult:
    return SampleResult(method, dataset, sid, result.ref_id,
                        psnr(result.derained, clean), ssim(result.derained, clean),
                        psnr(result.enhanced, clean), ssim(result.enhanced, clean))


@dataclass
class Method:
    """A named (baseline, RDF model) pair; ``model=None`` evaluates the baseline alone."""

    name: str
    baseline: object
    model: object = None


def evaluate_split(methods, samples, index, rain: RainParams, dataset: str = "toy") -> EvalReport:
    """Baseline vs enhanced metrics for every (method, sample) with retrieved references."""
    if len(samples) == 0:
        raise ValueError("evaluation split is empty")
    report = EvalReport()
    for m in methods:
        per = []
        for sid, rainy, clean in zip(samples.ids, samples.rainy, samples.clean):
            res = infer(m.model, m.baseline, rainy, index, rain, query_id=sid)
            per.append(_score(m.name, dataset, sid, clean, res))
        report.samples.extend(per)
        report.rows.append(_aggregate(m.name, dataset, per))
    return report


REFERENCE_TYPES = ("ground_truth", "noise", "retrieved")


def reference_ablation(model, baseline, samples, index, rain: RainParams,
                       dataset: str = "toy", noise_seed: int = 0) -> EvalReport:
    """One row per reference type: forced ground truth, forced Gaussian noise, retrieved."""
    if len(samples) == 0:
        raise ValueError("evaluation split is empty")
    report = EvalReport()
    for kind in REFERENCE_TYPES:
        per = []
        for sid, rainy, clean in zip(samples.ids, samples.rainy, samples.clean):
            if kind == "ground_truth":
                res = infer(model, baseline, rainy, None, rain, reference=clean, reference_id=sid)
            elif kind == "noise":
                res = infer(model, baseline, rainy, None, rain,
                            reference=noise_reference(clean.shape, sid, noise_seed),
                            reference_id=f"noise:{sid}")
            else:
                res = infer(model, baseline, rainy, index, rain, query_id=sid)
            per.append(_score(kind, dataset, sid, clean, res))
        report.samples.extend(per)
        report.rows.append(_aggregate(kind, dataset, per))
    return report


def attention_heatmap(attn: AttentionResult, image_size=None, item: int = 0) -> np.ndarray:
    """Soft scores as an ``(H, W, 3)`` uint8 heat map (warm = high relevance)."""
    gh, gw = attn.grid
    s = attn.soft[item].detach().cpu().numpy().astype(np.float64).reshape(gh, gw)
    lo, hi = float(s.min()), float(s.max())
    norm = (s - lo) / (hi - lo) if hi > lo else np.zeros_like(s)
    rgb = colormaps[COLORMAP](norm)[..., :3]
    rgb = np.round(rgb * 255.0).astype(np.uint8)
    if image_size is not None:
        h, w = image_size
        if h % gh or w % gw:
            raise ValueError(f"image size {image_size} is not a multiple of grid {attn.grid}")
        rgb = rgb.repeat(h // gh, axis=0).repeat(w // gw, axis=1)
    return rgb


def export_attention_map(attn: AttentionResult, out_path, image_size=None, item: int = 0) -> Path:
    """Write the heat map as PNG, plus a ``.json`` sidecar with the raw grid, H and S."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(attention_heatmap(attn, image_size, item)).save(out_path, format="PNG")
    attn.save_json(out_path.with_suffix(".json"), item)
    return out_path
