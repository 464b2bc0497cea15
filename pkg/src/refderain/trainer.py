"""Two-stage RDF training (initialization, fine-tuning) and full-pipeline inference."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ._validation import check_image
from .attention import AttentionResult
from .baseline import TrainingDivergedError
from .losses import LossWeights, l1_loss, ssim_l1_loss
from .model import RdfModel
from .rain_synth import RainParams, derive_seed, synthesize_streaks
from .retrieval import RetrievalIndex, nearest_id, perceptual_hash

logger = logging.getLogger(__name__)

STAGES = ("init", "finetune")


@dataclass
class TrainConfig:
    stage: str = "init"
    steps: int = 300
    batch_size: int = 2
    lr: float = 1e-4
    alpha1: float = 0.6
    alpha2: float = 0.4
    seed: int = 0
    freeze_extractor: bool = False
    multiscale_ssim: bool = False

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.alpha1, self.alpha2)


def stage_loss(cfg: TrainConfig):
    """``(name, fn)`` of the objective bound to ``cfg.stage``."""
    if cfg.stage == "init":
        return "l1", l1_loss
    w = cfg.weights
    return "ssim_l1", lambda p, t: ssim_l1_loss(p, t, w, multiscale=cfg.multiscale_ssim)


@dataclass
class ReferenceSet:
    """Per-sample network inputs: de-rained query, de-rained reference, clean reference."""

    ids: list[str]
    ref_ids: list[str]
    x_hat: np.ndarray
    r_hat: np.ndarray
    r_clean: np.ndarray


def reference_rain(r_clean: np.ndarray, ref_id: str, rain: RainParams) -> np.ndarray:
    """Synthetic rain for a reference, seeded by its id so reuse is reproducible."""
    return synthesize_streaks(r_clean, dataclasses.replace(rain, seed=derive_seed(rain.seed, ref_id)))


def init_references(baseline, samples) -> ReferenceSet:
    """Clean target as the reference; the key is the query's own de-rained image."""
    x_hat = baseline.derain(samples.rainy)
    return ReferenceSet(list(samples.ids), list(samples.ids), x_hat, x_hat.copy(),
                        samples.clean.copy())


def retrieved_references(baseline, samples, index: RetrievalIndex, rain: RainParams) -> ReferenceSet:
    x_hat = baseline.derain(samples.rainy)
    ref_ids, r_hat, r_clean = [], [], []
    for sid, xh in zip(samples.ids, x_hat):
        ref_id = nearest_id(index, perceptual_hash(xh), exclude_id=sid)
        clean = index.image(ref_id)
        ref_ids.append(ref_id)
        r_clean.append(clean)
        r_hat.append(baseline.derain(reference_rain(clean, ref_id, rain)))
    return ReferenceSet(list(samples.ids), ref_ids, x_hat, np.stack(r_hat), np.stack(r_clean))


def _fit(model: RdfModel, refs: ReferenceSet, targets: np.ndarray, cfg: TrainConfig,
         log_path=None, checkpoint_path=None) -> RdfModel:
    loss_name, loss_fn = stage_loss(cfg)
    model.set_extractor_frozen(cfg.freeze_extractor)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    dtype = next(model.parameters()).dtype
    xh, rh, rc, gt = (torch.as_tensor(a, dtype=dtype) for a in
                      (refs.x_hat, refs.r_hat, refs.r_clean, targets))
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.lr) if params and cfg.steps else None
    n = len(refs.ids)
    history = []
    log = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log = open(log_path, "a", encoding="utf-8")
    try:
        model.train()
        for step in range(cfg.steps):
            idx = np.sort(rng.choice(n, size=min(cfg.batch_size, n), replace=False))
            it = torch.from_numpy(idx)
            out, _ = model(xh[it], rh[it], rc[it])
            loss = loss_fn(out, gt[it])
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingDivergedError(
                    f"{cfg.stage} loss became {value} at step {step} "
                    f"(samples {[refs.ids[i] for i in idx]})")
            opt.zero_grad()
            loss.backward()
            opt.step()
            history.append(value)
            if log:
                log.write(json.dumps({
                    "step": step, "stage": cfg.stage, "loss": value, "lr": cfg.lr,
                    "loss_fn": loss_name,
                    "sample_id": [refs.ids[i] for i in idx],
                    "ref_id": [refs.ref_ids[i] for i in idx],
                }) + "\n")
    finally:
        if log:
            log.close()
    model.eval()
    model.loss_history = history
    if checkpoint_path is not None:
        model.save(checkpoint_path)
    if history:
        logger.info("%s stage: %d steps, loss %.5f -> %.5f", cfg.stage, len(history),
                    history[0], history[-1])
    return model


def train_init(model: RdfModel, baseline, samples, cfg: TrainConfig, log_path=None,
               checkpoint_path=None) -> RdfModel:
    """Initialization stage: the ground-truth clean image serves as reference, L1 loss."""
    if cfg.stage != "init":
        raise ValueError("train_init requires cfg.stage == 'init'")
    refs = init_references(baseline, samples)
    return _fit(model, refs, samples.clean, cfg, log_path, checkpoint_path)


def train_finetune(model: RdfModel, baseline, samples, index: RetrievalIndex, rain: RainParams,
                   cfg: TrainConfig, log_path=None, checkpoint_path=None) -> RdfModel:
    """Fine-tuning stage: retrieved references (self excluded), weighted SSIM-L1 loss."""
    if cfg.stage != "finetune":
        raise ValueError("train_finetune requires cfg.stage == 'finetune'")
    if len(index) == 0:
        raise LookupError("retrieval index is empty")
    refs = retrieved_references(baseline, samples, index, rain)
    return _fit(model, refs, samples.clean, cfg, log_path, checkpoint_path)


@dataclass
class InferenceResult:
    derained: np.ndarray
    enhanced: np.ndarray
    attention: AttentionResult
    ref_id: str
    reference: np.ndarray


def infer(model: RdfModel | None, baseline, x_rainy, index: RetrievalIndex | None,
          rain: RainParams, *, query_id=None, reference=None, reference_id=None) -> InferenceResult:
    """Rainy image -> baseline estimate -> reference -> enhanced estimate.

    Without ``reference`` the clean reference is retrieved from ``index``
    by the hash of the baseline estimate, never returning ``query_id``.
    Passing ``reference`` (with a ``reference_id`` used to seed its rain)
    forces the clean reference instead. With ``model=None`` the enhanced
    output is the baseline estimate itself.
    """
    x_rainy = check_image(x_rainy, name="x_rainy")
    x_hat = baseline.derain(x_rainy)
    if reference is None:
        if index is None:
            raise ValueError("either an index or a forced reference is required")
        reference_id = nearest_id(index, perceptual_hash(x_hat), exclude_id=query_id)
        reference = index.image(reference_id)
    else:
        reference = check_image(reference, name="reference")
        if reference_id is None:
            raise ValueError("a forced reference needs a reference_id to seed its rain")
    r_hat = baseline.derain(reference_rain(reference, reference_id, rain))
    if model is None:
        grid = (1, 1)
        attn = AttentionResult(torch.zeros(1, 1, dtype=torch.int64), torch.zeros(1, 1), grid)
        return InferenceResult(x_hat, x_hat.copy(), attn, reference_id, reference)
    enhanced, attn = model.enhance(x_hat, r_hat, reference)
    return InferenceResult(x_hat, enhanced, attn, reference_id, reference)
