"""Run configuration: one YAML document holding every hyperparameter of a run."""
from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .baseline import BaselineConfig
from .losses import LossWeights
from .model import RdfConfig
from .rain_synth import RainParams
from .trainer import TrainConfig

RUN_DIR_ENV = "RDF_RUN_DIR"


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    clean_dir: str = "corpus"
    splits: dict = field(default_factory=lambda: {"train": 0.75, "test": 0.25})
    dataset_tag: str = "toy"


@dataclass
class RainSection:
    streak_count: int = 60
    streak_length_px: int = 10
    angle_deg: float = 10.0
    intensity: float = 0.6
    blur_sigma: float = 0.6


@dataclass
class BaselineSection:
    kind: str = "learned"
    channels: int = 16
    stages: int = 5
    steps: int = 200
    batch_size: int = 4
    lr: float = 1e-3


@dataclass
class ModelSection:
    channels: int = 16
    level3_patch: int = 1
    n_res: int = 2
    order: str = "fine_to_coarse"
    freeze_extractor: bool = False


@dataclass
class StageSection:
    steps: int = 300
    batch_size: int = 2
    lr: float = 1e-4


@dataclass
class TrainSection:
    init: StageSection = field(default_factory=StageSection)
    finetune: StageSection = field(default_factory=StageSection)


@dataclass
class LossSection:
    alpha1: float = 0.6
    alpha2: float = 0.4
    multiscale_ssim: bool = False


@dataclass
class EvalSection:
    split: str = "test"
    index_split: str = "all"
    method_name: str = "baseline"


@dataclass
class RunConfig:
    run_dir: str = "runs/toy"
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    rain: RainSection = field(default_factory=RainSection)
    baseline: BaselineSection = field(default_factory=BaselineSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    loss: LossSection = field(default_factory=LossSection)
    eval: EvalSection = field(default_factory=EvalSection)
    base_dir: Path = field(default=Path("."), repr=False, compare=False)

    # Resolved component configs -------------------------------------------------

    @property
    def rain_params(self) -> RainParams:
        return RainParams(**asdict(self.rain), seed=self.seed)

    @property
    def baseline_config(self) -> BaselineConfig:
        return BaselineConfig(**asdict(self.baseline), seed=self.seed)

    @property
    def rdf_config(self) -> RdfConfig:
        return RdfConfig(**asdict(self.model))

    def stage_config(self, stage: str) -> TrainConfig:
        sec = getattr(self.train, stage)
        return TrainConfig(stage=stage, steps=sec.steps, batch_size=sec.batch_size, lr=sec.lr,
                           alpha1=self.loss.alpha1, alpha2=self.loss.alpha2,
                           seed=self.seed + (0 if stage == "init" else 1),
                           freeze_extractor=self.model.freeze_extractor,
                           multiscale_ssim=self.loss.multiscale_ssim)

    @property
    def run_path(self) -> Path:
        override = os.environ.get(RUN_DIR_ENV)
        root = Path(override) if override else self.base_dir / self.run_dir
        return root

    @property
    def clean_path(self) -> Path:
        return self.base_dir / self.data.clean_dir

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc.pop("base_dir")
        return doc

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def validate(self) -> "RunConfig":
        try:
            self.rain_params
            self.baseline_config
            self.stage_config("init")
            self.stage_config("finetune")
            LossWeights(self.loss.alpha1, self.loss.alpha2)
            if self.baseline.kind not in ("prior", "learned"):
                raise ValueError(f"baseline.kind must be 'prior' or 'learned', got {self.baseline.kind!r}")
            if self.model.order not in ("fine_to_coarse", "coarse_to_fine"):
                raise ValueError(f"model.order invalid: {self.model.order!r}")
            total = sum(float(v) for v in self.data.splits.values())
            if abs(total - 1.0) > 1e-6:
                raise ValueError(f"data.splits must sum to 1, got {total}")
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return self


def _build(cls, doc, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(doc).__name__}")
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls) if f.name != "base_dir"}
    unknown = sorted(set(doc) - set(fields))
    if unknown:
        raise ConfigError(f"unknown config key(s) at {where or 'top level'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in doc.items():
        hint = hints[name]
        path = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, path)
        elif hint is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            kwargs[name] = float(value)
        elif hint in (int, str, bool) and not isinstance(value, hint):
            raise ConfigError(f"{path}: expected {hint.__name__}, got {value!r}")
        elif hint is int and isinstance(value, bool):
            raise ConfigError(f"{path}: expected int, got {value!r}")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(doc: dict, base_dir=".") -> RunConfig:
    cfg = _build(RunConfig, doc or {}, "")
    cfg.base_dir = Path(base_dir)
    return cfg.validate()


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return config_from_dict(doc or {}, path.parent)
