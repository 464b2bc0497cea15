"""Reference-guided de-raining filter (RDF).

Enhances the output of any baseline de-rainer by transferring patch
features from a retrieved clean reference image.
"""
from .attention import AttentionResult, attend, gather_reference, relevance, unfold_patches
from .baseline import BaselineConfig, MedianBaseline, RecurrentBaseline, train_baseline
from .estimator import BaselineDerainer, ReferenceGuidedDerainer
from .evaluator import evaluate_split, export_attention_map, psnr, reference_ablation
from .extractor import FeatureExtractor, FeaturePyramid, extract_pyramid
from .losses import LossWeights, l1_loss, ssim, ssim_l1_loss
from .model import RdfConfig, RdfModel
from .rain_synth import DatasetManifest, RainParams, make_dataset, synthesize_streaks
from .retrieval import RetrievalIndex, build_index, hamming, nearest_reference, perceptual_hash
from .trainer import TrainConfig, infer, train_finetune, train_init

__version__ = "0.1.0"

__all__ = [
    "AttentionResult", "BaselineConfig", "BaselineDerainer", "DatasetManifest",
    "FeatureExtractor", "FeaturePyramid", "LossWeights", "MedianBaseline", "RainParams",
    "RdfConfig", "RdfModel", "RecurrentBaseline", "ReferenceGuidedDerainer", "RetrievalIndex",
    "TrainConfig", "attend", "build_index", "evaluate_split", "export_attention_map",
    "extract_pyramid", "gather_reference", "hamming", "infer", "l1_loss", "make_dataset",
    "nearest_reference", "perceptual_hash", "psnr", "reference_ablation", "relevance", "ssim",
    "ssim_l1_loss", "synthesize_streaks", "train_baseline", "train_finetune", "train_init",
    "unfold_patches",
]
