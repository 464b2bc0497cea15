"""scikit-learn style wrappers around the baselines and the RDF.

``X`` is a batch of rainy images ``(N, 3, H, W)`` in ``[0, 1]`` and ``y``
the matching clean images. Both estimators support ``get_params`` /
``set_params`` / ``clone`` through :class:`sklearn.base.BaseEstimator`.

    >>> base = BaselineDerainer(steps=200).fit(X_train, y_train)
    >>> rdf = ReferenceGuidedDerainer(baseline=base).fit(X_train, y_train)
    >>> enhanced = rdf.predict(X_test)
"""
from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin, clone
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from ._validation import check_image_batch, check_same_shape
from .baseline import MIN_SIZE, BaselineConfig, MedianBaseline, train_baseline
from .data import PairedSamples
from .evaluator import psnr
from .model import RdfConfig, RdfModel
from .rain_synth import RainParams
from .retrieval import index_from_arrays
from .trainer import TrainConfig, infer, train_finetune, train_init


def _check_pairs(X, y):
    X = check_image_batch(X, name="X", min_size=MIN_SIZE)
    if y is None:
        raise ValueError("clean targets y are required")
    y = check_image_batch(y, name="y", min_size=MIN_SIZE)
    check_same_shape(X, y, names=("X", "y"))
    _check_rgb(X)
    return X, y


def _check_rgb(X):
    if X.shape[1] != 3:
        raise ValueError(f"expected RGB images with 3 channels, got {X.shape[1]}")
    return X


def _sample_ids(n, ids):
    if ids is None:
        return [f"{i:06d}" for i in range(n)]
    ids = [str(i) for i in ids]
    if len(ids) != n or len(set(ids)) != n:
        raise ValueError("ids must be unique and match the number of samples")
    return ids


class BaselineDerainer(TransformerMixin, BaseEstimator):
    """Baseline de-rainer: ``kind="prior"`` (median filter) or ``"learned"`` (recurrent CNN)."""

    def __init__(self, kind="learned", channels=16, stages=5, steps=200, batch_size=4,
                 learning_rate=1e-3, random_state=0):
        self.kind = kind
        self.channels = channels
        self.stages = stages
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, X, y=None):
        if self.kind == "prior":
            if y is None:
                X = _check_rgb(check_image_batch(X, name="X", min_size=MIN_SIZE))
            else:
                X, y = _check_pairs(X, y)
            self.model_ = MedianBaseline()
        elif self.kind == "learned":
            X, y = _check_pairs(X, y)
            cfg = BaselineConfig("learned", self.channels, self.stages, self.steps,
                                 self.batch_size, self.learning_rate, self.random_state)
            self.model_ = train_baseline(PairedSamples(_sample_ids(len(X), None), X, y), cfg)
        else:
            raise ValueError(f"kind must be 'prior' or 'learned', got {self.kind!r}")
        self.n_channels_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return self.model_.derain(_check_rgb(check_image_batch(X, name="X", min_size=MIN_SIZE)))

    predict = transform

    def derain(self, rainy):
        check_is_fitted(self, "model_")
        return self.model_.derain(rainy)


class ReferenceGuidedDerainer(BaseEstimator):
    """Enhance a baseline's output with a retrieved clean reference.

    ``fit`` runs the initialization stage (each sample's own clean image as
    reference) and then fine-tuning with references retrieved from the
    training targets by perceptual hash. An unfitted ``baseline`` is cloned
    and fitted first; a fitted one is used as-is and stays frozen.
    """

    def __init__(self, baseline=None, channels=16, level3_patch=1, order="fine_to_coarse",
                 init_steps=300, finetune_steps=300, batch_size=2, learning_rate=1e-4,
                 alpha1=0.6, alpha2=0.4, rain=None, random_state=0):
        self.baseline = baseline
        self.channels = channels
        self.level3_patch = level3_patch
        self.order = order
        self.init_steps = init_steps
        self.finetune_steps = finetune_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.alpha1 = alpha1
        self.alpha2 = alpha2
        self.rain = rain
        self.random_state = random_state

    def _rain_params(self) -> RainParams:
        if self.rain is None:
            return RainParams(seed=self.random_state)
        if isinstance(self.rain, RainParams):
            return self.rain
        return RainParams(**self.rain)

    def _fitted_baseline(self, X, y):
        base = self.baseline if self.baseline is not None else BaselineDerainer(
            random_state=self.random_state)
        try:
            check_is_fitted(base, "model_")
            return base
        except NotFittedError:
            return clone(base).fit(X, y)

    def _stage(self, stage, steps, seed_offset):
        return TrainConfig(stage=stage, steps=steps, batch_size=self.batch_size,
                           lr=self.learning_rate, alpha1=self.alpha1, alpha2=self.alpha2,
                           seed=self.random_state + seed_offset)

    def fit(self, X, y, ids=None):
        X, y = _check_pairs(X, y)
        if len(X) < 2:
            raise ValueError("need at least two samples so every sample has a reference")
        ids = _sample_ids(len(X), ids)
        self.baseline_ = self._fitted_baseline(X, y)
        samples = PairedSamples(ids, X, y)
        self.index_ = index_from_arrays(ids, list(y))
        torch.manual_seed(self.random_state)
        model = RdfModel(RdfConfig(self.channels, self.level3_patch, order=self.order))
        train_init(model, self.baseline_, samples, self._stage("init", self.init_steps, 0))
        train_finetune(model, self.baseline_, samples, self.index_, self._rain_params(),
                       self._stage("finetune", self.finetune_steps, 1))
        self.model_ = model
        return self

    def predict(self, X, references=None, exclude_ids=None):
        """Enhanced images; ``references`` forces one clean reference per input."""
        check_is_fitted(self, "model_")
        X = _check_rgb(check_image_batch(X, name="X", min_size=MIN_SIZE))
        rain = self._rain_params()
        if references is not None:
            references = check_image_batch(references, name="references")
        out = []
        for i, x in enumerate(X):
            kw = {"query_id": exclude_ids[i] if exclude_ids is not None else None}
            if references is not None:
                kw = {"reference": references[i], "reference_id": f"forced:{i}"}
            out.append(infer(self.model_, self.baseline_, x, self.index_, rain, **kw).enhanced)
        return np.stack(out)

    def score(self, X, y):
        """Mean PSNR gain (dB) of the enhanced output over the baseline estimate."""
        X, y = _check_pairs(X, y)
        enhanced = self.predict(X)
        base = self.baseline_.derain(X)
        return float(np.mean([psnr(e, t) - psnr(b, t) for e, b, t in zip(enhanced, base, y)]))
