import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from refderain.estimator import BaselineDerainer, ReferenceGuidedDerainer
from refderain.rain_synth import RainParams, derive_seed, synthesize_streaks


@pytest.fixture(scope="module")
def data(corpus):
    ids = sorted(corpus)
    y = np.stack([corpus[i][:, :32, :32] for i in ids])
    X = np.stack([synthesize_streaks(c, RainParams(seed=derive_seed(0, i))) for c, i in zip(y, ids)])
    return X, y, ids


def test_get_params_and_clone():
    est = ReferenceGuidedDerainer(baseline=BaselineDerainer(kind="prior"), channels=4, init_steps=3)
    params = est.get_params()
    assert params["channels"] == 4 and params["init_steps"] == 3
    assert params["baseline__kind"] == "prior"
    twin = clone(est)
    assert twin.get_params()["channels"] == 4 and twin is not est
    est.set_params(channels=8, baseline__kind="learned")
    assert est.channels == 8 and est.baseline.kind == "learned"


def test_unfitted_raises(data):
    X, _, _ = data
    with pytest.raises(NotFittedError):
        BaselineDerainer().transform(X[:1])
    with pytest.raises(NotFittedError):
        ReferenceGuidedDerainer().predict(X[:1])


def test_input_validation(data):
    X, y, _ = data
    with pytest.raises(ValueError):
        BaselineDerainer(kind="prior").fit(X[:, :2], y[:, :2])
    with pytest.raises(ValueError):
        BaselineDerainer(kind="prior").fit(X, y[:-1])
    with pytest.raises(ValueError):
        BaselineDerainer(kind="prior").fit(X * 3, y)
    with pytest.raises(ValueError):
        BaselineDerainer(kind="wavelet").fit(X, y)


def test_baseline_fit_transform(data):
    X, y, _ = data
    est = BaselineDerainer(steps=3, channels=4, stages=2).fit(X, y)
    out = est.transform(X[:2])
    assert out.shape == X[:2].shape and out.dtype == np.float32
    assert np.array_equal(out, est.predict(X[:2]))


def test_rdf_fit_predict_score(data):
    X, y, ids = data
    est = ReferenceGuidedDerainer(baseline=BaselineDerainer(kind="prior"), channels=4,
                                  init_steps=3, finetune_steps=3)
    est.fit(X[:12], y[:12], ids=ids[:12])
    out = est.predict(X[12:])
    assert out.shape == X[12:].shape
    assert np.all((out >= 0) & (out <= 1))
    assert np.isfinite(est.score(X[12:], y[12:]))
    assert est.baseline.kind == "prior" and not hasattr(est.baseline, "baseline_")
    refs = est.predict(X[12:14], references=y[12:14])
    assert refs.shape == X[12:14].shape
