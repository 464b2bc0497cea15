import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from refderain.imageio import save_image
from refderain.rain_synth import (
    DatasetManifest, RainParams, derive_seed, make_dataset, synthesize_streaks,
)

# Frozen from a single run of synthesize_streaks (regression guard).
ZERO_IMAGE_MEAN = 0.04031934216618538


def test_zero_intensity_is_identity(corpus):
    img = corpus["street_0"]
    out = synthesize_streaks(img, RainParams(intensity=0.0, seed=3))
    assert np.array_equal(out, img)
    out = synthesize_streaks(img, RainParams(streak_count=0, seed=3))
    assert np.array_equal(out, img)


def test_deterministic(corpus):
    img = corpus["blobs_1"]
    p = RainParams(seed=11)
    assert synthesize_streaks(img, p).tobytes() == synthesize_streaks(img, p).tobytes()
    assert not np.array_equal(synthesize_streaks(img, p),
                              synthesize_streaks(img, RainParams(seed=12)))


def test_zero_image_golden_mean():
    out = synthesize_streaks(np.zeros((3, 64, 64), np.float32),
                             RainParams(streak_count=50, intensity=0.5, seed=0))
    assert out.mean() > 0
    assert out.mean() == pytest.approx(ZERO_IMAGE_MEAN, abs=1e-7)


def test_rejects_nonfinite():
    img = np.zeros((3, 8, 8), np.float32)
    img[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        synthesize_streaks(img, RainParams())


def test_param_validation():
    with pytest.raises(ValueError):
        RainParams(angle_deg=60)
    with pytest.raises(ValueError):
        RainParams(streak_length_px=0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32), intensity=st.floats(0.01, 1.0),
       angle=st.floats(-45, 45), count=st.integers(1, 80))
def test_streaks_only_brighten(corpus, seed, intensity, angle, count):
    img = corpus["tiles_2"]
    out = synthesize_streaks(img, RainParams(count, 8, angle, intensity, 0.5, seed))
    assert out.shape == img.shape
    assert out.min() >= 0 and out.max() <= 1
    assert np.all(out >= img)
    assert out.mean() >= img.mean()


def test_derive_seed_is_order_free():
    assert derive_seed(0, "a") == derive_seed(0, "a")
    assert derive_seed(0, "a") != derive_seed(1, "a")
    assert 0 <= derive_seed(5, "x") < 2**64


def _clean_dir(tmp_path, n):
    d = tmp_path / "clean"
    rng = np.random.default_rng(0)
    for i in range(n):
        save_image(rng.uniform(size=(3, 16, 16)), d / f"img_{i:02d}.png")
    return d


def test_make_dataset_split_counts(tmp_path):
    m = make_dataset(_clean_dir(tmp_path, 10), RainParams(seed=1), (0.8, 0.2), tmp_path / "ds")
    assert len(m.split("train")) == 8 and len(m.split("test")) == 2
    loaded = DatasetManifest.load(tmp_path / "ds" / "manifest.json")
    assert [r.sample_id for r in loaded.records] == [f"img_{i:02d}" for i in range(10)]
    assert all(r.seed == derive_seed(1, r.sample_id) for r in loaded.records)


def test_make_dataset_rebuild_identical(tmp_path):
    clean = _clean_dir(tmp_path, 6)
    make_dataset(clean, RainParams(seed=4), (0.5, 0.5), tmp_path / "a")
    make_dataset(clean, RainParams(seed=4), (0.5, 0.5), tmp_path / "b")
    a = (tmp_path / "a" / "manifest.json").read_bytes()
    b = (tmp_path / "b" / "manifest.json").read_bytes()
    assert a == b
    for name in ("img_00.png", "img_05.png"):
        assert (tmp_path / "a/rainy" / name).read_bytes() == (tmp_path / "b/rainy" / name).read_bytes()


def test_make_dataset_all_train(tmp_path):
    m = make_dataset(_clean_dir(tmp_path, 4), RainParams(), (1.0, 0.0), tmp_path / "ds")
    assert {r.split for r in m.records} == {"train"}


def test_make_dataset_errors(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(ValueError):
        make_dataset(tmp_path / "empty", RainParams(), (0.8, 0.2), tmp_path / "o")
    with pytest.raises(FileNotFoundError):
        make_dataset(tmp_path / "missing", RainParams(), (0.8, 0.2), tmp_path / "o")
    with pytest.raises(ValueError):
        make_dataset(_clean_dir(tmp_path, 3), RainParams(), (0.5, 0.2), tmp_path / "o")


def test_undecodable_image_skipped_and_logged(tmp_path):
    clean = _clean_dir(tmp_path, 3)
    (clean / "broken.png").write_bytes(b"not a png")
    m = make_dataset(clean, RainParams(), (1.0, 0.0), tmp_path / "ds")
    assert len(m.records) == 3
    doc = json.loads((tmp_path / "ds/manifest.json").read_text())
    assert doc["version"] == 1 and any("broken.png" in line for line in doc["log"])


def test_manifest_load_checks_files(tmp_path):
    make_dataset(_clean_dir(tmp_path, 3), RainParams(), (1.0, 0.0), tmp_path / "ds")
    (tmp_path / "ds/rainy/img_01.png").unlink()
    with pytest.raises(FileNotFoundError, match="img_01"):
        DatasetManifest.load(tmp_path / "ds/manifest.json")
