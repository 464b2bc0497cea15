import math

import numpy as np
import pytest
import torch
from PIL import Image

from refderain.attention import AttentionResult
from refderain.baseline import MedianBaseline
from refderain.data import PairedSamples
from refderain.evaluator import (
    CSV_FIELDS, PSNR_TABLE_CAP, EvalReport, Method, attention_heatmap, capped, evaluate_split,
    export_attention_map, noise_reference, psnr, reference_ablation,
)
from refderain.model import RdfConfig, RdfModel
from refderain.rain_synth import RainParams, derive_seed, synthesize_streaks
from refderain.retrieval import index_from_arrays

RAIN = RainParams(seed=0)


def test_psnr_examples():
    x = np.random.default_rng(0).uniform(size=(3, 8, 8))
    assert psnr(x, x) == math.inf
    assert capped(psnr(x, x)) == PSNR_TABLE_CAP
    assert psnr(np.zeros((3, 4, 4)), np.full((3, 4, 4), 0.5)) == pytest.approx(6.0206, abs=1e-4)


def test_psnr_matches_scalar_loop():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(size=(3, 6, 6)), rng.uniform(size=(3, 6, 6))
    mse = sum((p - q) ** 2 for p, q in zip(a.ravel(), b.ravel())) / a.size
    assert psnr(a, b) == pytest.approx(10 * math.log10(1 / mse), abs=1e-6)


def test_psnr_monotone_in_noise():
    rng = np.random.default_rng(2)
    x = rng.uniform(0.2, 0.8, size=(3, 16, 16))
    noise = rng.standard_normal(x.shape)
    values = [psnr(x, x + amp * noise) for amp in (0.01, 0.02, 0.05, 0.1, 0.2)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


def test_noise_reference_range_and_determinism():
    a = noise_reference((3, 16, 16), "q")
    assert a.min() >= 0 and a.max() <= 1
    assert np.array_equal(a, noise_reference((3, 16, 16), "q"))
    assert abs(a.mean() - 0.5) < 0.05


@pytest.fixture(scope="module")
def samples(corpus):
    ids = sorted(corpus)[:6]
    clean = np.stack([corpus[i] for i in ids])
    rainy = np.stack([synthesize_streaks(corpus[i], RainParams(seed=derive_seed(0, i))) for i in ids])
    return PairedSamples(ids, rainy, clean)


def test_baseline_against_itself_has_zero_deltas(samples):
    index = index_from_arrays(samples.ids, list(samples.clean))
    report = evaluate_split([Method("median", MedianBaseline())], samples, index, RAIN)
    row = report.row("median")
    assert row.psnr_delta == 0.0 and row.ssim_delta == 0.0
    assert all(s.ref_id != s.sample_id for s in report.samples)


def test_row_count_and_csv_schema(samples, tmp_path):
    index = index_from_arrays(samples.ids, list(samples.clean))
    torch.manual_seed(0)
    methods = [Method("median", MedianBaseline()),
               Method("median-rdf", MedianBaseline(), RdfModel(RdfConfig(channels=4)))]
    report = evaluate_split(methods, samples, index, RAIN, dataset="toy")
    assert len(report.rows) == 2 and len(report.samples) == 2 * len(samples)
    csv_path, txt_path = report.write(tmp_path)
    lines = csv_path.read_text().splitlines()
    assert lines[0] == ",".join(CSV_FIELDS)
    assert len(lines) == 1 + 2 * len(samples)
    again = evaluate_split(methods, samples, index, RAIN, dataset="toy")
    assert again.to_csv() == csv_path.read_text()
    table = txt_path.read_text()
    assert "float RGB" in table and "median + RDF" in table


def test_reference_ablation_rows(samples):
    index = index_from_arrays(samples.ids, list(samples.clean))
    torch.manual_seed(0)
    report = reference_ablation(RdfModel(RdfConfig(channels=4)), MedianBaseline(), samples, index, RAIN)
    assert [r.method for r in report.rows] == ["ground_truth", "noise", "retrieved"]
    gt = [s for s in report.samples if s.method == "ground_truth"]
    assert all(s.ref_id == s.sample_id for s in gt)
    retrieved = [s for s in report.samples if s.method == "retrieved"]
    assert all(s.ref_id != s.sample_id for s in retrieved)


def test_empty_split_rejected():
    empty = PairedSamples([], np.zeros((0, 3, 16, 16)), np.zeros((0, 3, 16, 16)))
    with pytest.raises(ValueError):
        evaluate_split([], empty, None, RAIN)


def _attn(values, grid):
    n = len(values)
    return AttentionResult(torch.zeros(1, n, dtype=torch.int64),
                           torch.tensor([values], dtype=torch.float64), grid)


def _decode(path, grid, patch):
    rgb = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
    gh, gw = grid
    return rgb.reshape(gh, patch, gw, patch, 3)[:, 0, :, 0, :].reshape(gh * gw, 3)


def _luma(rgb):
    return rgb @ np.array([0.299, 0.587, 0.114])


def test_uniform_scores_render_single_colour(tmp_path):
    path = export_attention_map(_attn([0.3] * 16, (4, 4)), tmp_path / "u.png", (16, 16))
    rgb = np.asarray(Image.open(path).convert("RGB")).reshape(-1, 3)
    assert len(np.unique(rgb, axis=0)) == 1
    assert (tmp_path / "u.json").exists()


def test_peak_patch_is_warmest(tmp_path):
    values = [0.1] * 16
    values[9] = 0.95
    path = export_attention_map(_attn(values, (4, 4)), tmp_path / "p.png", (16, 16))
    colours = _decode(path, (4, 4), 4)
    assert int(np.argmax(_luma(colours))) == 9
    full = np.asarray(Image.open(path).convert("RGB"))
    assert np.all(full[8:12, 4:8] == colours[9])


def test_rank_order_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    values = list(rng.permutation(np.linspace(-0.9, 0.9, 24)))
    path = export_attention_map(_attn(values, (4, 6)), tmp_path / "r.png", (16, 24))
    lum = _luma(_decode(path, (4, 6), 4))
    assert list(np.argsort(lum)) == list(np.argsort(values))


def test_heatmap_rejects_bad_size():
    with pytest.raises(ValueError):
        attention_heatmap(_attn([0.1, 0.2, 0.3, 0.4], (2, 2)), (5, 4))
