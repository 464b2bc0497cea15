import numpy as np
import pytest
import torch
import torch.nn as nn
import torch.nn.functional as F

from gradcheck import check_param_gradients
from refderain.attention import AttentionResult, level_patch_sizes
from refderain.extractor import FeaturePyramid
from refderain.fusion import CrossScaleExchange, FeatureFusion, csfi_exchange, fuse_and_project, soft_reweight


def _pyramid(c, h, w, seed, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    return FeaturePyramid(torch.randn(1, c, h, w, generator=g, dtype=dtype),
                          torch.randn(1, 2 * c, h // 2, w // 2, generator=g, dtype=dtype),
                          torch.randn(1, 4 * c, h // 4, w // 4, generator=g, dtype=dtype))


def _attn(grid, soft):
    n = grid[0] * grid[1]
    return AttentionResult(torch.zeros(1, n, dtype=torch.int64), soft.reshape(1, n), grid)


def naive_conv3x3(x, weight, bias):
    """Zero-padded 3x3 convolution by explicit loops; x is (C, H, W)."""
    cin, h, w = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.zeros((weight.shape[0], h, w))
    for o in range(weight.shape[0]):
        for i in range(h):
            for j in range(w):
                out[o, i, j] = bias[o] + float((weight[o] * xp[:, i:i + 3, j:j + 3]).sum())
    return out


def test_soft_reweight_zero_gate():
    q, t = torch.randn(1, 4, 8, 8), torch.randn(1, 4, 8, 8)
    out = soft_reweight(q, t, torch.zeros(1, 1, 8, 8), nn.Conv2d(8, 4, 3, padding=1))
    assert torch.equal(out, q)


def test_soft_reweight_zero_merge():
    q, t = torch.randn(1, 4, 8, 8), torch.randn(1, 4, 8, 8)
    merge = nn.Conv2d(8, 4, 3, padding=1)
    nn.init.zeros_(merge.weight)
    nn.init.zeros_(merge.bias)
    assert torch.equal(soft_reweight(q, t, torch.ones(1, 1, 8, 8), merge), q)


def test_soft_reweight_matches_formula():
    torch.manual_seed(3)
    q = torch.randn(1, 2, 6, 6, dtype=torch.float64)
    t = torch.randn(1, 2, 6, 6, dtype=torch.float64)
    s = torch.rand(1, 1, 6, 6, dtype=torch.float64)
    merge = nn.Conv2d(4, 2, 3, padding=1).double()
    got = soft_reweight(q, t, s, merge)[0].detach().numpy()
    cat = np.concatenate([q[0].numpy(), t[0].numpy()])
    conv = naive_conv3x3(cat, merge.weight.detach().numpy(), merge.bias.detach().numpy())
    want = q[0].numpy() + conv * s[0].numpy()
    np.testing.assert_allclose(got, want, atol=1e-5)


def test_soft_reweight_shape_errors():
    merge = nn.Conv2d(8, 4, 3, padding=1)
    with pytest.raises(ValueError):
        soft_reweight(torch.zeros(1, 4, 8, 8), torch.zeros(1, 4, 4, 4), torch.ones(1, 1, 8, 8), merge)
    with pytest.raises(ValueError):
        soft_reweight(torch.zeros(1, 4, 8, 8), torch.zeros(1, 4, 8, 8), torch.ones(1, 1, 4, 4), merge)


def test_soft_map_broadcast_per_level():
    attn = _attn((2, 2), torch.tensor([1.0, 2.0, 3.0, 4.0]))
    for p in level_patch_sizes(2):
        m = attn.soft_map(p)
        assert m.shape == (1, 1, 2 * p, 2 * p)
        assert torch.all(m[..., :p, :p] == 1.0) and torch.all(m[..., p:, p:] == 4.0)


def test_csfi_zero_in_zero_out():
    ex = CrossScaleExchange(4)
    for p in ex.parameters():
        nn.init.zeros_(p)
    pyr = FeaturePyramid(torch.zeros(1, 4, 16, 16), torch.zeros(1, 8, 8, 8), torch.zeros(1, 16, 4, 4))
    for t in csfi_exchange(pyr, ex):
        assert torch.all(t == 0)


@pytest.mark.parametrize("h,w", [(8, 8), (16, 24), (32, 12)])
def test_csfi_preserves_shapes(h, w):
    pyr = _pyramid(3, h, w, 0, torch.float32)
    out = csfi_exchange(pyr, CrossScaleExchange(3))
    assert [t.shape for t in out] == [t.shape for t in pyr]


def test_csfi_information_flows_from_coarse_level():
    torch.manual_seed(1)
    ex = CrossScaleExchange(2).double()
    zero = FeaturePyramid(torch.zeros(1, 2, 16, 16, dtype=torch.float64),
                          torch.zeros(1, 4, 8, 8, dtype=torch.float64),
                          torch.zeros(1, 8, 4, 4, dtype=torch.float64))
    hot3 = zero.level3.clone()
    hot3[0, 0, 2, 1] = 1.0
    base = ex(*zero)
    resp = ex(zero.level1, zero.level2, hot3)
    assert (resp[0] - base[0]).abs().max() > 0
    assert (resp[1] - base[1]).abs().max() > 0


def test_zero_projection_returns_base():
    torch.manual_seed(0)
    fusion = FeatureFusion(4)
    base = torch.rand(1, 3, 16, 16)
    out = fusion(_pyramid(4, 16, 16, 1, torch.float32), _pyramid(4, 16, 16, 2, torch.float32),
                 _attn((4, 4), torch.rand(16)), level_patch_sizes(1), base)
    assert torch.equal(out, base)


@pytest.mark.parametrize("h,w,p3", [(16, 16, 1), (24, 8, 1), (32, 16, 2)])
def test_fuse_output_shape(h, w, p3):
    fusion = FeatureFusion(2, zero_init_tail=False)
    grid = (h // 4 // p3, w // 4 // p3)
    out = fuse_and_project(_pyramid(2, h, w, 0, torch.float32), _pyramid(2, h, w, 1, torch.float32),
                           _attn(grid, torch.rand(grid[0] * grid[1])), fusion,
                           torch.rand(1, 3, h, w), level_patch_sizes(p3))
    assert out.shape == (1, 3, h, w)
    assert out.min() >= 0 and out.max() <= 1


@pytest.mark.parametrize("order", ["fine_to_coarse", "coarse_to_fine"])
def test_zero_soft_attention_ignores_reference(order):
    torch.manual_seed(2)
    fusion = FeatureFusion(4, order=order, zero_init_tail=False)
    q = _pyramid(4, 16, 16, 0, torch.float32)
    attn = _attn((4, 4), torch.zeros(16))
    base = torch.rand(1, 3, 16, 16)
    a = fusion(q, _pyramid(4, 16, 16, 5, torch.float32), attn, level_patch_sizes(1), base)
    b = fusion(q, _pyramid(4, 16, 16, 6, torch.float32), attn, level_patch_sizes(1), base)
    assert torch.equal(a, b)


def test_compensation_order_matters():
    torch.manual_seed(4)
    a = FeatureFusion(2, order="fine_to_coarse", zero_init_tail=False)
    b = FeatureFusion(2, order="coarse_to_fine", zero_init_tail=False)
    b.load_state_dict(a.state_dict())
    args = (_pyramid(2, 16, 16, 0, torch.float32), _pyramid(2, 16, 16, 1, torch.float32),
            _attn((4, 4), torch.rand(16)), level_patch_sizes(1), torch.full((1, 3, 16, 16), 0.5))
    assert not torch.equal(a(*args), b(*args))
    with pytest.raises(ValueError):
        FeatureFusion(2, order="sideways")


def test_fusion_gradients_match_finite_differences():
    torch.manual_seed(5)
    fusion = FeatureFusion(2, zero_init_tail=False).double()
    with torch.no_grad():
        fusion.projection().weight.mul_(0.1)
    q, t = _pyramid(2, 16, 16, 0), _pyramid(2, 16, 16, 1)
    attn = _attn((4, 4), torch.rand(16, dtype=torch.float64))
    base = torch.full((1, 3, 16, 16), 0.5, dtype=torch.float64)
    target = torch.rand(1, 3, 16, 16, generator=torch.Generator().manual_seed(9), dtype=torch.float64)

    def loss():
        return F.l1_loss(fusion(q, t, attn, level_patch_sizes(1), base), target)

    failures = check_param_gradients(fusion, loss, n_samples=20)
    assert not failures, failures
