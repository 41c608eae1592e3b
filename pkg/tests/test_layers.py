"""Layer zoo: two-path equivariance, statistics, pooling semantics, gradients."""

import numpy as np
import pytest
import torch

from symdet.fields import FieldType, transform_tensor
from symdet.groups import dihedral
from symdet.layers import (
    EquiNorm,
    FusionConv1x1,
    GroupConv,
    GroupPool,
    LiftConv,
    bilinear_upsample,
    global_avg_pool,
    pointwise_relu,
    spatial_maxpool,
)
from symdet.verify import (
    case_residuals,
    equivariance_residual,
    finite_difference_check,
    layer_suite,
)

G4 = dihedral(4)
LAYER_TOL = 1e-4
GRAD_TOL = 1e-3


@pytest.mark.parametrize("case", layer_suite(G4), ids=lambda c: c.name)
def test_two_path_equivariance_d4(case):
    residuals = case_residuals(case, G4, seed=0)
    worst = max(residuals.values())
    assert worst <= LAYER_TOL, f"{case.name}: {worst}"


def test_lift_conv_zero_image():
    torch.manual_seed(0)
    conv = LiftConv(G4, 3, 2, 3)
    out = conv(torch.zeros(1, 3, 8, 8))
    bias = conv.expanded_bias()
    assert torch.equal(out, bias.view(1, -1, 1, 1).expand_as(out))
    conv_nb = LiftConv(G4, 3, 2, 3, bias=False)
    assert torch.equal(conv_nb(torch.zeros(1, 3, 8, 8)), torch.zeros(1, 16, 8, 8))


def test_lift_conv_impulse_response_matches_expanded_taps():
    torch.manual_seed(1)
    conv = LiftConv(G4, 1, 1, 3, bias=False)
    size = 9
    img = torch.zeros(1, 1, size, size)
    img[0, 0, size // 2, size // 2] = 1.0
    out = conv(img)
    weight = conv.expanded_weight()
    # cross-correlation with a centered delta reproduces the taps mirrored
    # about the center: out[c, center - dy, center - dx] = w[c, 0, 1+dy, 1+dx]
    for c in range(weight.shape[0]):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                assert out[0, c, size // 2 - dy, size // 2 - dx] == weight[c, 0, 1 + dy, 1 + dx]


def test_group_conv_zero_and_translation():
    torch.manual_seed(0)
    conv = GroupConv(G4, 2, 2, 3, bias=False)
    assert torch.equal(conv(torch.zeros(1, 16, 8, 8)), torch.zeros(1, 16, 8, 8))
    conv1 = GroupConv(G4, 2, 2, 1)
    x = torch.randn(1, 16, 8, 8)
    shifted = torch.roll(x, shifts=(2, 3), dims=(-2, -1))
    assert torch.equal(conv1(shifted), torch.roll(conv1(x), shifts=(2, 3), dims=(-2, -1)))


def test_strided_conv_shapes():
    conv = GroupConv(G4, 1, 1, 3, stride=2)
    assert conv(torch.randn(1, 8, 16, 16)).shape == (1, 8, 8, 8)
    with pytest.raises(ValueError):
        GroupConv(G4, 1, 1, 3, stride=3)
    with pytest.raises(ValueError):
        conv(torch.randn(1, 9, 16, 16))


def test_relu_identity_on_nonnegative():
    x = torch.rand(2, 8, 5, 5)
    assert torch.equal(pointwise_relu(x), x)


def test_equi_norm_statistics():
    torch.manual_seed(0)
    ft = FieldType.regular(G4, 3)
    norm = EquiNorm(ft)
    norm.train()
    x = torch.randn(4, ft.channels, 8, 8) * 3.0 + 1.5
    out = norm(x)
    per_field = out.reshape(4, 3, G4.size, 8, 8)
    mean = per_field.mean(dim=(0, 2, 3, 4))
    var = per_field.var(dim=(0, 2, 3, 4), unbiased=False)
    assert mean.abs().max() < 1e-5
    assert (var - 1).abs().max() < 1e-4


def test_equi_norm_running_stats_and_eval():
    torch.manual_seed(0)
    ft = FieldType.regular(G4, 1)
    norm = EquiNorm(ft)
    norm.train()
    x = torch.randn(8, ft.channels, 6, 6) * 2.0 + 3.0
    for _ in range(200):
        norm(x)
    norm.eval()
    out = norm(x)
    assert out.mean().abs() < 0.05
    assert (out.var() - 1).abs() < 0.1


def test_group_pool_brute_force():
    torch.manual_seed(0)
    ft = FieldType.regular(G4, 3)
    pool = GroupPool(ft)
    x = torch.randn(2, ft.channels, 5, 5)
    out = pool(x)
    assert out.shape == (2, 3, 5, 5)
    for b in range(2):
        for f in range(3):
            for i in range(5):
                for j in range(5):
                    fiber = x[b, f * 8 : (f + 1) * 8, i, j]
                    assert out[b, f, i, j] == fiber.max()


def test_group_pool_constant_fiber():
    ft = FieldType.regular(G4, 2)
    pool = GroupPool(ft)
    x = torch.ones(1, ft.channels, 4, 4) * 2.5
    assert torch.equal(pool(x), torch.full((1, 2, 4, 4), 2.5))


def test_group_pool_exact_equivariance():
    torch.manual_seed(0)
    ft = FieldType.regular(G4, 2)
    pool = GroupPool(ft)
    x = torch.randn(1, ft.channels, 8, 8)
    for g in G4.elements:
        path1 = pool(transform_tensor(x, g, ft))
        path2 = transform_tensor(pool(x), g, pool.out_type)
        assert torch.equal(path1, path2)


def test_spatial_ops_shapes():
    x = torch.randn(1, 8, 8, 8)
    assert spatial_maxpool(x, 2).shape == (1, 8, 4, 4)
    assert bilinear_upsample(x, 2).shape == (1, 8, 16, 16)
    assert global_avg_pool(x).shape == (1, 8, 1, 1)
    assert torch.allclose(global_avg_pool(x)[0, :, 0, 0], x.mean(dim=(-2, -1))[0], atol=1e-6)


def test_fusion_conv_is_pointwise():
    torch.manual_seed(0)
    conv = FusionConv1x1(G4, 5, 1)
    x = torch.randn(1, 5, 6, 6)
    perm_rows = torch.randperm(6)
    assert torch.equal(conv(x[..., perm_rows, :]), conv(x)[..., perm_rows, :])


# -- gradients ---------------------------------------------------------------


@pytest.mark.parametrize("case", layer_suite(G4), ids=lambda c: c.name)
@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_finite_difference_gradients(case, seed):
    torch.manual_seed(seed)
    mod = case.make()
    errs = finite_difference_check(
        mod,
        (1, case.in_type.channels, case.spatial, case.spatial),
        seed=seed,
        train_mode=case.train_mode,
        kink_shift=case.kink_shift,
    )
    worst = max(errs.values())
    assert worst <= GRAD_TOL, f"{case.name} seed={seed}: {errs}"


def test_zero_upstream_gradient_gives_zero_grads():
    torch.manual_seed(0)
    conv = GroupConv(G4, 1, 1, 3)
    x = torch.randn(1, 8, 8, 8, requires_grad=True)
    out = conv(x)
    out.backward(torch.zeros_like(out))
    assert torch.equal(x.grad, torch.zeros_like(x))
    assert torch.equal(conv.base_weights.grad, torch.zeros_like(conv.base_weights))


def test_relu_gradient_is_mask():
    x = torch.tensor([[-1.0, 2.0], [0.5, -3.0]], requires_grad=True)
    pointwise_relu(x).sum().backward()
    assert torch.equal(x.grad, torch.tensor([[0.0, 1.0], [1.0, 0.0]]))


def test_gradients_accumulate_over_expansion():
    # every expanded placement of a base parameter contributes to its gradient:
    # a 1x1 group-conv base slot s appears at the 8 expanded entries (g, g*e_s),
    # and with all-ones input and upstream each placement contributes the 9
    # pixels of the map, so d(sum)/d(base_s) = 8 * 9 = 72
    torch.manual_seed(0)
    conv = GroupConv(G4, 1, 1, 1, bias=False)
    x = torch.ones(1, 8, 3, 3)
    out = conv(x)
    out.sum().backward()
    assert torch.allclose(conv.base_weights.grad, torch.full_like(conv.base_weights, 72.0))
