"""Network assembly: shapes, equivariance, fusion, losses wiring, training loop."""

import math

import numpy as np
import pytest
import torch

from symdet.fields import FieldType, transform_tensor
from symdet.groups import dihedral
from symdet.losses import focal_loss
from symdet.model import (
    ModelConfig,
    SymmetryNet,
    desk_config,
    foreground_pool,
    parameter_count,
    predict,
)
from symdet.train import NumericError, TrainConfig, total_loss, train
from symdet.verify import interior, model_equivariance_residuals, model_loss_fd_check, tiny_model_config

torch.set_num_threads(2)


def _samples(n, seed, spec_kw=None):
    from symdet.data import SyntheticSpec, build_labels, generate_synthetic
    from symdet.data.dataset import normalize_image

    class S:
        pass

    out = []
    for smp in generate_synthetic(SyntheticSpec(seed=seed, **(spec_kw or {})), n):
        labels = build_labels(smp.annotations)
        s = S()
        s.image = normalize_image(smp.image)
        s.y_ref = torch.from_numpy(labels.y_ref.astype(np.float32))
        s.s_ref = torch.from_numpy(labels.s_ref)
        s.y_rot = torch.from_numpy(labels.y_rot.astype(np.float32))
        s.s_rot = torch.from_numpy(labels.s_rot)
        out.append(s)
    return out


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(group_order=8, n_ref=4)  # D_8 requires 8 orientation classes
    with pytest.raises(ValueError):
        ModelConfig(heads="both")
    with pytest.raises(ValueError):
        ModelConfig(stage_fields=(2, 4), stage_blocks=(1,))
    cfg = desk_config("ref")
    assert cfg.output_stride == 8
    assert cfg.active_heads() == ("ref",)
    assert desk_config("joint").active_heads() == ("ref", "rot")


def test_encode_output_stride():
    torch.manual_seed(0)
    model = SymmetryNet(desk_config("ref"))
    model.eval()
    with torch.no_grad():
        feat = model.encode(torch.randn(1, 3, 64, 64))
    assert feat.shape[-2:] == (8, 8)
    # ceil rule at non-divisible sizes
    cfg = ModelConfig(
        group_order=4, stage_fields=(1, 1, 1, 1), stage_blocks=(1, 1, 1, 1),
        aspp_rates=(1,), min_input=60,
    )
    torch.manual_seed(0)
    small = SymmetryNet(cfg)
    small.eval()
    with torch.no_grad():
        feat = small.encode(torch.randn(1, 3, 67, 61))
    assert feat.shape[-2:] == (math.ceil(67 / 8), math.ceil(61 / 8))


def test_encode_rejects_small_input():
    model = SymmetryNet(desk_config("ref"))
    with pytest.raises(ValueError):
        model.encode(torch.randn(1, 3, 32, 32))
    with pytest.raises(ValueError):
        model.encode(torch.randn(1, 4, 64, 64))


def test_decode_channel_counts():
    torch.manual_seed(0)
    model = SymmetryNet(desk_config("joint"))
    model.eval()
    with torch.no_grad():
        preds = model(torch.randn(1, 3, 64, 64))
    assert preds.s_ref.shape == (1, 9, 64, 64)   # 8 orientation classes + background
    assert preds.s_rot.shape == (1, 22, 64, 64)  # 21 fold classes + background
    assert preds.y_ref.shape == (1, 64, 64)
    assert preds.p_ref.shape == (1, 1, 64, 64)
    assert float(preds.y_ref.min()) >= 0.0 and float(preds.y_ref.max()) <= 1.0


def test_softmax_normalization():
    torch.manual_seed(0)
    model = SymmetryNet(desk_config("ref"))
    model.eval()
    with torch.no_grad():
        preds = model(torch.randn(1, 3, 64, 64))
    probs = torch.softmax(preds.s_ref, dim=1).sum(dim=1)
    assert (probs - 1.0).abs().max() < 1e-6


def test_foreground_pool_values():
    assert abs(foreground_pool(torch.zeros(1, 9, 2, 2))[0, 0, 0, 0].item() - 8 / 9) < 1e-6
    # background saturation: P -> 0
    logits = torch.zeros(1, 5, 1, 1)
    logits[0, -1] = 60.0
    assert foreground_pool(logits).item() < 1e-20
    # direct evaluation of the softmax-sum formula on logits (1, 2, 3)
    logits = torch.tensor([1.0, 2.0, 3.0]).view(1, 3, 1, 1)
    oracle = (math.e + math.e**2) / (math.e + math.e**2 + math.e**3)
    assert abs(foreground_pool(logits).item() - oracle) < 1e-6
    assert abs(oracle - 0.3347590442251781) < 1e-12
    with pytest.raises(ValueError):
        foreground_pool(torch.zeros(1, 1, 2, 2))


def test_fusion_zero_weights_give_half():
    torch.manual_seed(0)
    model = SymmetryNet(desk_config("ref"))
    fusion = model.fusions["ref"]
    fusion.base_weights.data.zero_()
    fusion.bias.data.zero_()
    p = torch.rand(1, 1, 8, 8)
    s = torch.randn(1, 9, 8, 8)
    assert torch.equal(model.fuse("ref", p, s), torch.full((1, 8, 8), 0.5))
    with pytest.raises(ValueError):
        model.fuse("ref", torch.rand(1, 1, 8, 8), torch.randn(1, 9, 7, 7))


def test_end_to_end_equivariance_d4():
    torch.manual_seed(0)
    model = SymmetryNet(desk_config("joint"))
    res = model_equivariance_residuals(model, spatial=64, seed=0)
    for task, per_g in res.items():
        assert max(per_g.values()) <= 1e-3, (task, per_g)


def test_decode_spatial_equivariance_of_logit_stack():
    # each S channel transforms as a scalar field (class relabeling not asserted)
    torch.manual_seed(0)
    model = SymmetryNet(desk_config("ref"))
    model.train()
    group = model.group
    x = torch.randn(1, 3, 64, 64)
    in_type = FieldType.trivial(group, 3)
    stack_type = FieldType.trivial(group, 9)
    with torch.no_grad():
        base = model(x).s_ref
        for g in group.elements:
            s_g = model(transform_tensor(x, g, in_type)).s_ref
            s_t = transform_tensor(base, g, stack_type)
            assert (interior(s_g) - interior(s_t)).abs().max() <= 1e-3


def test_zero_image_constant_interior():
    torch.manual_seed(0)
    model = SymmetryNet(desk_config("ref"))
    model.eval()
    with torch.no_grad():
        feat = model.encode(torch.zeros(1, 3, 64, 64))
    inner = interior(feat)
    assert (inner - inner.mean(dim=(-2, -1), keepdim=True)).abs().max() < 1e-6


def test_predict_shapes_and_determinism():
    torch.manual_seed(0)
    model = SymmetryNet(desk_config("joint"))
    image = torch.randn(3, 64, 64)
    p1 = predict(model, image)
    p2 = predict(model, image)
    assert p1.y_ref.shape == (64, 64)
    assert p1.s_rot.shape == (22, 64, 64)
    assert torch.equal(p1.y_ref, p2.y_ref)
    assert torch.equal(p1.s_rot, p2.s_rot)
    with pytest.raises(ValueError):
        predict(model, torch.randn(1, 3, 64, 64))


def test_plain_baseline_parameter_match():
    torch.manual_seed(0)
    equi = SymmetryNet(desk_config("ref", equivariant=True))
    plain = SymmetryNet(desk_config("ref", equivariant=False))
    n_eq, n_pl = parameter_count(equi), parameter_count(plain)
    assert abs(n_pl - n_eq) / n_eq < 0.15
    # interior regular->regular convolutions match exactly: multiplicity m maps
    # to round(m * sqrt(2N)) channels, so products of consecutive widths agree
    conv_eq = equi.stages[2].blocks[0].conv1
    conv_pl = plain.stages[2].blocks[0].conv1
    n_conv_eq = conv_eq.base_weights.numel()
    n_conv_pl = conv_pl.conv.weight.numel()
    assert abs(n_conv_pl - n_conv_eq) / n_conv_eq < 0.06


def test_total_loss_modes():
    torch.manual_seed(0)
    model = SymmetryNet(tiny_model_config("joint"))
    x = torch.randn(2, 3, 8, 8)
    preds = model(x)
    gen = torch.Generator().manual_seed(1)
    labels = {
        "y_ref": (torch.rand(2, 8, 8, generator=gen) < 0.2).float(),
        "s_ref": torch.randint(0, 9, (2, 8, 8), generator=gen),
        "y_rot": (torch.rand(2, 8, 8, generator=gen) < 0.2).float(),
        "s_rot": torch.randint(0, 22, (2, 8, 8), generator=gen),
    }
    cfg = TrainConfig(epochs=1)
    joint, parts = total_loss(preds, labels, ("ref", "rot"), cfg)
    ref_only, _ = total_loss(preds, labels, ("ref",), cfg)
    rot_only, _ = total_loss(preds, labels, ("rot",), cfg)
    assert torch.allclose(joint, ref_only + rot_only, atol=1e-6)
    assert set(parts) == {"ref_loc", "ref_cls", "rot_loc", "rot_cls"}
    with pytest.raises(ValueError):
        total_loss(preds, {"y_ref": labels["y_ref"]}, ("ref",), cfg)
    no_aux, parts = total_loss(preds, labels, ("ref",), TrainConfig(epochs=1, use_aux=False))
    assert set(parts) == {"ref_loc"}


def test_joint_encoder_gradients_are_sum_of_heads():
    torch.manual_seed(0)
    model = SymmetryNet(tiny_model_config("joint")).double()
    model.train()
    gen = torch.Generator().manual_seed(1)
    x = torch.randn(1, 3, 8, 8, dtype=torch.float64)
    labels = {
        "y_ref": (torch.rand(1, 8, 8, generator=gen) < 0.2).double(),
        "s_ref": torch.randint(0, 9, (1, 8, 8), generator=gen),
        "y_rot": (torch.rand(1, 8, 8, generator=gen) < 0.2).double(),
        "s_rot": torch.randint(0, 22, (1, 8, 8), generator=gen),
    }
    cfg = TrainConfig(epochs=1)

    def encoder_grads(heads):
        model.zero_grad()
        loss, _ = total_loss(model(x), labels, heads, cfg)
        loss.backward()
        return {
            n: p.grad.clone()
            for n, p in model.named_parameters()
            if n.startswith(("stem", "stages", "aspp")) and p.grad is not None
        }

    g_joint = encoder_grads(("ref", "rot"))
    g_ref = encoder_grads(("ref",))
    g_rot = encoder_grads(("rot",))
    for name, grad in g_joint.items():
        combined = g_ref[name] + g_rot[name]
        denom = combined.abs().max().item() + 1e-12
        assert ((grad - combined).abs().max().item() / denom) < 1e-5, name


def test_train_lr_zero_keeps_parameters():
    torch.manual_seed(0)
    model = SymmetryNet(tiny_model_config("ref"))
    samples = _samples(2, seed=5)
    for s in samples:  # shrink to the tiny model's input size
        s.image = s.image[:, :8, :8]
        s.y_ref = s.y_ref[:8, :8]
        s.s_ref = s.s_ref[:8, :8]
    before = {n: p.detach().clone() for n, p in model.named_parameters()}
    train(model, samples, [], TrainConfig(epochs=1, learning_rate=0.0, batch_size=2, val_every=0))
    for n, p in model.named_parameters():
        assert torch.equal(before[n], p.detach()), n


def test_train_overfits_single_sample():
    torch.manual_seed(0)
    model = SymmetryNet(desk_config("ref"))
    samples = _samples(1, seed=6)
    metrics = train(
        model, samples, [], TrainConfig(epochs=50, batch_size=1, val_every=0, num_threads=2)
    )
    assert metrics[-1]["loss"] < 0.5 * metrics[0]["loss"]


def test_train_determinism_bit_exact():
    samples = _samples(6, seed=7)

    def run():
        torch.manual_seed(3)
        model = SymmetryNet(desk_config("ref"))
        metrics = train(
            model, samples, [],
            TrainConfig(epochs=2, batch_size=2, val_every=0, rng_seed=3, num_threads=1),
        )
        return model.state_dict(), metrics

    s1, m1 = run()
    s2, m2 = run()
    assert m1 == m2
    for k in s1:
        assert torch.equal(s1[k], s2[k]), k


def test_train_aborts_on_nan():
    torch.manual_seed(0)
    model = SymmetryNet(tiny_model_config("ref"))
    samples = _samples(1, seed=8)
    for s in samples:
        s.image = s.image[:, :8, :8]
        s.image[0, 0, 0] = float("nan")
        s.y_ref = s.y_ref[:8, :8]
        s.s_ref = s.s_ref[:8, :8]
    with pytest.raises(NumericError):
        train(model, samples, [], TrainConfig(epochs=1, batch_size=1, val_every=0))


@pytest.mark.parametrize("seed", [0, 1])
def test_model_loss_finite_difference(seed):
    errs = model_loss_fd_check(heads="joint", seed=seed)
    assert max(errs.values()) <= 1e-3, errs
