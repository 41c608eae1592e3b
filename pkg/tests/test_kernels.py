"""Steerable kernel expansion: constraint residuals and parameter counting."""

import pytest
import torch

from symdet.fields import FieldType
from symdet.groups import dihedral
from symdet.kernels import (
    GROUP_TO_GROUP,
    LIFTING,
    SteerableKernelSpec,
    base_weight_shape,
    expand_kernel,
    infer_rule,
    kernel_constraint_residual,
)
from symdet.verify import smooth_random_base


def _lift_spec(group, k=3, seed=0):
    gen = torch.Generator().manual_seed(seed)
    tin = FieldType.trivial(group, 3)
    tout = FieldType.regular(group, 2)
    base = torch.randn(2, 3, k, k, generator=gen)
    return SteerableKernelSpec(tin, tout, k, base, LIFTING)


def _g2g_spec(group, k=3, seed=0, m_in=2, m_out=3):
    gen = torch.Generator().manual_seed(seed)
    rin = FieldType.regular(group, m_in)
    rout = FieldType.regular(group, m_out)
    base = torch.randn(m_out, m_in, group.size, k, k, generator=gen)
    return SteerableKernelSpec(rin, rout, k, base, GROUP_TO_GROUP)


def test_zero_base_expands_to_zero():
    group = dihedral(4)
    spec = _lift_spec(group)
    spec.base_weights.zero_()
    assert torch.equal(expand_kernel(spec), torch.zeros(16, 3, 3, 3))


@pytest.mark.parametrize("k", [3, 5])
@pytest.mark.parametrize("make", [_lift_spec, _g2g_spec])
def test_constraint_residual_exactly_zero_d4(k, make):
    group = dihedral(4)
    spec = make(group, k=k)
    weight = expand_kernel(spec)
    for g in group.elements:
        assert kernel_constraint_residual(weight, spec.in_type, spec.out_type, g) == 0.0


def test_constraint_brute_force_tapwise_d4():
    # direct substitution of both sides, every element and every tap
    group = dihedral(4)
    spec = _lift_spec(group, k=3, seed=2)
    weight = expand_kernel(spec)
    from symdet.fields import spatial_warp

    for g in group.elements:
        lhs = spatial_warp(weight, g, group)
        rho_out = torch.from_numpy(group.regular_rep(group.inverse(g)))
        c_out = weight.shape[0]
        # lifting: rho_in is the identity on trivial channels
        per_field = rho_out  # single regular field block of size 2N... expanded below
        blocks = weight.shape[0] // group.size
        rhs = weight.clone()
        for b in range(blocks):
            sl = slice(b * group.size, (b + 1) * group.size)
            rhs[sl] = torch.einsum("ij,jckl->ickl", per_field, weight[sl])
        assert torch.equal(lhs, rhs), g


def test_d8_interpolated_residual_small_on_smooth_bases():
    group = dihedral(8)
    for k in (3, 5):
        worst = 0.0
        for seed in range(10):
            rin = FieldType.regular(group, 2)
            rout = FieldType.regular(group, 2)
            base = smooth_random_base((2, 2, group.size), k, seed=seed)
            weight = expand_kernel(SteerableKernelSpec(rin, rout, k, base, GROUP_TO_GROUP))
            scale = weight.abs().max().item()
            for g in group.elements:
                res = kernel_constraint_residual(weight, rin, rout, g)
                if group.is_axis_aligned(g):
                    assert res == 0.0
                else:
                    worst = max(worst, res / scale)
        assert worst < 0.15, f"k={k}: relative 45-degree residual {worst}"


def test_parameter_counts():
    group = dihedral(8)
    spec = _g2g_spec(group, k=3, m_in=16, m_out=16)
    # free parameters are smaller than unconstrained by exactly the group size
    assert spec.unconstrained_parameters // spec.free_parameters == group.size
    assert spec.free_parameters == 16 * 16 * group.size * 9
    expanded = expand_kernel(spec)
    assert expanded.numel() == spec.unconstrained_parameters
    lift = _lift_spec(dihedral(4))
    assert lift.unconstrained_parameters // lift.free_parameters == dihedral(4).size


def test_rule_inference_and_guards():
    group = dihedral(4)
    triv, reg = FieldType.trivial(group, 3), FieldType.regular(group, 2)
    assert infer_rule(triv, reg, 3) == LIFTING
    assert infer_rule(reg, reg, 3) == GROUP_TO_GROUP
    assert infer_rule(triv, triv, 1) == "trivial_pointwise"
    with pytest.raises(ValueError):
        infer_rule(triv, triv, 3)  # unconstrained spatial kernel is not steerable
    with pytest.raises(ValueError):
        infer_rule(reg, triv, 3)
    with pytest.raises(ValueError):
        SteerableKernelSpec(triv, reg, 4, torch.zeros(2, 3, 4, 4), LIFTING)
    with pytest.raises(ValueError):
        SteerableKernelSpec(triv, reg, 3, torch.zeros(1, 1, 3, 3), LIFTING)


def test_base_weight_shapes():
    group = dihedral(4)
    triv, reg = FieldType.trivial(group, 3), FieldType.regular(group, 5)
    assert base_weight_shape(triv, reg, 3, LIFTING) == (5, 3, 3, 3)
    assert base_weight_shape(reg, reg, 3, GROUP_TO_GROUP) == (5, 5, 8, 3, 3)
    assert base_weight_shape(triv, triv, 1, "trivial_pointwise") == (3, 3, 1, 1)
