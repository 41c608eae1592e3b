"""Steerable convolution kernels: constrained weight expansion for dihedral groups.

A steerable layer stores a small tensor of free parameters (`base_weights`) and
expands it into a full convolution weight that satisfies the dihedral kernel
constraint.  Expansion rules:

* ``lifting`` (trivial -> regular): output fiber channel g carries the base
  filter spatially warped by g.
* ``group_to_group`` (regular -> regular): output fiber channel g, input fiber
  channel h reads base slot g^-1 * h, spatially warped by g.
* ``trivial_pointwise`` (trivial -> trivial, 1x1): unconstrained pointwise
  linear map; a 1x1 kernel on scalar fields satisfies the constraint as-is.

Filter warps reuse :func:`symdet.fields.spatial_warp` on the k x k tap grid, so
axis-aligned group elements are exact tap permutations and 45-degree elements
(D_8) fall back to bilinear tap resampling.  Free-parameter counts are smaller
than an unconstrained convolution by a factor of the group size (2N).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch

from .fields import REGULAR, TRIVIAL, FieldType, spatial_warp
from .groups import GroupElement, dihedral

LIFTING = "lifting"
GROUP_TO_GROUP = "group_to_group"
TRIVIAL_POINTWISE = "trivial_pointwise"


@dataclass
class SteerableKernelSpec:
    in_type: FieldType
    out_type: FieldType
    kernel_size: int
    base_weights: torch.Tensor
    expansion_rule: str

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if self.expansion_rule not in (LIFTING, GROUP_TO_GROUP, TRIVIAL_POINTWISE):
            raise ValueError(f"unknown expansion rule {self.expansion_rule!r}")
        expected = base_weight_shape(
            self.in_type, self.out_type, self.kernel_size, self.expansion_rule
        )
        if tuple(self.base_weights.shape) != expected:
            raise ValueError(
                f"base_weights shape {tuple(self.base_weights.shape)} does not match "
                f"{expected} required by rule {self.expansion_rule!r}"
            )

    @property
    def group(self):
        return self.in_type.group

    @property
    def free_parameters(self) -> int:
        return self.base_weights.numel()

    @property
    def unconstrained_parameters(self) -> int:
        k = self.kernel_size
        return self.out_type.channels * self.in_type.channels * k * k


def infer_rule(in_type: FieldType, out_type: FieldType, kernel_size: int) -> str:
    if in_type.is_trivial and out_type.is_regular:
        return LIFTING
    if in_type.is_regular and out_type.is_regular:
        return GROUP_TO_GROUP
    if in_type.is_trivial and out_type.is_trivial and kernel_size == 1:
        return TRIVIAL_POINTWISE
    raise ValueError(
        f"unsupported field-type pair for a steerable kernel: "
        f"{in_type.entries} -> {out_type.entries} (k={kernel_size})"
    )


def base_weight_shape(in_type, out_type, kernel_size, rule) -> tuple[int, ...]:
    k = kernel_size
    if rule == LIFTING:
        m_out = sum(m for kind, m in out_type.entries)
        return (m_out, in_type.channels, k, k)
    if rule == GROUP_TO_GROUP:
        m_out = sum(m for kind, m in out_type.entries)
        m_in = sum(m for kind, m in in_type.entries)
        return (m_out, m_in, in_type.group.size, k, k)
    if rule == TRIVIAL_POINTWISE:
        return (out_type.channels, in_type.channels, 1, 1)
    raise ValueError(rule)


@lru_cache(maxsize=64)
def _slot_table(group_n: int) -> torch.Tensor:
    """slot[i(g), i(h)] = i(g^-1 * h): which base slot feeds expanded entry (g, h)."""
    group = dihedral(group_n)
    size = group.size
    table = torch.empty(size, size, dtype=torch.int64)
    for g in group.elements:
        ginv = group.inverse(g)
        for h in group.elements:
            table[group.index(g), group.index(h)] = group.index(group.compose(ginv, h))
    return table


def expand_kernel(spec: SteerableKernelSpec) -> torch.Tensor:
    """Expand base weights into a (c_out, c_in, k, k) convolution weight.

    Differentiable in `base_weights`; gradients accumulate over every expanded
    placement of each base parameter.
    """
    group = spec.group
    base = spec.base_weights
    k = spec.kernel_size
    if spec.expansion_rule == TRIVIAL_POINTWISE:
        return base
    if spec.expansion_rule == LIFTING:
        # (m_out, F, c_in, k, k) -> (m_out * F, c_in, k, k)
        pieces = [spatial_warp(base, g, group) for g in group.elements]
        stacked = torch.stack(pieces, dim=1)
        return stacked.reshape(spec.out_type.channels, spec.in_type.channels, k, k)
    # group_to_group
    slots = _slot_table(group.n)
    m_out, m_in = base.shape[0], base.shape[1]
    fiber = group.size
    pieces = []
    for g in group.elements:
        gathered = base[:, :, slots[group.index(g)]]  # (m_out, m_in, F, k, k)
        pieces.append(spatial_warp(gathered, g, group))
    stacked = torch.stack(pieces, dim=1)  # (m_out, F, m_in, F, k, k)
    return stacked.reshape(m_out * fiber, m_in * fiber, k, k)


@lru_cache(maxsize=256)
def _constraint_gather(group_n: int, entries, rot: int, ref: bool) -> torch.Tensor:
    """Channel gather applying rho(g) blockwise: gather[i] = index of (g * e_i)."""
    group = dihedral(group_n)
    g = GroupElement(rot, ref, group_n)
    field_type = FieldType(group, entries)
    fiber = group.size
    perm = group.regular_perm(g)  # perm[j] = i(g * e_j)
    out = np.arange(field_type.channels, dtype=np.int64)
    for kind, mult, offset, width in field_type.blocks():
        if kind == REGULAR:
            for f in range(mult):
                base_off = offset + f * fiber
                out[base_off : base_off + fiber] = base_off + perm
    return torch.from_numpy(out)


def kernel_constraint_residual(
    weight: torch.Tensor, in_type: FieldType, out_type: FieldType, g: GroupElement
) -> float:
    """Max-abs residual of the steerability constraint at group element g.

    Checks ``k(A(g) y) == rho_out(g^-1) k(y) rho_in(g)`` tap-wise, which is the
    kernel constraint with the element relabeled g -> g^-1 (both sides are
    quantified over the whole group).  Exactly zero for axis-aligned elements
    when the weight came from :func:`expand_kernel`.
    """
    group = in_type.group
    lhs = spatial_warp(weight, g, group)
    rows = _constraint_gather(group.n, out_type.entries, g.rot, g.ref)
    cols = _constraint_gather(group.n, in_type.entries, g.rot, g.ref)
    rhs = weight[rows][:, cols]
    return (lhs - rhs).abs().max().item()
