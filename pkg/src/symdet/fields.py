"""Steerable feature fields and the reference transforms used by every equivariance test.

A field assigns a feature vector to each pixel together with a transformation
law (`FieldType`): trivial entries are plain scalars, regular entries carry one
channel per group element and get permuted by the regular representation.

The transform implemented here is

    out(x) = rho(g) . in(A(g) x)        (about the image center)

where ``A`` is :meth:`DihedralGroup.plane_matrix`.  Transforming by ``g`` and
then by ``h`` equals transforming by ``h * g`` once.  Axis-aligned elements
(90-degree rotations, the vertical mirror) are pure pixel permutations and
therefore bit-exact; everything else is bilinearly interpolated with
out-of-bounds samples reading zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch

from .groups import DihedralGroup, GroupElement, dihedral

TRIVIAL = "trivial"
REGULAR = "regular"


@dataclass(frozen=True)
class FieldType:
    """Ordered list of (representation kind, multiplicity) entries over one group."""

    group: DihedralGroup
    entries: tuple[tuple[str, int], ...]

    def __post_init__(self):
        for kind, mult in self.entries:
            if kind not in (TRIVIAL, REGULAR):
                raise ValueError(f"unknown representation kind {kind!r}")
            if mult < 1:
                raise ValueError(f"multiplicity must be positive, got {mult}")

    @staticmethod
    def trivial(group: DihedralGroup, count: int) -> "FieldType":
        return FieldType(group, ((TRIVIAL, count),))

    @staticmethod
    def regular(group: DihedralGroup, count: int) -> "FieldType":
        return FieldType(group, ((REGULAR, count),))

    @property
    def channels(self) -> int:
        fiber = self.group.size
        return sum(m * (fiber if kind == REGULAR else 1) for kind, m in self.entries)

    @property
    def is_trivial(self) -> bool:
        return all(kind == TRIVIAL for kind, _ in self.entries)

    @property
    def is_regular(self) -> bool:
        return all(kind == REGULAR for kind, _ in self.entries)

    def blocks(self):
        """Yield (kind, multiplicity, channel offset, block width) per entry."""
        offset = 0
        fiber = self.group.size
        for kind, mult in self.entries:
            width = mult * (fiber if kind == REGULAR else 1)
            yield kind, mult, offset, width
            offset += width

    def __add__(self, other: "FieldType") -> "FieldType":
        if other.group != self.group:
            raise ValueError("cannot concatenate field types over different groups")
        return FieldType(self.group, self.entries + other.entries)


@dataclass
class FeatureField:
    """A (channels, H, W) float tensor plus its transformation law."""

    data: torch.Tensor
    field_type: FieldType

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError(f"field data must be (C, H, W), got shape {tuple(self.data.shape)}")
        if self.data.shape[0] != self.field_type.channels:
            raise ValueError(
                f"field has {self.data.shape[0]} channels but its type specifies "
                f"{self.field_type.channels}"
            )
        if not torch.isfinite(self.data).all():
            raise ValueError("field data contains non-finite values")

    @property
    def group(self) -> DihedralGroup:
        return self.field_type.group

    @property
    def spatial_shape(self) -> tuple[int, int]:
        return self.data.shape[-2], self.data.shape[-1]


def _source_coords(group_n: int, rot: int, ref: bool, height: int, width: int):
    """Float source coordinates (sy, sx) for every output pixel, about the center."""
    g = GroupElement(rot, ref, group_n)
    mat = dihedral(group_n).plane_matrix(g)
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    ys, xs = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    dx, dy = xs - cx, ys - cy
    sx = mat[0, 0] * dx + mat[0, 1] * dy + cx
    sy = mat[1, 0] * dx + mat[1, 1] * dy + cy
    return sy, sx


def _is_exact(group: DihedralGroup, g: GroupElement, height: int, width: int) -> bool:
    if not group.is_axis_aligned(g):
        return False
    quarter = (4 * g.rot) // group.n % 4
    return height == width or quarter in (0, 2)


@lru_cache(maxsize=512)
def _exact_perm(group_n: int, rot: int, ref: bool, height: int, width: int) -> torch.Tensor:
    """Flattened gather index for an exact (permutation) warp."""
    sy, sx = _source_coords(group_n, rot, ref, height, width)
    iy, ix = np.rint(sy).astype(np.int64), np.rint(sx).astype(np.int64)
    if not (np.abs(sy - iy).max() < 1e-9 and np.abs(sx - ix).max() < 1e-9):
        raise AssertionError("exact warp requested for a non-integral transform")
    return torch.from_numpy((iy * width + ix).ravel())


@lru_cache(maxsize=512)
def _bilinear_tables(group_n: int, rot: int, ref: bool, height: int, width: int):
    """(indices, weights) of the 4-tap bilinear warp; out-of-bounds taps weigh zero."""
    sy, sx = _source_coords(group_n, rot, ref, height, width)
    y0, x0 = np.floor(sy), np.floor(sx)
    wy, wx = sy - y0, sx - x0
    idxs, wts = [], []
    for dy, dx, w in (
        (0, 0, (1 - wy) * (1 - wx)),
        (0, 1, (1 - wy) * wx),
        (1, 0, wy * (1 - wx)),
        (1, 1, wy * wx),
    ):
        yy, xx = y0 + dy, x0 + dx
        valid = (yy >= 0) & (yy < height) & (xx >= 0) & (xx < width)
        yy_c = np.clip(yy, 0, height - 1).astype(np.int64)
        xx_c = np.clip(xx, 0, width - 1).astype(np.int64)
        idxs.append(torch.from_numpy((yy_c * width + xx_c).ravel()))
        wts.append(torch.from_numpy((w * valid).ravel().astype(np.float64)))
    return torch.stack(idxs), torch.stack(wts)


def spatial_warp(data: torch.Tensor, g: GroupElement, group: DihedralGroup) -> torch.Tensor:
    """Warp the trailing (H, W) axes of `data` by g about their center.

    Pixel permutation (bit-exact) for axis-aligned elements, bilinear with
    zero fill otherwise.
    """
    height, width = data.shape[-2], data.shape[-1]
    flat = data.reshape(*data.shape[:-2], height * width)
    if _is_exact(group, g, height, width):
        idx = _exact_perm(group.n, g.rot, g.ref, height, width)
        out = flat[..., idx]
    else:
        idx, wts = _bilinear_tables(group.n, g.rot, g.ref, height, width)
        wts = wts.to(data.dtype)
        out = sum(flat[..., idx[t]] * wts[t] for t in range(4))
    return out.reshape(data.shape)


@lru_cache(maxsize=256)
def _fiber_gather(group_n: int, rot: int, ref: bool) -> torch.Tensor:
    """Gather index so that out[i] = in[gather[i]] applies rho(g) to a fiber."""
    group = dihedral(group_n)
    perm = group.regular_perm(GroupElement(rot, ref, group_n))
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return torch.from_numpy(inv)


def permute_fibers(data: torch.Tensor, g: GroupElement, field_type: FieldType) -> torch.Tensor:
    """Apply rho(g) block-wise to the channel axis (dim -3) of `data`."""
    group = field_type.group
    fiber = group.size
    gather = _fiber_gather(group.n, g.rot, g.ref)
    pieces = []
    for kind, mult, offset, width in field_type.blocks():
        block = data[..., offset : offset + width, :, :]
        if kind == REGULAR:
            shape = block.shape
            block = block.reshape(*shape[:-3], mult, fiber, *shape[-2:])
            block = block[..., gather, :, :].reshape(shape)
        pieces.append(block)
    return torch.cat(pieces, dim=-3)


def transform_tensor(data: torch.Tensor, g: GroupElement, field_type: FieldType) -> torch.Tensor:
    """Reference transform on a (..., C, H, W) tensor: warp by g, then rho(g) blockwise."""
    field_type.group._check(g)
    return permute_fibers(spatial_warp(data, g, field_type.group), g, field_type)


def transform_field(field: FeatureField, g: GroupElement) -> FeatureField:
    """Reference transform: spatial warp by g, then rho(g) on regular entries."""
    return FeatureField(transform_tensor(field.data, g, field.field_type), field.field_type)


def transform_scalar_field(field: FeatureField, g: GroupElement) -> FeatureField:
    if not field.field_type.is_trivial:
        raise ValueError("transform_scalar_field requires an all-trivial field type")
    return transform_field(field, g)


def transform_regular_field(field: FeatureField, g: GroupElement) -> FeatureField:
    if not field.field_type.is_regular:
        raise ValueError("transform_regular_field requires an all-regular field type")
    return transform_field(field, g)
