"""Equivariant layer zoo: steerable convolutions, norm, pooling, upsampling.

Layers operate on plain (B, C, H, W) tensors and carry their `FieldType`
metadata as attributes; :class:`symdet.fields.FeatureField` wraps single
images at the API boundary.  Gradients come from autograd; the finite
difference contract is enforced by :mod:`symdet.verify` and the gradcheck
command.

Equivariance notes baked into the design:

* ReLU is pointwise, hence safe for regular fields (channel permutations
  commute with it).
* `EquiNorm` shares one mean/variance and one affine pair per field across
  its whole fiber and across space; statistics use 64-bit accumulation.
* Downsampling inside the provided models uses 2x2 max pooling, whose
  window grid is mapped onto itself by 90-degree rotations at even sizes;
  strided convolution is supported but only exactly equivariant on odd
  input sizes.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .fields import REGULAR, FieldType
from .kernels import (
    GROUP_TO_GROUP,
    LIFTING,
    TRIVIAL_POINTWISE,
    SteerableKernelSpec,
    base_weight_shape,
    expand_kernel,
    infer_rule,
)


class SteerableConv(nn.Module):
    """Convolution whose weight is expanded from a constrained base tensor.

    The expansion rule is inferred from the field types: trivial->regular is a
    lifting convolution, regular->regular a group convolution, and
    trivial->trivial (1x1 only) an unconstrained pointwise map.  Bias is one
    scalar per field, broadcast over the fiber, which keeps the layer
    equivariant.
    """

    def __init__(
        self,
        in_type: FieldType,
        out_type: FieldType,
        kernel_size: int,
        stride: int = 1,
        dilation: int = 1,
        bias: bool = True,
    ):
        super().__init__()
        if in_type.group != out_type.group:
            raise ValueError("in/out field types must share one group")
        if stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {stride}")
        self.in_type = in_type
        self.out_type = out_type
        self.kernel_size = kernel_size
        self.stride = stride
        self.dilation = dilation
        self.rule = infer_rule(in_type, out_type, kernel_size)
        shape = base_weight_shape(in_type, out_type, kernel_size, self.rule)
        fan_in = in_type.channels * kernel_size * kernel_size
        init_std = math.sqrt(2.0 / fan_in)
        self.base_weights = nn.Parameter(torch.randn(shape) * init_std)
        self._n_bias_fields = sum(m for _, m in out_type.entries)
        if bias:
            self.bias = nn.Parameter(torch.zeros(self._n_bias_fields))
        else:
            self.register_parameter("bias", None)

    @property
    def spec(self) -> SteerableKernelSpec:
        return SteerableKernelSpec(
            self.in_type, self.out_type, self.kernel_size, self.base_weights, self.rule
        )

    def expanded_weight(self) -> torch.Tensor:
        return expand_kernel(self.spec)

    def expanded_bias(self):
        if self.bias is None:
            return None
        if self.rule == TRIVIAL_POINTWISE:
            return self.bias
        fiber = self.out_type.group.size
        return self.bias.repeat_interleave(fiber)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-3] != self.in_type.channels:
            raise ValueError(
                f"expected {self.in_type.channels} input channels, got {x.shape[-3]}"
            )
        pad = self.dilation * (self.kernel_size - 1) // 2
        return F.conv2d(
            x,
            self.expanded_weight(),
            self.expanded_bias(),
            stride=self.stride,
            padding=pad,
            dilation=self.dilation,
        )

    def extra_repr(self):
        return (
            f"{self.in_type.entries} -> {self.out_type.entries}, k={self.kernel_size}, "
            f"stride={self.stride}, dilation={self.dilation}, rule={self.rule}"
        )


class LiftConv(SteerableConv):
    """First equivariant layer: scalar image channels to regular feature fields."""

    def __init__(self, group, in_channels: int, out_fields: int, kernel_size: int, **kw):
        super().__init__(
            FieldType.trivial(group, in_channels),
            FieldType.regular(group, out_fields),
            kernel_size,
            **kw,
        )
        assert self.rule == LIFTING


class GroupConv(SteerableConv):
    """Regular-to-regular steerable convolution (supports stride and dilation)."""

    def __init__(self, group, in_fields: int, out_fields: int, kernel_size: int, **kw):
        super().__init__(
            FieldType.regular(group, in_fields),
            FieldType.regular(group, out_fields),
            kernel_size,
            **kw,
        )
        assert self.rule == GROUP_TO_GROUP


class FusionConv1x1(SteerableConv):
    """Unconstrained 1x1 map between trivial fields (pointwise, hence equivariant)."""

    def __init__(self, group, in_channels: int, out_channels: int, **kw):
        super().__init__(
            FieldType.trivial(group, in_channels),
            FieldType.trivial(group, out_channels),
            1,
            **kw,
        )


class PlainConv(nn.Module):
    """Ordinary unconstrained convolution between trivial fields.

    Used by the non-equivariant baseline; mirrors the SteerableConv interface
    so model code does not branch.
    """

    def __init__(self, in_type, out_type, kernel_size, stride=1, dilation=1, bias=True):
        super().__init__()
        if not (in_type.is_trivial and out_type.is_trivial):
            raise ValueError("PlainConv handles trivial field types only")
        self.in_type = in_type
        self.out_type = out_type
        self.kernel_size = kernel_size
        self.conv = nn.Conv2d(
            in_type.channels,
            out_type.channels,
            kernel_size,
            stride=stride,
            padding=dilation * (kernel_size - 1) // 2,
            dilation=dilation,
            bias=bias,
        )
        nn.init.kaiming_normal_(self.conv.weight, nonlinearity="relu")
        if bias:
            nn.init.zeros_(self.conv.bias)

    def forward(self, x):
        return self.conv(x)


class EquiNorm(nn.Module):
    """Batch normalization with one statistics/affine pair per field.

    Mean and variance are shared across each field's fiber channels, all
    spatial positions, and the batch, which is what keeps normalization
    equivariant.  Running statistics follow the usual momentum-0.1 update and
    are used in eval mode.  Accumulation happens in float64.
    """

    def __init__(self, field_type: FieldType, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.field_type = field_type
        self.eps = eps
        self.momentum = momentum
        fiber = field_type.group.size
        field_id = []
        widths = []
        fid = 0
        for kind, mult, _, _ in field_type.blocks():
            w = fiber if kind == REGULAR else 1
            for _ in range(mult):
                field_id.extend([fid] * w)
                widths.append(w)
                fid += 1
        self.n_fields = fid
        self.register_buffer("field_id", torch.tensor(field_id, dtype=torch.int64))
        self.register_buffer("field_width", torch.tensor(widths, dtype=torch.float64))
        self.weight = nn.Parameter(torch.ones(self.n_fields))
        self.bias = nn.Parameter(torch.zeros(self.n_fields))
        self.register_buffer("running_mean", torch.zeros(self.n_fields, dtype=torch.float64))
        self.register_buffer("running_var", torch.ones(self.n_fields, dtype=torch.float64))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-3] != self.field_id.numel():
            raise ValueError(f"expected {self.field_id.numel()} channels, got {x.shape[-3]}")
        fid = self.field_id
        if self.training:
            x64 = x.to(torch.float64)
            ch_mean = x64.mean(dim=(0, 2, 3))
            ch_sq = (x64 * x64).mean(dim=(0, 2, 3))
            mean = torch.zeros(self.n_fields, dtype=torch.float64).index_add_(0, fid, ch_mean)
            mean = mean / self.field_width
            sq = torch.zeros(self.n_fields, dtype=torch.float64).index_add_(0, fid, ch_sq)
            sq = sq / self.field_width
            var = (sq - mean * mean).clamp_min(0.0)
            with torch.no_grad():
                count = x.shape[0] * x.shape[2] * x.shape[3] * self.field_width
                unbiased = var * (count / (count - 1.0).clamp_min(1.0))
                self.running_mean.mul_(1 - self.momentum).add_(self.momentum * mean.detach())
                self.running_var.mul_(1 - self.momentum).add_(self.momentum * unbiased.detach())
        else:
            mean = self.running_mean
            var = self.running_var
        scale = torch.rsqrt(var + self.eps).to(x.dtype) * self.weight
        shift = self.bias - mean.to(x.dtype) * scale
        return x * scale[fid].view(1, -1, 1, 1) + shift[fid].view(1, -1, 1, 1)


class GroupPool(nn.Module):
    """Max over each regular field's fiber channels: regular -> trivial fields.

    Max is invariant to the fiber permutation, so the output transforms as a
    stack of scalar fields.  Identity on already-trivial inputs.
    """

    def __init__(self, in_type: FieldType):
        super().__init__()
        self.in_type = in_type
        self.out_type = FieldType(
            in_type.group, tuple(("trivial", m) for _, m in in_type.entries)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        fiber = self.in_type.group.size
        pieces = []
        for kind, mult, offset, width in self.in_type.blocks():
            block = x[..., offset : offset + width, :, :]
            if kind == REGULAR:
                shape = block.shape
                block = block.reshape(*shape[:-3], mult, fiber, *shape[-2:]).amax(dim=-3)
            pieces.append(block)
        return torch.cat(pieces, dim=-3) if len(pieces) > 1 else pieces[0]


def pointwise_relu(x: torch.Tensor) -> torch.Tensor:
    return F.relu(x)


def spatial_maxpool(x: torch.Tensor, factor: int = 2) -> torch.Tensor:
    # ceil_mode: output size is ceil(input / factor); identical to floor mode
    # at divisible sizes, so the even-size equivariance property is unaffected
    return F.max_pool2d(x, factor, ceil_mode=True)


def bilinear_upsample(x: torch.Tensor, factor: int) -> torch.Tensor:
    return F.interpolate(x, scale_factor=factor, mode="bilinear", align_corners=False)


def global_avg_pool(x: torch.Tensor) -> torch.Tensor:
    # 64-bit accumulation, cast back: reductions follow the numeric policy
    return x.to(torch.float64).mean(dim=(-2, -1), keepdim=True).to(x.dtype)
