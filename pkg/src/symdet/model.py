"""The symmetry detection network: shared equivariant encoder, ASPP context
module, per-task decoders with auxiliary classification, and foreground-pool
fusion producing the final score maps.

The same code builds the non-equivariant baseline (`equivariant=False`): every
steerable convolution becomes an ordinary convolution whose width is the field
multiplicity scaled by sqrt(2N), which matches the free-parameter count of the
regular-to-regular steerable layers.  Downsampling uses 2x2 max pooling so the
whole encoder stays exactly equivariant at even input sizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from .fields import FieldType
from .groups import dihedral
from .layers import (
    EquiNorm,
    FusionConv1x1,
    GroupPool,
    PlainConv,
    SteerableConv,
    global_avg_pool,
    pointwise_relu,
    spatial_maxpool,
)

HEAD_CHOICES = ("ref", "rot", "joint")


@dataclass
class ModelConfig:
    group_order: int = 8
    equivariant: bool = True
    stage_fields: tuple[int, ...] = (4, 8, 16, 32)
    stage_blocks: tuple[int, ...] = (2, 2, 2, 2)
    aspp_rates: tuple[int, ...] = (6, 12, 18)
    decoder_fields: int = 0  # 0 means: reuse the last stage width
    n_ref: int = 8
    n_rot: int = 21
    heads: str = "joint"
    in_channels: int = 3
    min_input: int = 64

    def __post_init__(self):
        if self.group_order < 1:
            raise ValueError(f"group_order must be >= 1, got {self.group_order}")
        if self.heads not in HEAD_CHOICES:
            raise ValueError(f"heads must be one of {HEAD_CHOICES}, got {self.heads!r}")
        if self.n_ref < 1 or self.n_rot < 1:
            raise ValueError("n_ref and n_rot must be >= 1")
        if self.group_order == 8 and self.n_ref != 8:
            raise ValueError("with a D_8 group the orientation class count must be 8")
        if len(self.stage_fields) != len(self.stage_blocks):
            raise ValueError("stage_fields and stage_blocks must have equal length")
        if not self.stage_fields:
            raise ValueError("at least one stage is required")

    @property
    def output_stride(self) -> int:
        return 2 ** (len(self.stage_fields) - 1)

    @property
    def decoder_width(self) -> int:
        return self.decoder_fields or self.stage_fields[-1]

    def active_heads(self) -> tuple[str, ...]:
        return ("ref", "rot") if self.heads == "joint" else (self.heads,)

    def classes_for(self, task: str) -> int:
        return self.n_ref if task == "ref" else self.n_rot


def desk_config(heads: str = "ref", equivariant: bool = True, group_order: int = 4) -> ModelConfig:
    """CPU-scale preset used by the property tests and synthetic experiments."""
    return ModelConfig(
        group_order=group_order,
        equivariant=equivariant,
        stage_fields=(2, 4, 8, 8),
        stage_blocks=(2, 2, 2, 2),
        aspp_rates=(1, 2, 3),
        heads=heads,
    )


@dataclass
class Predictions:
    """Network outputs; entries for inactive heads are None."""

    s_ref: Optional[torch.Tensor] = None  # (B, n_ref+1, H, W) logits
    s_rot: Optional[torch.Tensor] = None  # (B, n_rot+1, H, W) logits
    p_ref: Optional[torch.Tensor] = None  # (B, 1, H, W) foreground probability sum
    p_rot: Optional[torch.Tensor] = None
    y_ref: Optional[torch.Tensor] = None  # (B, H, W) final scores in [0, 1]
    y_rot: Optional[torch.Tensor] = None

    def for_task(self, task: str):
        if task == "ref":
            return self.s_ref, self.p_ref, self.y_ref
        return self.s_rot, self.p_rot, self.y_rot


def foreground_pool(s_logits: torch.Tensor) -> torch.Tensor:
    """Pixel-wise softmax over classes, then the summed foreground probability.

    The background class is the last channel; output lies in [0, 1].
    """
    if s_logits.shape[1] < 2:
        raise ValueError("foreground pooling needs at least 2 channels")
    probs = F.softmax(s_logits, dim=1)
    return probs[:, :-1].sum(dim=1, keepdim=True)


class _Blocks(nn.Module):
    """One encoder stage: a sequence of residual blocks."""

    def __init__(self, make_conv, in_type, out_type, n_blocks):
        super().__init__()
        blocks = []
        for i in range(n_blocks):
            blocks.append(ResidualBlock(make_conv, in_type if i == 0 else out_type, out_type))
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x):
        for b in self.blocks:
            x = b(x)
        return x


class ResidualBlock(nn.Module):
    def __init__(self, make_conv, in_type, out_type):
        super().__init__()
        self.conv1 = make_conv(in_type, out_type, 3)
        self.norm1 = EquiNorm(out_type)
        self.conv2 = make_conv(out_type, out_type, 3)
        self.norm2 = EquiNorm(out_type)
        if in_type.entries != out_type.entries:
            self.skip_conv = make_conv(in_type, out_type, 1)
            self.skip_norm = EquiNorm(out_type)
        else:
            self.skip_conv = None

    def forward(self, x):
        out = pointwise_relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        skip = x if self.skip_conv is None else self.skip_norm(self.skip_conv(x))
        return pointwise_relu(out + skip)


class ASPP(nn.Module):
    """Parallel 1x1 conv, dilated 3x3 convs, and a global-pool branch, fused 1x1."""

    def __init__(self, make_conv, ftype: FieldType, rates: tuple[int, ...]):
        super().__init__()
        self.branch_convs = nn.ModuleList(
            [make_conv(ftype, ftype, 1)]
            + [make_conv(ftype, ftype, 3, dilation=r) for r in rates]
            + [make_conv(ftype, ftype, 1)]  # applied after global pooling
        )
        self.branch_norms = nn.ModuleList(EquiNorm(ftype) for _ in self.branch_convs)
        cat_type = ftype
        for _ in range(len(self.branch_convs) - 1):
            cat_type = cat_type + ftype
        self.fuse = make_conv(cat_type, ftype, 1)
        self.fuse_norm = EquiNorm(ftype)

    def forward(self, x):
        h, w = x.shape[-2:]
        outs = []
        for i, (conv, norm) in enumerate(zip(self.branch_convs, self.branch_norms)):
            if i == len(self.branch_convs) - 1:
                pooled = pointwise_relu(norm(conv(global_avg_pool(x))))
                outs.append(pooled.expand(-1, -1, h, w))
            else:
                outs.append(pointwise_relu(norm(conv(x))))
        fused = self.fuse(torch.cat(outs, dim=1))
        return pointwise_relu(self.fuse_norm(fused))


class Decoder(nn.Module):
    """3-layer convolution decoder ending in scalar class logits."""

    def __init__(self, make_conv, in_type, hidden_type, n_classes, equivariant, group):
        super().__init__()
        self.conv1 = make_conv(in_type, hidden_type, 3)
        self.norm1 = EquiNorm(hidden_type)
        self.conv2 = make_conv(hidden_type, hidden_type, 3)
        self.norm2 = EquiNorm(hidden_type)
        if equivariant:
            head_type = FieldType.regular(group, n_classes)
            self.conv3 = make_conv(hidden_type, head_type, 3)
            self.pool = GroupPool(head_type)
        else:
            head_type = FieldType.trivial(group, n_classes)
            self.conv3 = make_conv(hidden_type, head_type, 3)
            self.pool = None

    def forward(self, x, out_size):
        x = pointwise_relu(self.norm1(self.conv1(x)))
        x = pointwise_relu(self.norm2(self.conv2(x)))
        x = self.conv3(x)
        if self.pool is not None:
            x = self.pool(x)
        return F.interpolate(x, size=out_size, mode="bilinear", align_corners=False)


class SymmetryNet(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.group = dihedral(config.group_order)
        eq = config.equivariant

        def ftype(mult: int) -> FieldType:
            if eq:
                return FieldType.regular(self.group, mult)
            width = max(1, round(mult * math.sqrt(self.group.size)))
            return FieldType.trivial(self.group, width)

        def make_conv(in_t, out_t, k, **kw):
            if eq:
                return SteerableConv(in_t, out_t, k, **kw)
            return PlainConv(in_t, out_t, k, **kw)

        in_type = FieldType.trivial(self.group, config.in_channels)
        stage_types = [ftype(m) for m in config.stage_fields]

        self.stem = make_conv(in_type, stage_types[0], 3)
        self.stem_norm = EquiNorm(stage_types[0])
        self.stages = nn.ModuleList(
            _Blocks(
                make_conv,
                stage_types[max(0, i - 1)] if i > 0 else stage_types[0],
                stage_types[i],
                config.stage_blocks[i],
            )
            for i in range(len(stage_types))
        )
        self.aspp = ASPP(make_conv, stage_types[-1], config.aspp_rates)

        hidden = ftype(config.decoder_width)
        self.decoders = nn.ModuleDict()
        self.fusions = nn.ModuleDict()
        for task in config.active_heads():
            n_cls = config.classes_for(task) + 1  # background class appended
            self.decoders[task] = Decoder(
                make_conv, stage_types[-1], hidden, n_cls, eq, self.group
            )
            self.fusions[task] = FusionConv1x1(self.group, n_cls + 1, 1)
        self.feature_type = stage_types[-1]

    # -- spec surface -----------------------------------------------------

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ValueError(
                f"expected (B, {self.config.in_channels}, H, W) input, got {tuple(x.shape)}"
            )
        if min(x.shape[-2:]) < self.config.min_input:
            raise ValueError(
                f"input spatial size {tuple(x.shape[-2:])} below minimum "
                f"{self.config.min_input}"
            )
        x = pointwise_relu(self.stem_norm(self.stem(x)))
        for i, stage in enumerate(self.stages):
            if i > 0:
                x = spatial_maxpool(x, 2)
            x = stage(x)
        return self.aspp(x)

    def decode(self, task: str, features: torch.Tensor, out_size) -> torch.Tensor:
        return self.decoders[task](features, out_size)

    def fuse(self, task: str, p: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
        if p.shape[-2:] != s.shape[-2:]:
            raise ValueError(f"P {tuple(p.shape)} and S {tuple(s.shape)} are not aligned")
        y = self.fusions[task](torch.cat([p, s], dim=1))
        return torch.sigmoid(y[:, 0])

    def forward(self, x: torch.Tensor) -> Predictions:
        out_size = x.shape[-2:]
        features = self.encode(x)
        preds = Predictions()
        for task in self.config.active_heads():
            s = self.decode(task, features, out_size)
            p = foreground_pool(s)
            y = self.fuse(task, p, s)
            if task == "ref":
                preds.s_ref, preds.p_ref, preds.y_ref = s, p, y
            else:
                preds.s_rot, preds.p_rot, preds.y_rot = s, p, y
        return preds


def predict(model: SymmetryNet, image: torch.Tensor) -> Predictions:
    """Full forward pass on one (3, H, W) image with outputs at input resolution."""
    if image.ndim != 3:
        raise ValueError(f"expected a (C, H, W) image, got shape {tuple(image.shape)}")
    model.eval()
    with torch.no_grad():
        batched = model(image.unsqueeze(0))
    squeeze = lambda t: None if t is None else t.squeeze(0)
    return Predictions(*(squeeze(getattr(batched, f.name)) for f in Predictions.__dataclass_fields__.values()))


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
