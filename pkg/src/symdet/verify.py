"""Two-path equivariance checks and finite-difference gradient checks.

Shared by the test suite and the `equicheck` / `gradcheck` CLI commands so
both report the same numbers.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable

import torch
from torch import nn

from .fields import FieldType, transform_tensor
from .groups import DihedralGroup, GroupElement
from .layers import (
    EquiNorm,
    GroupConv,
    GroupPool,
    LiftConv,
    bilinear_upsample,
    global_avg_pool,
    pointwise_relu,
    spatial_maxpool,
)


def interior(x: torch.Tensor, margin: float = 0.25) -> torch.Tensor:
    """Crop the trailing spatial dims by `margin` of each side (zero-padding halo)."""
    h, w = x.shape[-2], x.shape[-1]
    mh, mw = int(round(h * margin)), int(round(w * margin))
    return x[..., mh : h - mh, mw : w - mw]


def equivariance_residual(
    fn,
    in_type: FieldType,
    out_type: FieldType,
    g: GroupElement,
    spatial: int = 16,
    seed: int = 0,
    margin: float = 0.25,
    x: torch.Tensor | None = None,
) -> float:
    """Max-abs interior difference between fn(T(g) x) and T(g) fn(x).

    The output transform uses the output's own resolution, so spatially
    resizing ops (pooling, upsampling) are handled uniformly.
    """
    if x is None:
        gen = torch.Generator().manual_seed(seed)
        x = torch.randn(1, in_type.channels, spatial, spatial, generator=gen)
    with torch.no_grad():
        path1 = fn(transform_tensor(x, g, in_type))
        path2 = transform_tensor(fn(x), g, out_type)
    assert path1.shape == path2.shape, (path1.shape, path2.shape)
    return (interior(path1, margin) - interior(path2, margin)).abs().max().item()


class _Lambda(nn.Module):
    def __init__(self, fn):
        super().__init__()
        self.fn = fn

    def forward(self, x):
        return self.fn(x)


@dataclass
class LayerCase:
    """A representative instance of one layer type, rebuildable per seed."""

    name: str
    make: Callable[[], nn.Module]
    in_type: FieldType
    out_type: FieldType
    spatial: int = 16
    # FD at a ReLU/max kink is meaningless; shift inputs off the kinks instead
    kink_shift: float = 0.0
    train_mode: bool = False


def layer_suite(group: DihedralGroup, fields: int = 2) -> list[LayerCase]:
    """One case per equivariant layer type."""
    reg = FieldType.regular(group, fields)
    reg_out = FieldType.regular(group, fields + 1)
    triv3 = FieldType.trivial(group, 3)
    pool_out = GroupPool(reg).out_type
    return [
        LayerCase("lift_conv", lambda: LiftConv(group, 3, fields, 3), triv3, reg),
        LayerCase("group_conv", lambda: GroupConv(group, fields, fields + 1, 3), reg, reg_out),
        LayerCase(
            "group_conv_dilated",
            lambda: GroupConv(group, fields, fields, 3, dilation=2),
            reg,
            reg,
        ),
        LayerCase("group_conv_1x1", lambda: GroupConv(group, fields, fields, 1), reg, reg),
        LayerCase("pointwise_relu", lambda: _Lambda(pointwise_relu), reg, reg, kink_shift=0.25),
        LayerCase("equi_norm", lambda: EquiNorm(reg), reg, reg, train_mode=True),
        LayerCase(
            "spatial_maxpool",
            lambda: _Lambda(lambda x: spatial_maxpool(x, 2)),
            reg,
            reg,
            kink_shift=0.25,
        ),
        LayerCase(
            "bilinear_upsample", lambda: _Lambda(lambda x: bilinear_upsample(x, 2)), reg, reg
        ),
        LayerCase("global_avg_pool", lambda: _Lambda(global_avg_pool), reg, reg, spatial=8),
        LayerCase("group_pool", lambda: GroupPool(reg), reg, pool_out, kink_shift=0.25),
    ]


def case_residuals(case: LayerCase, group: DihedralGroup, seed: int = 0) -> dict:
    """Two-path residual per group element for one layer case."""
    torch.manual_seed(seed)
    mod = case.make()
    mod.eval()
    return {
        g: equivariance_residual(
            mod, case.in_type, case.out_type, g, spatial=case.spatial, seed=seed
        )
        for g in group.elements
    }


# ---------------------------------------------------------------------------
# finite-difference gradient checking


def finite_difference_check(
    module: nn.Module,
    in_shape: tuple[int, ...],
    seed: int = 0,
    eps: float = 1e-3,
    max_entries: int = 16,
    loss_fn=None,
    train_mode: bool = False,
    kink_shift: float = 0.0,
    filter_kinks: bool = False,
) -> dict[str, float]:
    """Relative error between autograd and central finite differences.

    Runs in float64 (64-bit accumulation).  Per tensor the reported error is
    ``max_i |analytic_i - fd_i|`` over a deterministic sample of entries,
    relative to the gradient scale.  `loss_fn(module, x)` may replace the
    default linear probe on the module output.  In train mode, normalization
    layers use batch statistics, so the check exercises the statistics
    gradient path (running buffers do not influence train-mode outputs).

    With `filter_kinks`, each sampled entry is probed at two step sizes; if
    the central estimates disagree, the difference quotient straddles a
    piecewise-linear kink (ReLU or a max tie), where a derivative comparison
    is undefined, and the entry is skipped.
    """
    module = copy.deepcopy(module).double()
    module.train(train_mode)
    gen = torch.Generator().manual_seed(seed)
    x = torch.randn(*in_shape, generator=gen, dtype=torch.float64)
    if kink_shift:
        x = x + kink_shift * x.sign()
    if loss_fn is None:
        with torch.no_grad():
            out_shape = module(x).shape
        probe = torch.randn(*out_shape, generator=gen, dtype=torch.float64)

        def loss_fn(mod, inp):
            return (mod(inp) * probe).sum()

    params = dict(module.named_parameters())
    x_in = x.clone().requires_grad_(True)
    loss_fn(module, x_in).backward()
    analytic = {n: p.grad.detach().clone() for n, p in params.items() if p.grad is not None}
    if x_in.grad is not None:
        analytic["<input>"] = x_in.grad.detach().clone()

    def eval_loss() -> float:
        with torch.no_grad():
            return loss_fn(module, x).item()

    f0 = eval_loss() if filter_kinks else None

    errors: dict[str, float] = {}
    tensors = {n: p.data for n, p in params.items()}
    tensors["<input>"] = x
    for name, tensor in tensors.items():
        if name not in analytic:
            continue
        flat = tensor.view(-1)
        idx = torch.randperm(flat.numel(), generator=gen)[: min(max_entries, flat.numel())]
        fd, keep = [], []
        for i in idx:
            orig = flat[i].item()
            flat[i] = orig + eps
            up = eval_loss()
            flat[i] = orig - eps
            down = eval_loss()
            flat[i] = orig
            central = (up - down) / (2 * eps)
            if filter_kinks:
                # one-sided quotients disagree when a kink (ReLU, max tie)
                # falls inside the probe interval; no derivative to compare
                forward, backward = (up - f0) / eps, (f0 - down) / eps
                if abs(forward - backward) > 1e-3 * max(abs(central), 1e-7):
                    continue
            fd.append(central)
            keep.append(i)
        if not fd:
            continue
        fd = torch.tensor(fd, dtype=torch.float64)
        ana = analytic[name].view(-1)[torch.tensor(keep)]
        # both sides numerically zero (e.g. a bias immediately absorbed by
        # normalization) counts as agreement, not as a 0/0 blow-up
        denom = torch.maximum(fd.abs().max(), ana.abs().max()).clamp_min(1e-7)
        errors[name] = ((ana - fd).abs().max() / denom).item()
    return errors


def gradcheck_suite(
    group: DihedralGroup, seeds=(0, 1, 2, 3, 4), eps: float = 1e-3
) -> dict[str, float]:
    """Worst finite-difference relative error per layer type over several seeds."""
    results: dict[str, float] = {}
    for seed in seeds:
        for case in layer_suite(group):
            torch.manual_seed(seed)
            mod = case.make()
            errs = finite_difference_check(
                mod,
                (1, case.in_type.channels, case.spatial, case.spatial),
                seed=seed,
                eps=eps,
                train_mode=case.train_mode,
                kink_shift=case.kink_shift,
            )
            worst = max(errs.values())
            results[case.name] = max(results.get(case.name, 0.0), worst)
    return results


def tiny_model_config(heads: str = "joint", group_order: int = 4):
    """2-stage miniature for end-to-end gradient checks (8x8 inputs)."""
    from .model import ModelConfig

    return ModelConfig(
        group_order=group_order,
        stage_fields=(2, 4),
        stage_blocks=(1, 1),
        aspp_rates=(1, 2),
        heads=heads,
        min_input=8,
    )


def model_loss_fd_check(
    heads: str = "joint", seed: int = 0, eps: float = 1e-4, max_entries: int = 4
) -> dict[str, float]:
    """Finite-difference check of the full training loss on a tiny model.

    Uses a smaller step than the per-layer checks: the end-to-end loss is
    piecewise smooth (max pooling, fiber max), and a large step makes the
    difference quotient straddle kinks, which says nothing about gradient
    correctness.
    """
    from .model import SymmetryNet
    from .train import TrainConfig, total_loss

    torch.manual_seed(seed)
    model = SymmetryNet(tiny_model_config(heads))
    cfg = TrainConfig(epochs=1)
    gen = torch.Generator().manual_seed(seed + 1)
    active = model.config.active_heads()
    labels = {}
    for task in active:
        n_cls = model.config.classes_for(task) + 1
        labels[f"y_{task}"] = (torch.rand(1, 8, 8, generator=gen) < 0.2).float()
        labels[f"s_{task}"] = torch.randint(0, n_cls, (1, 8, 8), generator=gen)

    def loss_fn(mod, x):
        return total_loss(mod(x), labels, active, cfg)[0]

    return finite_difference_check(
        model, (1, 3, 8, 8), seed=seed, eps=eps, max_entries=max_entries,
        loss_fn=loss_fn, train_mode=True, filter_kinks=True,
    )


def model_equivariance_residuals(model, spatial: int = 64, seed: int = 0) -> dict:
    """Two-path residuals of the final score maps for every group element.

    The model runs in train mode: with untrained running statistics an
    eval-mode forward saturates the output sigmoids, which would make the
    check vacuous.  Batch statistics are identical along both paths for
    axis-aligned elements, so equivariance still holds exactly.
    """
    from .fields import FieldType

    group = model.group
    was_training = model.training
    model.train()
    gen = torch.Generator().manual_seed(seed)
    x = torch.randn(1, model.config.in_channels, spatial, spatial, generator=gen)
    in_type = FieldType.trivial(group, model.config.in_channels)
    scalar = FieldType.trivial(group, 1)
    out: dict = {}
    with torch.no_grad():
        base = model(x)
        for g in group.elements:
            preds = model(transform_tensor(x, g, in_type))
            for task in model.config.active_heads():
                y_g = preds.for_task(task)[2].unsqueeze(1)
                y_t = transform_tensor(base.for_task(task)[2].unsqueeze(1), g, scalar)
                res = (interior(y_g) - interior(y_t)).abs().max().item()
                out.setdefault(task, {})[g] = res
    model.train(was_training)
    return out


def smooth_random_base(shape: tuple[int, ...], kernel_size: int, seed: int = 0) -> torch.Tensor:
    """Smooth filter ensemble for quantifying D_8 tap-interpolation error.

    Gaussian envelope (sigma = 0.45 of the grid half-width) modulated by a mild
    random affine ramp; the radially decaying mass keeps 45-degree resampling
    meaningful on a k x k grid.
    """
    k = kernel_size
    gen = torch.Generator().manual_seed(seed)
    ys, xs = torch.meshgrid(
        torch.arange(k, dtype=torch.float32) - (k - 1) / 2,
        torch.arange(k, dtype=torch.float32) - (k - 1) / 2,
        indexing="ij",
    )
    half = max((k - 1) / 2, 1.0)
    env = torch.exp(-(xs**2 + ys**2) / (2 * (0.45 * half) ** 2))
    a = torch.randn(*shape, 1, 1, generator=gen)
    bx = torch.randn(*shape, 1, 1, generator=gen)
    by = torch.randn(*shape, 1, 1, generator=gen)
    return env * (a + 0.25 * bx * xs / half + 0.25 * by * ys / half)
