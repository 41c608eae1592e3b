"""Training loop: adaptive-moment gradient descent on the combined loss.

Deterministic given the seed in single-threaded mode: model initialization,
batch shuffling, and every update are driven by explicitly seeded generators.
Aborts with a diagnostic if the loss stops being finite.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np
import torch

from .evaluate import f1_dilation_dataset
from .losses import head_loss
from .model import Predictions, SymmetryNet


class NumericError(RuntimeError):
    """Raised when training produces non-finite values."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 8
    epochs: int = 100
    focal_alpha: float = 0.95
    focal_gamma: float = 2.0
    bg_weight_ref: float = 0.01
    bg_weight_rot: float = 0.001
    resize_max: int = 417
    rng_seed: int = 0
    use_aux: bool = True
    num_threads: int = 1
    val_every: int = 5

    def __post_init__(self):
        if not 0.0 < self.focal_alpha < 1.0:
            raise ValueError(f"focal_alpha must be in (0, 1), got {self.focal_alpha}")
        for name in ("batch_size", "resize_max", "num_threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("learning_rate", "focal_gamma", "bg_weight_ref", "bg_weight_rot"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")

    def bg_weight(self, task: str) -> float:
        return self.bg_weight_ref if task == "ref" else self.bg_weight_rot


def total_loss(preds: Predictions, labels: dict, heads, cfg: TrainConfig):
    """Sum of per-head losses; joint mode adds both heads with unit weights."""
    total = None
    parts = {}
    for task in heads:
        s, p, y = preds.for_task(task)
        y_gt = labels.get(f"y_{task}")
        s_gt = labels.get(f"s_{task}")
        if y_gt is None or (cfg.use_aux and s_gt is None):
            raise ValueError(f"missing labels for active head {task!r}")
        loss, sub = head_loss(
            y, y_gt, s, s_gt, cfg.focal_alpha, cfg.focal_gamma, cfg.bg_weight(task), cfg.use_aux
        )
        total = loss if total is None else total + loss
        for k, v in sub.items():
            parts[f"{task}_{k}"] = v
    if total is None:
        raise ValueError("no active heads")
    return total, parts


def _stack_labels(samples, idx, heads) -> dict:
    batch = {}
    for task in heads:
        batch[f"y_{task}"] = torch.stack([getattr(samples[i], f"y_{task}") for i in idx])
        batch[f"s_{task}"] = torch.stack([getattr(samples[i], f"s_{task}") for i in idx])
    return batch


def validation_f1(model: SymmetryNet, samples, heads) -> dict[str, float]:
    """Dataset-level dilation F1 per head on held-out samples."""
    was_training = model.training
    model.eval()
    pairs = {task: [] for task in heads}
    with torch.no_grad():
        for s in samples:
            preds = model(s.image.unsqueeze(0))
            for task in heads:
                y = preds.for_task(task)[2]
                gt = getattr(s, f"y_{task}").numpy() > 0.5
                pairs[task].append((y.squeeze(0).numpy(), gt))
    model.train(was_training)
    return {task: f1_dilation_dataset(pairs[task]).best_f1 for task in heads}


def train(
    model: SymmetryNet,
    train_samples,
    val_samples,
    cfg: TrainConfig,
    log=None,
) -> list[dict]:
    """Train in place; returns one metrics dict per epoch."""
    torch.set_num_threads(cfg.num_threads)
    torch.manual_seed(cfg.rng_seed)
    heads = model.config.active_heads()
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    shuffler = torch.Generator().manual_seed(cfg.rng_seed)
    metrics = []
    model.train()
    n = len(train_samples)
    for epoch in range(cfg.epochs):
        order = torch.randperm(n, generator=shuffler).tolist()
        epoch_loss = 0.0
        part_sums: dict[str, float] = {}
        n_batches = 0
        t0 = time.time()
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            images = torch.stack([train_samples[i].image for i in idx])
            labels = _stack_labels(train_samples, idx, heads)
            optimizer.zero_grad()
            preds = model(images)
            loss, parts = total_loss(preds, labels, heads, cfg)
            if not torch.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch + 1}, batch {n_batches + 1}: "
                    f"{loss.item()!r} (parts: {parts})"
                )
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item()
            for k, v in parts.items():
                part_sums[k] = part_sums.get(k, 0.0) + v
            n_batches += 1
        entry = {
            "epoch": epoch + 1,
            "loss": epoch_loss / max(n_batches, 1),
            "seconds": time.time() - t0,
        }
        for k, v in part_sums.items():
            entry[k] = v / max(n_batches, 1)
        last = epoch == cfg.epochs - 1
        if val_samples and cfg.val_every and (last or (epoch + 1) % cfg.val_every == 0):
            for task, f1 in validation_f1(model, val_samples, heads).items():
                entry[f"val_f1_{task}"] = f1
        metrics.append(entry)
        if log:
            log(
                "epoch {epoch:3d}  loss {loss:.4f}".format(**entry)
                + "".join(
                    f"  val_f1_{t} {entry[f'val_f1_{t}']:.3f}"
                    for t in heads
                    if f"val_f1_{t}" in entry
                )
            )
    return metrics


def metrics_text(metrics: list[dict]) -> str:
    lines = []
    for entry in metrics:
        lines.append(" ".join(f"{k}={entry[k]!r}" for k in entry))
    return "\n".join(lines) + "\n"
