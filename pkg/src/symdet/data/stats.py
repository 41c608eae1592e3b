"""Dataset statistics: histograms of axis scale/orientation, folds, and center counts.

Axis lengths are normalized by the image diagonal; every histogram reports
ratios (counts over the total), which sum to 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .annotations import ImageAnnotations
from .rasterize import N_ORIENT_BINS, quantize_orientation

N_SCALE_BINS = 10


@dataclass
class Histogram:
    name: str
    labels: list[str]
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def ratios(self) -> np.ndarray:
        total = self.counts.sum()
        if total == 0:
            return np.zeros_like(self.counts, dtype=np.float64)
        return self.counts / total

    def table(self) -> str:
        width = max((len(l) for l in self.labels), default=5)
        lines = [f"# {self.name} (total {self.total})"]
        for label, count, ratio in zip(self.labels, self.counts, self.ratios):
            lines.append(f"{label:>{width}}  {int(count):6d}  {ratio:.4f}")
        return "\n".join(lines)


@dataclass
class SymmetryStats:
    axis_scale: Histogram
    axis_orientation: Histogram
    rotation_folds: Histogram
    centers_per_image: Histogram

    def all(self) -> list[Histogram]:
        return [self.axis_scale, self.axis_orientation, self.rotation_folds, self.centers_per_image]

    def text(self) -> str:
        return "\n\n".join(h.table() for h in self.all()) + "\n"

    def tsv(self) -> str:
        lines = ["histogram\tlabel\tcount\tratio"]
        for h in self.all():
            for label, count, ratio in zip(h.labels, h.counts, h.ratios):
                lines.append(f"{h.name}\t{label}\t{int(count)}\t{ratio!r}")
        return "\n".join(lines) + "\n"


def compute_stats(annotations: list[ImageAnnotations]) -> SymmetryStats:
    scale_counts = np.zeros(N_SCALE_BINS, dtype=np.int64)
    orient_counts = np.zeros(N_ORIENT_BINS, dtype=np.int64)
    fold_values: dict[int, int] = {}
    center_counts: dict[int, int] = {}

    for ann in annotations:
        diag = math.hypot(ann.width, ann.height)
        for seg in ann.reflection.axes:
            rel = seg.length / diag
            idx = min(int(rel * N_SCALE_BINS), N_SCALE_BINS - 1)
            scale_counts[idx] += 1
            orient_counts[quantize_orientation(seg.orientation_deg)] += 1
        n_centers = len(ann.rotation.objects)
        center_counts[n_centers] = center_counts.get(n_centers, 0) + 1
        for obj in ann.rotation.objects:
            fold_values[obj.fold] = fold_values.get(obj.fold, 0) + 1

    scale_labels = [
        f"{i / N_SCALE_BINS:.1f}-{(i + 1) / N_SCALE_BINS:.1f}" for i in range(N_SCALE_BINS)
    ]
    orient_labels = [f"{i * 180 // N_ORIENT_BINS}d" for i in range(N_ORIENT_BINS)]
    folds_sorted = sorted(fold_values)
    centers_sorted = sorted(center_counts)
    return SymmetryStats(
        axis_scale=Histogram("axis_scale", scale_labels, scale_counts),
        axis_orientation=Histogram("axis_orientation", orient_labels, orient_counts),
        rotation_folds=Histogram(
            "rotation_folds",
            [str(f) for f in folds_sorted],
            np.array([fold_values[f] for f in folds_sorted], dtype=np.int64),
        ),
        centers_per_image=Histogram(
            "centers_per_image",
            [str(c) for c in centers_sorted],
            np.array([center_counts[c] for c in centers_sorted], dtype=np.int64),
        ),
    )


def render_charts(stats: SymmetryStats, out_dir) -> list[str]:
    """Bar charts of every histogram as PNG files; returns the written paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for h in stats.all():
        fig, ax = plt.subplots(figsize=(4.5, 3))
        ax.bar(range(len(h.labels)), h.ratios, color="#3b6ea5")
        ax.set_xticks(range(len(h.labels)))
        ax.set_xticklabels(h.labels, rotation=45, ha="right", fontsize=7)
        ax.set_ylabel("ratio")
        ax.set_title(h.name)
        fig.tight_layout()
        path = out / f"{h.name}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(str(path))
    return written
