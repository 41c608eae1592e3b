"""Rasterize annotations into training label maps.

Reflection ground truth: 1-pixel line rasterization of each axis plus filled
masks for circle annotations.  Each foreground pixel carries one of 8
orientation classes (22.5-degree bins over 180 degrees): a line's angle is
soft-assigned to its two nearest bins with linear weights and quantized to the
argmax (ties to the lower class index); inside a circle mask each pixel takes
the bin of the line through the center and that pixel.  Where objects overlap,
the longer one wins per pixel (equal lengths: lower class index).

Rotation ground truth: a 5-pixel-radius disk around every rotation center,
classed by the object's fold via a `FoldClassTable`; overlapping disks resolve
to the smaller-area object.

Foreground support of the class maps equals the binary maps exactly; the
background class index is the number of foreground classes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .annotations import (
    AnnotationError,
    FourShape,
    ImageAnnotations,
    PolygonShape,
    ReflectionAnnotation,
    RotationAnnotation,
    four_shape_to_ellipse,
    visual_angle_deg,
)

N_ORIENT_BINS = 8
BIN_DEG = 180.0 / N_ORIENT_BINS
CENTER_DISK_RADIUS = 5


def soft_orientation_label(theta_deg: float) -> tuple[tuple[int, int], tuple[float, float]]:
    """Two nearest orientation bins (of 8 over 180 degrees) with linear weights."""
    t = (theta_deg % 180.0) / BIN_DEG
    k0 = int(math.floor(t)) % N_ORIENT_BINS
    frac = t - math.floor(t)
    k1 = (k0 + 1) % N_ORIENT_BINS
    return (k0, k1), (1.0 - frac, frac)


def quantize_orientation(theta_deg: float) -> int:
    """Argmax of the soft label; exact ties go to the lower class index."""
    (k0, k1), (w0, w1) = soft_orientation_label(theta_deg)
    if w0 > w1:
        return k0
    if w1 > w0:
        return k1
    return min(k0, k1)


def _orientation_classes(dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Vectorized quantize_orientation for direction vectors in image coords."""
    theta = np.degrees(np.arctan2(-dy, dx)) % 180.0
    t = theta / BIN_DEG
    k0 = np.floor(t).astype(np.int64) % N_ORIENT_BINS
    frac = t - np.floor(t)
    k1 = (k0 + 1) % N_ORIENT_BINS
    cls = np.where(frac < 0.5, k0, k1)
    tie = frac == 0.5
    if np.any(tie):
        cls = np.where(tie, np.minimum(k0, k1), cls)
    return cls


def bresenham_line(p1, p2) -> list[tuple[int, int]]:
    """Integer (row, col) pixels of the segment, endpoints rounded to the grid."""
    x0, y0 = int(round(p1[0])), int(round(p1[1]))
    x1, y1 = int(round(p2[0])), int(round(p2[1]))
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    pixels = []
    while True:
        pixels.append((y0, x0))
        if x0 == x1 and y0 == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy
    return pixels


def rasterize_reflection(
    ann: ReflectionAnnotation, height: int, width: int, n_ref: int = N_ORIENT_BINS
) -> tuple[np.ndarray, np.ndarray]:
    """Returns (y_gt bool (H, W), s_gt int64 (H, W) with background = n_ref)."""
    if n_ref != N_ORIENT_BINS:
        raise ValueError(f"orientation binning is defined for {N_ORIENT_BINS} classes")
    best_len = np.full((height, width), -1.0)
    s_gt = np.full((height, width), n_ref, dtype=np.int64)

    def paint(mask, length, cls):
        take = mask & (
            (length > best_len) | ((length == best_len) & (cls < s_gt))
        )
        best_len[take] = length
        s_gt_flat = s_gt
        if np.isscalar(cls):
            s_gt_flat[take] = cls
        else:
            s_gt_flat[take] = cls[take]

    for fs in ann.circles:
        ell = four_shape_to_ellipse(fs)
        ys, xs = np.mgrid[0:height, 0:width]
        mask = ell.contains(xs, ys)
        dx = xs - ell.center[0]
        dy = ys - ell.center[1]
        cls = _orientation_classes(dx, dy)
        length = 2.0 * max(ell.a_vert, ell.a_horiz)
        paint(mask, length, cls)

    for seg in ann.axes:
        mask = np.zeros((height, width), dtype=bool)
        for i, j in bresenham_line(seg.p1, seg.p2):
            if 0 <= i < height and 0 <= j < width:
                mask[i, j] = True
        paint(mask, seg.length, quantize_orientation(seg.orientation_deg))

    y_gt = best_len >= 0.0
    return y_gt, s_gt


@dataclass(frozen=True)
class FoldClassTable:
    """Bijective map between fold values and class indices; must contain 0."""

    folds: tuple[int, ...]

    def __post_init__(self):
        if len(set(self.folds)) != len(self.folds):
            raise ValueError("fold values must be distinct")
        if 0 not in self.folds:
            raise ValueError("the continuous group (fold 0) needs a dedicated class")

    @property
    def size(self) -> int:
        return len(self.folds)

    def index_of(self, fold: int) -> int:
        try:
            return self.folds.index(fold)
        except ValueError:
            raise AnnotationError(f"fold {fold} missing from the class table") from None


def default_fold_table(n_classes: int = 21) -> FoldClassTable:
    """0 (continuous) plus folds 2..n_classes+1 -> exactly n_classes entries."""
    return FoldClassTable((0, *range(2, n_classes + 1)))


def rasterize_rotation(
    ann: RotationAnnotation,
    height: int,
    width: int,
    table: FoldClassTable,
    radius: int = CENTER_DISK_RADIUS,
) -> tuple[np.ndarray, np.ndarray]:
    """Returns (y_gt bool, s_gt int64 with background = table.size)."""
    best_area = np.full((height, width), np.inf)
    s_gt = np.full((height, width), table.size, dtype=np.int64)
    ys, xs = np.mgrid[0:height, 0:width]
    for obj in ann.objects:
        cls = table.index_of(obj.fold)
        cx, cy = obj.center
        mask = (xs - cx) ** 2 + (ys - cy) ** 2 <= radius * radius
        area = obj.area
        take = mask & ((area < best_area) | ((area == best_area) & (cls < s_gt)))
        best_area[take] = area
        s_gt[take] = cls
    y_gt = np.isfinite(best_area)
    return y_gt, s_gt


@dataclass
class SampleLabels:
    """Rasterized ground truth for one image."""

    y_ref: np.ndarray  # (H, W) bool
    s_ref: np.ndarray  # (H, W) int64, background = n_ref
    y_rot: np.ndarray
    s_rot: np.ndarray  # background = fold table size


def build_labels(
    ann: ImageAnnotations,
    table: FoldClassTable | None = None,
    n_ref: int = N_ORIENT_BINS,
) -> SampleLabels:
    table = table or default_fold_table()
    y_ref, s_ref = rasterize_reflection(ann.reflection, ann.height, ann.width, n_ref)
    y_rot, s_rot = rasterize_rotation(ann.rotation, ann.height, ann.width, table)
    return SampleLabels(y_ref, s_ref, y_rot, s_rot)
