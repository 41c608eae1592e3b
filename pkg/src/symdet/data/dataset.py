"""Loading datasets from disk: images, annotations, rasterized labels.

Directory layout (as written by the synth command):

    <root>/images/<id>.png
    <root>/annotations/<id>.txt
    <root>/splits/<split>.txt        one image id per line

Images are resized so their longer side equals `resize_max` (annotations are
scaled along), then normalized per channel to zero mean / unit variance.
Labels are rasterized once at load time.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .annotations import (
    AnnotationError,
    FourShape,
    ImageAnnotations,
    LineSegment,
    PolygonShape,
    RotationObject,
    parse_annotation_file,
)
from .rasterize import FoldClassTable, build_labels, default_fold_table


@dataclass
class LoadedSample:
    image_id: str
    image: torch.Tensor  # (3, H, W) float32, normalized
    raw_image: np.ndarray  # (H, W, 3) float32 in [0, 1], for rendering
    y_ref: torch.Tensor  # (H, W) float32
    s_ref: torch.Tensor  # (H, W) int64
    y_rot: torch.Tensor
    s_rot: torch.Tensor


def normalize_image(arr: np.ndarray) -> torch.Tensor:
    """Per-channel zero-mean/unit-variance for a (H, W, 3) array in [0, 1]."""
    t = torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))
    mean = t.mean(dim=(1, 2), keepdim=True)
    std = t.std(dim=(1, 2), keepdim=True).clamp_min(1e-6)
    return (t - mean) / std


def _scale_point(p, s):
    return (p[0] * s, p[1] * s)


def scale_annotations(ann: ImageAnnotations, scale: float, new_w: int, new_h: int) -> ImageAnnotations:
    if scale == 1.0:
        return ann
    out = ImageAnnotations(ann.image_id, new_w, new_h)
    for seg in ann.reflection.axes:
        out.reflection.axes.append(
            LineSegment(_scale_point(seg.p1, scale), _scale_point(seg.p2, scale))
        )
    for fs in ann.reflection.circles:
        out.reflection.circles.append(
            FourShape(*(_scale_point(p, scale) for p in fs.points()))
        )
    for obj in ann.rotation.objects:
        if isinstance(obj.shape, FourShape):
            shape = FourShape(*(_scale_point(p, scale) for p in obj.shape.points()))
        else:
            shape = PolygonShape(
                _scale_point(obj.shape.center, scale),
                tuple(_scale_point(v, scale) for v in obj.shape.vertices),
            )
        out.rotation.objects.append(RotationObject(obj.fold, shape))
    return out


def read_split(root, split: str) -> list[str]:
    path = Path(root) / "splits" / f"{split}.txt"
    if not path.exists():
        raise AnnotationError(f"split file not found: {path}")
    return [line.strip() for line in path.read_text().splitlines() if line.strip()]


def load_dataset(
    root,
    split: str,
    fold_table: FoldClassTable | None = None,
    resize_max: int | None = None,
    n_ref: int = 8,
) -> list[LoadedSample]:
    from PIL import Image

    root = Path(root)
    table = fold_table or default_fold_table()
    samples = []
    for image_id in read_split(root, split):
        img_path = root / "images" / f"{image_id}.png"
        ann_path = root / "annotations" / f"{image_id}.txt"
        if not img_path.exists():
            raise AnnotationError(f"image not found: {img_path}")
        img = Image.open(img_path).convert("RGB")
        ann = parse_annotation_file(ann_path)
        if (img.width, img.height) != (ann.width, ann.height):
            raise AnnotationError(
                f"{image_id}: image is {img.width}x{img.height} but annotations "
                f"declare {ann.width}x{ann.height}"
            )
        if resize_max and max(img.size) != resize_max:
            scale = resize_max / max(img.size)
            new_w = max(1, round(img.width * scale))
            new_h = max(1, round(img.height * scale))
            img = img.resize((new_w, new_h), Image.BILINEAR)
            ann = scale_annotations(ann, scale, new_w, new_h)
        arr = np.asarray(img, dtype=np.float32) / 255.0
        labels = build_labels(ann, table, n_ref=n_ref)
        samples.append(
            LoadedSample(
                image_id=image_id,
                image=normalize_image(arr),
                raw_image=arr,
                y_ref=torch.from_numpy(labels.y_ref.astype(np.float32)),
                s_ref=torch.from_numpy(labels.s_ref),
                y_rot=torch.from_numpy(labels.y_rot.astype(np.float32)),
                s_rot=torch.from_numpy(labels.s_rot),
            )
        )
    return samples
