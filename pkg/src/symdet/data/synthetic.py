"""Synthetic desk-scale corpus: filled shapes with analytically known symmetries.

Every generated shape contributes exact annotations:

* circle           -> '4'-shape reflection mask, rotation fold 0
* ellipse          -> 2 axis segments (major/minor), rotation fold 2
* regular n-gon    -> n axes through the center, rotation fold n
* rectangle        -> 2 edge-bisector axes, rotation fold 2

Shapes are placed without overlap on a smooth random background, at uniform
random orientation and scale; generation is bit-deterministic per seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .annotations import (
    Ellipse,
    FourShape,
    ImageAnnotations,
    LineSegment,
    PolygonShape,
    RotationObject,
    annotation_text,
    ellipse_to_four_shape,
    write_annotation_file,
)

SHAPE_CATALOG = ("circle", "ellipse", "ngon", "rectangle")


@dataclass(frozen=True)
class SyntheticSpec:
    image_size: int = 64
    min_shapes: int = 1
    max_shapes: int = 3
    catalog: tuple[str, ...] = SHAPE_CATALOG
    ngon_sides: tuple[int, ...] = (3, 4, 5, 6, 7, 8)
    # overlapping ranges: contrast varies, so shape geometry (not brightness)
    # carries the signal
    fill_range: tuple[float, float] = (0.18, 0.92)
    background_range: tuple[float, float] = (0.08, 0.83)
    radius_range: tuple[float, float] = (0.10, 0.17)  # fraction of image size
    noise: float = 0.04
    seed: int = 0

    def __post_init__(self):
        if self.image_size < 32:
            raise ValueError("image_size must be at least 32")
        if not (1 <= self.min_shapes <= self.max_shapes):
            raise ValueError("need 1 <= min_shapes <= max_shapes")
        unknown = set(self.catalog) - set(SHAPE_CATALOG)
        if unknown:
            raise ValueError(f"unknown shapes in catalog: {sorted(unknown)}")


@dataclass
class SyntheticSample:
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    annotations: ImageAnnotations


def _dir(angle_deg: float) -> np.ndarray:
    a = math.radians(angle_deg)
    return np.array([math.cos(a), -math.sin(a)])  # visual angle -> image vector


def _smooth_background(rng, size, lo, hi, cells: int = 7):
    coarse = rng.uniform(lo, hi, size=(cells, cells, 3)).astype(np.float32)
    # bilinear upsample of the coarse grid
    idx = np.linspace(0, cells - 1, size)
    i0 = np.floor(idx).astype(int)
    i1 = np.minimum(i0 + 1, cells - 1)
    f = (idx - i0).astype(np.float32)
    rows = coarse[i0] * (1 - f)[:, None, None] + coarse[i1] * f[:, None, None]
    return rows[:, i0] * (1 - f)[None, :, None] + rows[:, i1] * f[None, :, None]


class _Shape:
    """Geometry plus annotation records for one placed shape."""

    def __init__(self, kind, center, radius, rng, spec):
        self.kind = kind
        self.center = center
        self.radius = radius  # bounding radius used for overlap control
        cx, cy = center
        self.axes: list[LineSegment] = []
        self.circles: list[FourShape] = []
        self.rotation: RotationObject | None = None
        if kind == "circle":
            self.ellipse = Ellipse(center, radius, radius, 0.0)
            fs = ellipse_to_four_shape(self.ellipse)
            self.circles.append(fs)
            self.rotation = RotationObject(0, fs)
        elif kind == "ellipse":
            ratio = rng.uniform(1.4, 2.0)
            b = radius / ratio
            tilt = rng.uniform(0.0, 180.0)
            # semi-major `radius` along visual angle `tilt`, semi-minor b across it
            self.ellipse = Ellipse(center, b, radius, tilt)
            u = _dir(tilt)
            v = _dir(tilt + 90.0)
            self.axes.append(
                LineSegment(tuple(center - radius * u), tuple(center + radius * u))
            )
            self.axes.append(LineSegment(tuple(center - b * v), tuple(center + b * v)))
            self.rotation = RotationObject(2, self._cardinal_four_shape(radius, b, tilt))
        elif kind == "ngon":
            n = int(rng.choice(spec.ngon_sides))
            phi = rng.uniform(0.0, 360.0)
            self.n = n
            self.vertex_angles = [(phi + k * 360.0 / n) % 360.0 for k in range(n)]
            self.apothem = radius * math.cos(math.pi / n)
            self.vertices = [tuple(center + radius * _dir(a)) for a in self.vertex_angles]
            for k in range(n):
                t = (phi + k * 180.0 / n) % 360.0
                e1 = center + self._ngon_boundary_radius(t) * _dir(t)
                e2 = center + self._ngon_boundary_radius(t + 180.0) * _dir(t + 180.0)
                self.axes.append(LineSegment(tuple(e1), tuple(e2)))
            self.rotation = RotationObject(n, self._polygon_annotation())
        elif kind == "rectangle":
            ratio = rng.uniform(1.4, 2.2)
            half_w = radius * ratio / math.hypot(ratio, 1.0)
            half_h = radius / math.hypot(ratio, 1.0)
            phi = rng.uniform(0.0, 180.0)
            self.half_w, self.half_h, self.phi = half_w, half_h, phi
            u, v = _dir(phi), _dir(phi + 90.0)
            self.axes.append(
                LineSegment(tuple(center - half_w * u), tuple(center + half_w * u))
            )
            self.axes.append(
                LineSegment(tuple(center - half_h * v), tuple(center + half_h * v))
            )
            self.vertices = [
                tuple(center + sx * half_w * u + sy * half_h * v)
                for sx, sy in ((1, 1), (-1, 1), (-1, -1), (1, -1))
            ]
            self.rotation = RotationObject(2, self._polygon_annotation())
        else:
            raise ValueError(kind)

    def _cardinal_four_shape(self, a_major, a_minor, tilt_deg) -> FourShape:
        """Boundary hits of the tilted ellipse in the four cardinal directions."""
        cx, cy = self.center

        def hit(angle_deg):
            rel = math.radians(angle_deg - tilt_deg)
            r = (a_major * a_minor) / math.hypot(
                a_minor * math.cos(rel), a_major * math.sin(rel)
            )
            return tuple(self.center + r * _dir(angle_deg))

        return FourShape(
            center=(cx, cy), up=hit(90.0), down=hit(270.0), left=hit(180.0), right=hit(0.0)
        )

    def _ngon_boundary_radius(self, angle_deg: float) -> float:
        for va in self.vertex_angles:
            if abs((angle_deg - va + 180.0) % 360.0 - 180.0) < 1e-9:
                return self.radius
        return self.apothem

    def _polygon_annotation(self) -> PolygonShape:
        # order counter-clockwise (increasing visual angle) from the vertex
        # closest to 12 o'clock
        def vis(p):
            return math.degrees(math.atan2(-(p[1] - self.center[1]), p[0] - self.center[0])) % 360.0

        verts = sorted(self.vertices, key=vis)
        start = min(range(len(verts)), key=lambda i: abs((vis(verts[i]) - 90.0 + 180.0) % 360.0 - 180.0))
        ordered = verts[start:] + verts[:start]
        return PolygonShape(tuple(self.center), tuple(ordered))

    def mask(self, size: int) -> np.ndarray:
        ys, xs = np.mgrid[0:size, 0:size]
        if self.kind in ("circle", "ellipse"):
            return self.ellipse.contains(xs, ys)
        # convex polygon: inside iff left of every ccw edge (visual coords)
        def vis_order(pts):
            return sorted(
                pts,
                key=lambda p: math.degrees(
                    math.atan2(-(p[1] - self.center[1]), p[0] - self.center[0])
                )
                % 360.0,
            )

        verts = vis_order(self.vertices)
        inside = np.ones((size, size), dtype=bool)
        n = len(verts)
        for i in range(n):
            x1, y1 = verts[i]
            x2, y2 = verts[(i + 1) % n]
            # cross product in visual coords (y flipped)
            cross = (x2 - x1) * (-(ys - y1)) - (-(y2 - y1)) * (xs - x1)
            inside &= cross >= -1e-9
        return inside


def generate_synthetic(spec: SyntheticSpec, n_images: int) -> list[SyntheticSample]:
    rng = np.random.default_rng(spec.seed)
    size = spec.image_size
    samples = []
    for idx in range(n_images):
        image = _smooth_background(rng, size, *spec.background_range)
        n_shapes = int(rng.integers(spec.min_shapes, spec.max_shapes + 1))
        placed: list[_Shape] = []
        for _ in range(n_shapes):
            for _attempt in range(50):
                kind = str(rng.choice(spec.catalog))
                radius = float(rng.uniform(size * spec.radius_range[0], size * spec.radius_range[1]))
                margin = radius + 2.0
                center = np.array(
                    [rng.uniform(margin, size - 1 - margin), rng.uniform(margin, size - 1 - margin)]
                )
                if all(
                    np.hypot(*(center - s.center)) > radius + s.radius + 2.0 for s in placed
                ):
                    placed.append(_Shape(kind, center, radius, rng, spec))
                    break
        ann = ImageAnnotations(f"synth{idx:05d}", size, size)
        for shape in placed:
            color = rng.uniform(*spec.fill_range, size=3).astype(np.float32)
            m = shape.mask(size)
            image[m] = color
            ann.reflection.axes.extend(shape.axes)
            ann.reflection.circles.extend(shape.circles)
            ann.rotation.objects.append(shape.rotation)
        if spec.noise:
            image = image + rng.normal(0.0, spec.noise, size=image.shape).astype(np.float32)
        image = np.clip(image, 0.0, 1.0)
        ann.validate()
        samples.append(SyntheticSample(image, ann))
    return samples


def write_dataset(
    samples: list[SyntheticSample],
    out_dir,
    splits: dict[str, int] | None = None,
) -> dict[str, list[str]]:
    """Write images/, annotations/, and split lists; returns ids per split."""
    from PIL import Image

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "annotations").mkdir(parents=True, exist_ok=True)
    (out / "splits").mkdir(parents=True, exist_ok=True)
    ids = []
    for s in samples:
        image_id = s.annotations.image_id
        ids.append(image_id)
        arr = np.clip(np.rint(s.image * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(arr).save(out / "images" / f"{image_id}.png")
        write_annotation_file(out / "annotations" / f"{image_id}.txt", s.annotations)
    if splits is None:
        splits = {"train": len(ids)}
    assigned: dict[str, list[str]] = {}
    pos = 0
    for name, count in splits.items():
        assigned[name] = ids[pos : pos + count]
        (out / "splits" / f"{name}.txt").write_text(
            "\n".join(assigned[name]) + "\n", encoding="utf-8"
        )
        pos += count
    return assigned
