"""Annotation schema for symmetry ground truth, with a line-oriented text format.

One UTF-8 text document per image:

    image <id> <W> <H>
    raxis x1 y1 x2 y2
    rcircle cx cy ux uy dx dy lx ly rx ry
    rot-ellipse fold cx cy ux uy dx dy lx ly rx ry
    rot-polygon fold cx cy x1 y1 ... xV yV

Reflection axes are two-point line segments.  Circular objects (an infinite
family of axes) use a five-point '4'-shape: center plus the boundary points in
the up, down, left, and right directions.  Rotation objects carry a fold count
(0 means continuous symmetry) and either a '4'-shape or a convex polygon:
center first, then the vertex closest to 12 o'clock, remaining vertices
counter-clockwise.

Angles here are "visual": measured from the +x axis, counter-clockwise on the
screen, i.e. `atan2(-dy, dx)` in pixel coordinates where y grows downward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

Point = tuple[float, float]

FOUR_SHAPE_SLACK_DEG = 30.0


class AnnotationError(ValueError):
    pass


def visual_angle_deg(dx: float, dy: float) -> float:
    """Angle of an image-space vector, counter-clockwise on screen, in [0, 360)."""
    return math.degrees(math.atan2(-dy, dx)) % 360.0


def _angdiff(a: float, b: float) -> float:
    return abs((a - b + 180.0) % 360.0 - 180.0)


@dataclass(frozen=True)
class LineSegment:
    p1: Point
    p2: Point

    @property
    def length(self) -> float:
        return math.hypot(self.p2[0] - self.p1[0], self.p2[1] - self.p1[1])

    @property
    def orientation_deg(self) -> float:
        """Line orientation in [0, 180)."""
        return visual_angle_deg(self.p2[0] - self.p1[0], self.p2[1] - self.p1[1]) % 180.0

    def validate(self):
        if self.p1 == self.p2:
            raise AnnotationError(f"axis endpoints coincide at {self.p1}")


@dataclass(frozen=True)
class FourShape:
    """Center plus boundary extents in the up/down/left/right directions."""

    center: Point
    up: Point
    down: Point
    left: Point
    right: Point

    def extents(self):
        c = self.center
        return {
            name: (p[0] - c[0], p[1] - c[1])
            for name, p in (("up", self.up), ("down", self.down), ("left", self.left), ("right", self.right))
        }

    def validate(self):
        nominal = {"up": 90.0, "down": 270.0, "left": 180.0, "right": 0.0}
        for name, (dx, dy) in self.extents().items():
            norm = math.hypot(dx, dy)
            if norm < 1e-9:
                raise AnnotationError(f"'4'-shape has a zero {name} extent at {self.center}")
            if _angdiff(visual_angle_deg(dx, dy), nominal[name]) > FOUR_SHAPE_SLACK_DEG + 1e-9:
                raise AnnotationError(
                    f"'4'-shape {name} extent deviates more than "
                    f"{FOUR_SHAPE_SLACK_DEG} degrees from its direction"
                )

    def points(self) -> list[Point]:
        return [self.center, self.up, self.down, self.left, self.right]


@dataclass(frozen=True)
class PolygonShape:
    center: Point
    vertices: tuple[Point, ...]

    def validate(self):
        if len(self.vertices) < 3:
            raise AnnotationError(
                f"polygon needs at least 3 vertices, got {len(self.vertices)}"
            )
        # counter-clockwise on screen: positive shoelace area in visual coords
        area = 0.0
        n = len(self.vertices)
        for i in range(n):
            x1, y1 = self.vertices[i]
            x2, y2 = self.vertices[(i + 1) % n]
            area += x1 * (-y2) - x2 * (-y1)
        if area <= 0:
            raise AnnotationError("polygon vertices must be counter-clockwise around the center")

    @property
    def area(self) -> float:
        total = 0.0
        n = len(self.vertices)
        for i in range(n):
            x1, y1 = self.vertices[i]
            x2, y2 = self.vertices[(i + 1) % n]
            total += x1 * (-y2) - x2 * (-y1)
        return abs(total) / 2.0

    def points(self) -> list[Point]:
        return [self.center, *self.vertices]


@dataclass(frozen=True)
class RotationObject:
    fold: int
    shape: FourShape | PolygonShape

    def validate(self):
        if self.fold < 0:
            raise AnnotationError(f"fold must be non-negative, got {self.fold}")
        self.shape.validate()

    @property
    def center(self) -> Point:
        return self.shape.center

    @property
    def area(self) -> float:
        if isinstance(self.shape, PolygonShape):
            return self.shape.area
        ell = four_shape_to_ellipse(self.shape)
        return math.pi * ell.a_vert * ell.a_horiz


@dataclass
class ReflectionAnnotation:
    image_id: str
    axes: list[LineSegment] = field(default_factory=list)
    circles: list[FourShape] = field(default_factory=list)


@dataclass
class RotationAnnotation:
    image_id: str
    objects: list[RotationObject] = field(default_factory=list)


@dataclass
class ImageAnnotations:
    image_id: str
    width: int
    height: int
    reflection: ReflectionAnnotation = None
    rotation: RotationAnnotation = None

    def __post_init__(self):
        if self.reflection is None:
            self.reflection = ReflectionAnnotation(self.image_id)
        if self.rotation is None:
            self.rotation = RotationAnnotation(self.image_id)

    def validate(self):
        if self.width < 1 or self.height < 1:
            raise AnnotationError(f"bad image size {self.width}x{self.height}")
        for seg in self.reflection.axes:
            seg.validate()
            self._check_bounds(seg.p1, seg.p2)
        for fs in self.reflection.circles:
            fs.validate()
            self._check_bounds(*fs.points())
        for obj in self.rotation.objects:
            obj.validate()
            self._check_bounds(*obj.shape.points())

    def _check_bounds(self, *points: Point):
        for x, y in points:
            if not (-1e-6 <= x <= self.width - 1 + 1e-6 and -1e-6 <= y <= self.height - 1 + 1e-6):
                raise AnnotationError(
                    f"point ({x}, {y}) outside image bounds {self.width}x{self.height}"
                )


# -- '4'-shape <-> ellipse ---------------------------------------------------


@dataclass(frozen=True)
class Ellipse:
    center: Point
    a_vert: float  # semi-axis along the (possibly tilted) up direction
    a_horiz: float
    tilt_deg: float  # visual angle of the up extent minus 90

    def contains(self, x, y):
        """Vectorized point-inside test in image coordinates."""
        import numpy as np

        vx = np.asarray(x, dtype=np.float64) - self.center[0]
        vy = -(np.asarray(y, dtype=np.float64) - self.center[1])  # to visual coords
        t = math.radians(self.tilt_deg)
        u = vx * math.cos(t) + vy * math.sin(t)
        v = -vx * math.sin(t) + vy * math.cos(t)
        return (u / self.a_horiz) ** 2 + (v / self.a_vert) ** 2 <= 1.0 + 1e-12


def four_shape_to_ellipse(fs: FourShape) -> Ellipse:
    """Center from the first point, semi-axes from mean opposite extents,
    tilt from the up extent."""
    fs.validate()
    ext = fs.extents()
    a_vert = (math.hypot(*ext["up"]) + math.hypot(*ext["down"])) / 2.0
    a_horiz = (math.hypot(*ext["left"]) + math.hypot(*ext["right"])) / 2.0
    tilt = (visual_angle_deg(*ext["up"]) - 90.0 + 180.0) % 360.0 - 180.0
    return Ellipse(fs.center, a_vert, a_horiz, tilt)


def ellipse_to_four_shape(ell: Ellipse) -> FourShape:
    """Canonical '4'-shape serialization of an ellipse (axis-endpoint extents)."""
    cx, cy = ell.center

    def at(angle_deg: float, radius: float) -> Point:
        a = math.radians(angle_deg)
        return (cx + radius * math.cos(a), cy - radius * math.sin(a))

    t = ell.tilt_deg
    return FourShape(
        center=ell.center,
        up=at(90.0 + t, ell.a_vert),
        down=at(270.0 + t, ell.a_vert),
        left=at(180.0 + t, ell.a_horiz),
        right=at(0.0 + t, ell.a_horiz),
    )


# -- text format -------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def annotation_text(ann: ImageAnnotations) -> str:
    lines = [f"image {ann.image_id} {ann.width} {ann.height}"]
    for seg in ann.reflection.axes:
        lines.append(
            "raxis " + " ".join(_fmt(v) for v in (*seg.p1, *seg.p2))
        )
    for fs in ann.reflection.circles:
        coords = [c for p in fs.points() for c in p]
        lines.append("rcircle " + " ".join(_fmt(v) for v in coords))
    for obj in ann.rotation.objects:
        if isinstance(obj.shape, FourShape):
            coords = [c for p in obj.shape.points() for c in p]
            lines.append(f"rot-ellipse {obj.fold} " + " ".join(_fmt(v) for v in coords))
        else:
            coords = [c for p in obj.shape.points() for c in p]
            lines.append(f"rot-polygon {obj.fold} " + " ".join(_fmt(v) for v in coords))
    return "\n".join(lines) + "\n"


def write_annotation_file(path, ann: ImageAnnotations) -> None:
    Path(path).write_text(annotation_text(ann), encoding="utf-8")


def _floats(parts: list[str], lineno: int, record: str) -> list[float]:
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise AnnotationError(f"line {lineno}: bad number in {record!r} record: {exc}") from None


def _fold(parts: list[str], lineno: int, source: str) -> int:
    if len(parts) < 2:
        raise AnnotationError(f"{source}:{lineno}: missing fold count")
    try:
        return int(parts[1])
    except ValueError:
        raise AnnotationError(f"{source}:{lineno}: fold must be an integer, got {parts[1]!r}") from None


def parse_annotation_text(text: str, source: str = "<string>") -> ImageAnnotations:
    ann: ImageAnnotations | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        kind = parts[0]
        if kind == "image":
            if len(parts) != 4:
                raise AnnotationError(f"{source}:{lineno}: image header needs '<id> <W> <H>'")
            ann = ImageAnnotations(parts[1], int(parts[2]), int(parts[3]))
        elif ann is None:
            raise AnnotationError(f"{source}:{lineno}: record before the image header")
        elif kind == "raxis":
            vals = _floats(parts[1:], lineno, kind)
            if len(vals) != 4:
                raise AnnotationError(f"{source}:{lineno}: raxis needs 4 numbers, got {len(vals)}")
            ann.reflection.axes.append(LineSegment((vals[0], vals[1]), (vals[2], vals[3])))
        elif kind == "rcircle":
            vals = _floats(parts[1:], lineno, kind)
            if len(vals) != 10:
                raise AnnotationError(
                    f"{source}:{lineno}: rcircle needs 5 points (10 numbers), got {len(vals)}"
                )
            pts = [(vals[i], vals[i + 1]) for i in range(0, 10, 2)]
            ann.reflection.circles.append(FourShape(*pts))
        elif kind == "rot-ellipse":
            fold = _fold(parts, lineno, source)
            vals = _floats(parts[2:], lineno, kind)
            if len(vals) != 10:
                raise AnnotationError(
                    f"{source}:{lineno}: rot-ellipse needs 5 points (10 numbers), got {len(vals)}"
                )
            pts = [(vals[i], vals[i + 1]) for i in range(0, 10, 2)]
            ann.rotation.objects.append(RotationObject(fold, FourShape(*pts)))
        elif kind == "rot-polygon":
            fold = _fold(parts, lineno, source)
            vals = _floats(parts[2:], lineno, kind)
            if len(vals) < 8 or len(vals) % 2 != 0:
                raise AnnotationError(
                    f"{source}:{lineno}: rot-polygon needs a center plus >= 3 vertices"
                )
            pts = [(vals[i], vals[i + 1]) for i in range(0, len(vals), 2)]
            ann.rotation.objects.append(
                RotationObject(fold, PolygonShape(pts[0], tuple(pts[1:])))
            )
        else:
            raise AnnotationError(f"{source}:{lineno}: unknown record type {kind!r}")
    if ann is None:
        raise AnnotationError(f"{source}: missing image header")
    ann.validate()
    return ann


def parse_annotation_file(path) -> ImageAnnotations:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise AnnotationError(f"cannot read {path}: {exc}") from None
    return parse_annotation_text(text, source=str(path))
