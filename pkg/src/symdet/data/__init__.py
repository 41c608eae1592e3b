from .annotations import (
    AnnotationError,
    Ellipse,
    FourShape,
    ImageAnnotations,
    LineSegment,
    PolygonShape,
    ReflectionAnnotation,
    RotationAnnotation,
    RotationObject,
    ellipse_to_four_shape,
    four_shape_to_ellipse,
    parse_annotation_file,
    parse_annotation_text,
    write_annotation_file,
    annotation_text,
)
from .rasterize import (
    FoldClassTable,
    SampleLabels,
    build_labels,
    default_fold_table,
    quantize_orientation,
    rasterize_reflection,
    rasterize_rotation,
    soft_orientation_label,
)
from .synthetic import SyntheticSpec, generate_synthetic, write_dataset
from .stats import compute_stats

__all__ = [
    "AnnotationError",
    "Ellipse",
    "FourShape",
    "ImageAnnotations",
    "LineSegment",
    "PolygonShape",
    "ReflectionAnnotation",
    "RotationAnnotation",
    "RotationObject",
    "ellipse_to_four_shape",
    "four_shape_to_ellipse",
    "parse_annotation_file",
    "parse_annotation_text",
    "write_annotation_file",
    "annotation_text",
    "FoldClassTable",
    "SampleLabels",
    "build_labels",
    "default_fold_table",
    "quantize_orientation",
    "rasterize_reflection",
    "rasterize_rotation",
    "soft_orientation_label",
    "SyntheticSpec",
    "generate_synthetic",
    "write_dataset",
    "compute_stats",
]
