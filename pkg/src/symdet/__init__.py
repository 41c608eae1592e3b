"""Dihedral-group-equivariant convolutional networks for symmetry detection."""

from .groups import DihedralGroup, GroupElement, dihedral
from .fields import FeatureField, FieldType

__all__ = [
    "DihedralGroup",
    "GroupElement",
    "dihedral",
    "FeatureField",
    "FieldType",
]

__version__ = "0.1.0"
