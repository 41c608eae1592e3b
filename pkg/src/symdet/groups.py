"""Dihedral group algebra: elements, composition, regular representation, plane action.

Conventions (fixed once, everything downstream depends on them):

* An element of D_N is written ``(r, m)`` with rotation index ``r`` in
  ``[0, N)`` and mirror bit ``m``.  Composition follows

      (r1, m1) * (r2, m2) = ((r1 + (-1)^m1 * r2) mod N,  m1 xor m2)

  so ``(0, False)`` is the identity and inverses are closed form.
* The mirror axis is the vertical line through the chosen center.
* ``plane_matrix`` applies the rotation first, then the mirror.  Under the
  composition law above this map is an anti-homomorphism,
  ``A(g * h) = A(h) @ A(g)``; field transforms in :mod:`symdet.fields` are
  defined so that "transform by g, then by h" equals "transform by h * g",
  which is the property all equivariance tests check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class GroupElement:
    """One element (r, m) of D_N; carries its group order for safety checks."""

    rot: int
    ref: bool
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"group order must be >= 1, got {self.n}")
        object.__setattr__(self, "rot", self.rot % self.n)
        object.__setattr__(self, "ref", bool(self.ref))

    @property
    def is_identity(self) -> bool:
        return self.rot == 0 and not self.ref

    @property
    def angle(self) -> float:
        """Rotation part in radians (counter-clockwise, 2*pi*r/N)."""
        return 2.0 * math.pi * self.rot / self.n

    def __repr__(self):
        return f"D{self.n}({self.rot},{'m' if self.ref else 'r'})"


class DihedralGroup:
    """The dihedral group D_N: N rotations by 2*pi/N plus N mirrored elements.

    Elements are enumerated rotations first (r = 0..N-1, m = 0), then the
    mirrored ones (r = 0..N-1, m = 1), so the regular representation has a
    predictable 2-block structure.
    """

    def __init__(self, order_n: int):
        if order_n < 1:
            raise ValueError(f"order_n must be >= 1, got {order_n}")
        self.n = order_n
        self.elements: tuple[GroupElement, ...] = tuple(
            GroupElement(r, m, order_n) for m in (False, True) for r in range(order_n)
        )

    @property
    def size(self) -> int:
        return 2 * self.n

    @property
    def identity(self) -> GroupElement:
        return self.elements[0]

    def element(self, rot: int, ref: bool = False) -> GroupElement:
        return GroupElement(rot, ref, self.n)

    def index(self, g: GroupElement) -> int:
        self._check(g)
        return g.rot + (self.n if g.ref else 0)

    def _check(self, g: GroupElement):
        if g.n != self.n:
            raise ValueError(f"element of D_{g.n} used with D_{self.n}")

    def compose(self, g: GroupElement, h: GroupElement) -> GroupElement:
        self._check(g)
        self._check(h)
        sign = -1 if g.ref else 1
        return GroupElement((g.rot + sign * h.rot) % self.n, g.ref != h.ref, self.n)

    def inverse(self, g: GroupElement) -> GroupElement:
        self._check(g)
        if g.ref:
            return g
        return GroupElement(-g.rot % self.n, False, self.n)

    def regular_rep(self, g: GroupElement) -> np.ndarray:
        """Permutation matrix of left multiplication: rho(g)[i, j] = 1 iff e_i = g * e_j.

        Satisfies rho(g) @ rho(h) = rho(g * h) for all pairs.
        """
        self._check(g)
        size = self.size
        mat = np.zeros((size, size), dtype=np.float32)
        for j, h in enumerate(self.elements):
            mat[self.index(self.compose(g, h)), j] = 1.0
        return mat

    def regular_perm(self, g: GroupElement) -> np.ndarray:
        """Index form of the regular representation: out[perm] = in, i.e.
        applying rho(g) to a vector v is ``v[inv_perm]``; here we return
        ``perm[j] = index(g * e_j)`` so ``out[perm[j]] = v[j]``.
        """
        self._check(g)
        perm = np.empty(self.size, dtype=np.int64)
        for j, h in enumerate(self.elements):
            perm[j] = self.index(self.compose(g, h))
        return perm

    def is_axis_aligned(self, g: GroupElement) -> bool:
        """True when the rotation part of g is a multiple of 90 degrees."""
        return (4 * g.rot) % self.n == 0

    def plane_matrix(self, g: GroupElement) -> np.ndarray:
        """2x2 matrix of the plane action: rotate by 2*pi*r/N, then mirror (x -> -x) if m.

        Exact integer entries for 90-degree multiples.  Note this map is an
        anti-homomorphism of `compose` (see module docstring).
        """
        self._check(g)
        if self.is_axis_aligned(g):
            quarter = (4 * g.rot) // self.n % 4
            c, s = [(1, 0), (0, 1), (-1, 0), (0, -1)][quarter]
            rot = np.array([[c, -s], [s, c]], dtype=np.float64)
        else:
            a = g.angle
            rot = np.array(
                [[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]],
                dtype=np.float64,
            )
        if g.ref:
            rot = np.array([[-1.0, 0.0], [0.0, 1.0]]) @ rot
        return rot

    def act_on_plane(self, g: GroupElement, point, center=(0.0, 0.0)) -> np.ndarray:
        """Apply g to a 2D point (x, y): rotate about `center`, then mirror across
        the vertical line through `center` if g is reflected."""
        p = np.asarray(point, dtype=np.float64)
        c = np.asarray(center, dtype=np.float64)
        return self.plane_matrix(g) @ (p - c) + c

    def __repr__(self):
        return f"DihedralGroup(order_n={self.n})"

    def __eq__(self, other):
        return isinstance(other, DihedralGroup) and other.n == self.n

    def __hash__(self):
        return hash(("DihedralGroup", self.n))


@lru_cache(maxsize=None)
def dihedral(order_n: int) -> DihedralGroup:
    """Shared instance per order; groups are immutable so caching is safe."""
    return DihedralGroup(order_n)
