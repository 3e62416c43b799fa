"""Divergence-free vector polynomial bases on reference simplices.

Every basis member is at most linear, so it is stored as a coefficient
array over the monomials ``(1, x, y)`` in 2-D or ``(1, x, y, z)`` in 3-D:
``coeffs[i, c, :]`` holds component ``c`` of member ``i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

__all__ = [
    "DivFreeBasis",
    "NodeSet",
    "rt0_basis_2d",
    "rt1_basis_2d",
    "rt0_basis_3d",
    "node_set",
    "basis_for_space",
    "rt_dimension",
    "monomial_integral",
]

REFERENCE_TRIANGLE = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
REFERENCE_TETRAHEDRON = np.array(
    [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


def rt_dimension(k: int) -> int:
    """dim RT_k^0 on a triangle, i.e. dim P_{k+1} - 1."""
    return (k + 1) * (k + 4) // 2


def monomial_integral(powers) -> float:
    """Exact integral of prod x_c^{a_c} over the reference simplex of dim len(powers)."""
    num = 1
    for a in powers:
        num *= factorial(a)
    return num / factorial(sum(powers) + len(powers))


@dataclass(frozen=True)
class DivFreeBasis:
    k: int
    coeffs: np.ndarray
    name: str = ""

    @property
    def dim(self):
        """Spatial dimension."""
        return self.coeffs.shape[1]

    @property
    def N(self):
        """Number of members."""
        return self.coeffs.shape[0]

    def __call__(self, points):
        """Values of all members, shape points.shape[:-1] + (N, dim)."""
        p = np.asarray(points, dtype=float)
        c = self.coeffs
        return c[:, :, 0] + np.einsum("icm,...m->...ic", c[:, :, 1:], p)

    def divergence(self):
        """Exact (constant) divergence of every member."""
        d = self.dim
        return np.array([sum(self.coeffs[i, c, 1 + c] for c in range(d))
                         for i in range(self.N)])

    def gram(self):
        """L2 Gram matrix over the reference simplex, integrated exactly."""
        d = self.dim
        # moments of monomial products 1, x_a, x_a x_b
        mom = np.zeros((d + 1, d + 1))
        for a in range(d + 1):
            for b in range(d + 1):
                powers = [0] * d
                if a:
                    powers[a - 1] += 1
                if b:
                    powers[b - 1] += 1
                mom[a, b] = monomial_integral(powers)
        return np.einsum("ica,jcb,ab->ij", self.coeffs, self.coeffs, mom)


@dataclass(frozen=True)
class NodeSet:
    kind: str
    points: np.ndarray
    start: np.ndarray

    def __len__(self):
        return len(self.points)

    @property
    def dim(self):
        return self.points.shape[1]

    def permuted(self, order) -> "NodeSet":
        order = list(order)
        if sorted(order) != list(range(len(self))):
            raise ValueError("order must be a permutation of the node indices")
        return NodeSet(self.kind, self.points[order], self.start)

    def with_start(self, start) -> "NodeSet":
        start = np.asarray(start, dtype=float)
        if start.shape != (self.dim,):
            raise ValueError(f"start point must have {self.dim} coordinates")
        return NodeSet(self.kind, self.points, start)


def _basis(k, rows, name):
    c = np.array(rows, dtype=float)
    c.setflags(write=False)
    return DivFreeBasis(k, c, name)


def rt0_basis_2d() -> DivFreeBasis:
    """{(1,0), (0,1)}."""
    return _basis(0, [
        [[1, 0, 0], [0, 0, 0]],
        [[0, 0, 0], [1, 0, 0]],
    ], "rt0")


def rt1_basis_2d() -> DivFreeBasis:
    """The five curls of P2 bubbles/Lagrange functions, in the reference order.

    (x, 1-2x-y), (0, -1+4x), (-x, y), (1-4y, 0), (-1+x+2y, -y)
    """
    return _basis(1, [
        [[0, 1, 0], [1, -2, -1]],
        [[0, 0, 0], [-1, 4, 0]],
        [[0, -1, 0], [0, 0, 1]],
        [[1, 0, -4], [0, 0, 0]],
        [[-1, 1, 2], [0, 0, -1]],
    ], "rt1")


def rt0_basis_3d() -> DivFreeBasis:
    """Unit vectors e_1, e_2, e_3 on the reference tetrahedron."""
    rows = []
    for i in range(3):
        member = [[0, 0, 0, 0] for _ in range(3)]
        member[i][0] = 1
        rows.append(member)
    return _basis(0, rows, "rt0_3d")


def basis_for_space(space: str) -> DivFreeBasis:
    try:
        return {"rt0": rt0_basis_2d, "rt1": rt1_basis_2d, "rt0_3d": rt0_basis_3d}[space]()
    except KeyError:
        raise ValueError(f"unknown space {space!r}") from None


_VERTICES = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
_MIDPOINTS = [(0.5, 0.0), (0.5, 0.5), (0.0, 0.5)]
_TET_FACES = [(1 / 3, 1 / 3, 0.0), (1 / 3, 0.0, 1 / 3), (0.0, 1 / 3, 1 / 3), (1 / 3, 1 / 3, 1 / 3)]

_KINDS = {
    # kind: (k, points, start)
    "vertices": (0, _VERTICES, (0.0, 0.0)),
    "midpoints": (0, _MIDPOINTS, (0.5, 0.0)),
    "p2": (1, _VERTICES + _MIDPOINTS, (0.0, 0.0)),
    "tet_vertices": (0, REFERENCE_TETRAHEDRON.tolist(), (0.0, 0.0, 0.0)),
    "tet_face_centers": (0, _TET_FACES, _TET_FACES[0]),
}

#: p2 ordering that walks the boundary from the first midpoint and ends at
#: the start vertex: (1/2,0), (1,0), (1/2,1/2), (0,1), (0,1/2), (0,0).
P2_WALK_ORDER = (3, 1, 4, 2, 5, 0)


def node_set(k: int, kind: str) -> NodeSet:
    """Interpolation nodes on the reference element.

    Midpoint ``i`` of the 2-D kinds lies on the edge from vertex ``i`` to
    vertex ``i+1``, matching the mesh-level convention.
    """
    if kind not in _KINDS:
        raise ValueError(f"unknown node set kind {kind!r}")
    kk, pts, start = _KINDS[kind]
    if kk != k:
        raise ValueError(f"node set {kind!r} does not pair with order k={k}")
    points = np.array(pts, dtype=float)
    points.setflags(write=False)
    return NodeSet(kind, points, np.array(start, dtype=float))
