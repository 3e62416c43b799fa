"""Conforming triangulations with Dirichlet/Neumann boundary markers.

Vertices and triangles are stored as numpy arrays with 0-based ids;
the text file format uses 1-based ids::

    # comment
    nv nt nb
    id x y            (nv lines)
    id v1 v2 v3       (nt lines)
    va vb marker      (nb lines, marker D or N)

Local numbering convention: local edge/midpoint ``i`` joins local vertex
``i`` to local vertex ``(i + 1) % 3``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "Mesh",
    "AffineMap",
    "MeshError",
    "MeshFormatError",
    "NonconformingMeshError",
    "DegenerateElementError",
    "generate_unit_square",
    "refine_uniform",
    "load_mesh",
    "save_mesh",
    "affine_map",
]

DIRICHLET = "D"
NEUMANN = "N"
SIDES = ("left", "right", "bottom", "top")


class MeshError(ValueError):
    pass


class MeshFormatError(MeshError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NonconformingMeshError(MeshError):
    pass


class DegenerateElementError(MeshError):
    pass


def _signed_areas(vertices, triangles):
    p = vertices[triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    boundary: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "boundary",
                           {tuple(sorted(map(int, k))): m for k, m in self.boundary.items()})

    @property
    def nv(self):
        return len(self.vertices)

    @property
    def nt(self):
        return len(self.triangles)

    @cached_property
    def areas(self):
        return _signed_areas(self.vertices, self.triangles)

    @cached_property
    def _edge_data(self):
        t = self.triangles
        local = np.stack([t, np.roll(t, -1, axis=1)], axis=-1)  # (nt, 3, 2)
        keys = np.sort(local.reshape(-1, 2), axis=1)
        edges, inverse, counts = np.unique(keys, axis=0, return_inverse=True,
                                           return_counts=True)
        return edges, inverse.reshape(-1, 3), counts

    @property
    def edges(self):
        """Unique edges as sorted vertex pairs, shape (ne, 2)."""
        return self._edge_data[0]

    @property
    def triangle_edges(self):
        """Global edge id of each local edge, shape (nt, 3)."""
        return self._edge_data[1]

    @property
    def edge_counts(self):
        return self._edge_data[2]

    @property
    def ne(self):
        return len(self.edges)

    @cached_property
    def edge_midpoints(self):
        return self.vertices[self.edges].mean(axis=1)

    @cached_property
    def h(self):
        """Mesh size: the longest edge."""
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return float(np.sqrt((d ** 2).sum(axis=1)).max())

    @cached_property
    def edge_markers(self):
        """Marker per global edge: 'D', 'N' or '' for interior edges."""
        out = np.full(self.ne, "", dtype=object)
        index = {tuple(e): i for i, e in enumerate(self.edges.tolist())}
        for key, marker in self.boundary.items():
            out[index[key]] = marker
        return out

    def check(self):
        """Raise if the mesh violates orientation, conformity or marking rules."""
        if np.any(self.triangles < 0) or np.any(self.triangles >= self.nv):
            raise MeshError("triangle references a nonexistent vertex")
        if np.any(self.areas <= 0):
            bad = int(np.flatnonzero(self.areas <= 0)[0])
            raise DegenerateElementError(f"triangle {bad + 1} has non-positive area")
        if np.any(self.edge_counts > 2):
            raise NonconformingMeshError("edge shared by more than two triangles")
        edge_set = {tuple(e) for e in self.edges.tolist()}
        for key in self.boundary:
            if key not in edge_set:
                raise NonconformingMeshError(f"marked edge {key} is not a mesh edge")
        boundary_edges = {tuple(e) for e, c in zip(self.edges.tolist(), self.edge_counts) if c == 1}
        marked = set(self.boundary)
        if boundary_edges != marked:
            missing = sorted(boundary_edges - marked)
            interior = sorted(marked - boundary_edges)
            if missing:
                raise NonconformingMeshError(f"boundary edge {missing[0]} carries no marker")
            raise NonconformingMeshError(f"marked edge {interior[0]} is not on the boundary")
        for key, m in self.boundary.items():
            if m not in (DIRICHLET, NEUMANN):
                raise MeshError(f"unknown marker {m!r} on edge {key}")
        # every vertex on a boundary edge must close up into loops
        deg = np.bincount(np.array(list(boundary_edges), dtype=np.int64).ravel(),
                          minlength=self.nv) if boundary_edges else np.zeros(self.nv)
        if np.any(deg % 2):
            raise NonconformingMeshError("boundary is not a closed curve (hanging node?)")
        return self

    @cached_property
    def dirichlet_vertices(self):
        mask = np.zeros(self.nv, dtype=bool)
        for (a, b), m in self.boundary.items():
            if m == DIRICHLET:
                mask[[a, b]] = True
        return mask

    @cached_property
    def dirichlet_edges(self):
        return self.edge_markers == DIRICHLET

    @cached_property
    def jacobians(self):
        """Affine map data for all elements: (B, b) with B of shape (nt, 2, 2)."""
        p = self.vertices[self.triangles]
        B = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
        return B, p[:, 0].copy()

    def locate(self, points, tol=1e-12):
        """Element id containing each point (first match), -1 if outside."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        B, b = self.jacobians
        Binv = np.linalg.inv(B)
        ref = np.einsum("eij,pej->pei", Binv, pts[:, None, :] - b[None])
        lam = np.concatenate([1 - ref.sum(-1, keepdims=True), ref], axis=-1)
        inside = np.all(lam >= -tol, axis=-1)
        found = inside.any(axis=1)
        return np.where(found, inside.argmax(axis=1), -1)

    def __eq__(self, other):
        return (isinstance(other, Mesh)
                and np.array_equal(self.vertices, other.vertices)
                and np.array_equal(self.triangles, other.triangles)
                and self.boundary == other.boundary)

    __hash__ = None


@dataclass(frozen=True)
class AffineMap:
    """x = B @ xhat + b, mapping the reference triangle onto an element."""

    B: np.ndarray
    b: np.ndarray

    @cached_property
    def det(self):
        return float(np.linalg.det(self.B))

    @cached_property
    def Binv(self):
        return np.linalg.inv(self.B)

    def __call__(self, xhat):
        return np.asarray(xhat) @ self.B.T + self.b

    def inverse(self, x):
        return (np.asarray(x) - self.b) @ self.Binv.T


def affine_map(m: Mesh, t: int) -> AffineMap:
    p = m.vertices[m.triangles[t]]
    B = np.column_stack([p[1] - p[0], p[2] - p[0]])
    d = B[0, 0] * B[1, 1] - B[0, 1] * B[1, 0]
    scale = max(np.abs(B).max(), 1e-300) ** 2
    if abs(d) <= 1e-14 * scale:
        raise DegenerateElementError(f"triangle {t} is degenerate")
    return AffineMap(B, p[0].copy())


def generate_unit_square(n: int, dirichlet_sides=SIDES) -> Mesh:
    """Structured mesh of [0,1]^2, each cell cut from lower-left to upper-right."""
    if n < 1:
        raise ValueError("n must be >= 1")
    dirichlet_sides = set(dirichlet_sides)
    unknown = dirichlet_sides.difference(SIDES)
    if unknown:
        raise ValueError(f"unknown side(s): {sorted(unknown)}")
    s = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(s, s)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)  # idx[j, i] -> (x_i, y_j)
    v00 = idx[:-1, :-1].ravel()
    v10 = idx[:-1, 1:].ravel()
    v01 = idx[1:, :-1].ravel()
    v11 = idx[1:, 1:].ravel()
    tri = np.empty((2 * n * n, 3), dtype=np.int64)
    tri[0::2] = np.column_stack([v00, v10, v11])
    tri[1::2] = np.column_stack([v00, v11, v01])

    def mark(side):
        return DIRICHLET if side in dirichlet_sides else NEUMANN

    boundary = {}
    for i in range(n):
        boundary[(idx[0, i], idx[0, i + 1])] = mark("bottom")
        boundary[(idx[n, i], idx[n, i + 1])] = mark("top")
        boundary[(idx[i, 0], idx[i + 1, 0])] = mark("left")
        boundary[(idx[i, n], idx[i + 1, n])] = mark("right")
    return Mesh(vertices, tri, boundary)


def refine_uniform(m: Mesh) -> Mesh:
    """Red refinement: split every triangle into four through edge midpoints."""
    mid = m.nv + np.arange(m.ne)
    vertices = np.vstack([m.vertices, m.edge_midpoints])
    te = mid[m.triangle_edges]  # te[:, i] is the midpoint of local edge (i, i+1)
    a, b, c = m.triangles.T
    mab, mbc, mca = te.T
    tri = np.empty((4 * m.nt, 3), dtype=np.int64)
    tri[0::4] = np.column_stack([a, mab, mca])
    tri[1::4] = np.column_stack([mab, b, mbc])
    tri[2::4] = np.column_stack([mca, mbc, c])
    tri[3::4] = np.column_stack([mab, mbc, mca])
    index = {tuple(e): i for i, e in enumerate(m.edges.tolist())}
    boundary = {}
    for (p, q), marker in m.boundary.items():
        k = mid[index[(p, q)]]
        boundary[(p, k)] = marker
        boundary[(k, q)] = marker
    return Mesh(vertices, tri, boundary)


def save_mesh(m: Mesh, path) -> None:
    lines = [f"{m.nv} {m.nt} {len(m.boundary)}"]
    lines += [f"{i + 1} {x:.17g} {y:.17g}" for i, (x, y) in enumerate(m.vertices.tolist())]
    lines += [f"{i + 1} {a + 1} {b + 1} {c + 1}" for i, (a, b, c) in enumerate(m.triangles.tolist())]
    lines += [f"{a + 1} {b + 1} {mk}" for (a, b), mk in sorted(m.boundary.items())]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _content_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].strip()
            if text:
                yield lineno, text.split()


def load_mesh(path) -> Mesh:
    """Read a mesh file; clockwise triangles are reoriented."""
    rows = list(_content_lines(path))
    if not rows:
        raise MeshFormatError("empty mesh file")
    lineno, head = rows[0]
    try:
        nv, nt, nb = (int(s) for s in head)
    except ValueError:
        raise MeshFormatError("header must be 'nv nt nb'", lineno) from None
    if len(rows) - 1 != nv + nt + nb:
        raise MeshFormatError(
            f"expected {nv + nt + nb} records after the header, found {len(rows) - 1}")

    def ints(lineno, fields, count):
        if len(fields) != count:
            raise MeshFormatError(f"expected {count} fields, found {len(fields)}", lineno)
        try:
            return [int(f) for f in fields]
        except ValueError:
            raise MeshFormatError("expected integer ids", lineno) from None

    vid = {}
    coords = []
    for lineno, fields in rows[1:1 + nv]:
        if len(fields) != 3:
            raise MeshFormatError("vertex line must be 'id x y'", lineno)
        try:
            i, x, y = int(fields[0]), float(fields[1]), float(fields[2])
        except ValueError:
            raise MeshFormatError("bad vertex record", lineno) from None
        if i in vid:
            raise MeshFormatError(f"duplicate vertex id {i}", lineno)
        vid[i] = len(coords)
        coords.append((x, y))

    tris = []
    for lineno, fields in rows[1 + nv:1 + nv + nt]:
        _, *vs = ints(lineno, fields, 4)
        for v in vs:
            if v not in vid:
                raise MeshFormatError(f"triangle references nonexistent vertex {v}", lineno)
        tris.append([vid[v] for v in vs])

    boundary = {}
    for lineno, fields in rows[1 + nv + nt:]:
        if len(fields) != 3:
            raise MeshFormatError("boundary line must be 'va vb marker'", lineno)
        a, b = ints(lineno, fields[:2], 2)
        marker = fields[2]
        if marker not in (DIRICHLET, NEUMANN):
            raise MeshFormatError(f"unknown marker {marker!r}", lineno)
        for v in (a, b):
            if v not in vid:
                raise MeshFormatError(f"boundary edge references nonexistent vertex {v}", lineno)
        boundary[(vid[a], vid[b])] = marker

    vertices = np.array(coords, dtype=float).reshape(-1, 2)
    triangles = np.array(tris, dtype=np.int64).reshape(-1, 3)
    cw = _signed_areas(vertices, triangles) < 0
    triangles[cw] = triangles[cw][:, [0, 2, 1]]
    return Mesh(vertices, triangles, boundary).check()
