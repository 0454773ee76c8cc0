"""Triangle meshes for the plate geometries and their element measures.

Polygonal domains are meshed on structured tensor grids. Curved domains are
meshed by placing a hexagonal point lattice inside a sampled boundary,
smoothing it, and triangulating with Delaunay.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.spatial import Delaunay, cKDTree

log = logging.getLogger(__name__)


class MeshError(ValueError):
    """Invalid mesh input or a mesh that fails validation."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MeshWarning(UserWarning):
    pass


def _signed_areas(vertices, triangles):
    p0 = vertices[triangles[:, 0]]
    p1 = vertices[triangles[:, 1]]
    p2 = vertices[triangles[:, 2]]
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))


def _edge_table(triangles):
    """Unique sorted edges and, per triangle, the edge opposite each local vertex."""
    local = np.stack([triangles[:, [1, 2]], triangles[:, [2, 0]], triangles[:, [0, 1]]], axis=1)
    flat = np.sort(local.reshape(-1, 2), axis=1)
    edges, inverse, counts = np.unique(flat, axis=0, return_inverse=True, return_counts=True)
    return edges, inverse.reshape(-1, 3), counts


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Conforming triangle mesh with classified boundary.

    Arrays are made read-only on construction. Local edge ``k`` of a triangle
    is the edge opposite its local vertex ``k``.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float).reshape(-1, 2)
        t = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        b = np.sort(np.array(self.boundary_edges, dtype=np.int64).reshape(-1, 2), axis=1)
        b = b[np.lexsort((b[:, 1], b[:, 0]))]
        for arr in (v, t, b):
            arr.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "boundary_edges", b)
        self.validate()

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_edges)

    @cached_property
    def _edges(self):
        return _edge_table(self.triangles)

    @property
    def edges(self) -> np.ndarray:
        return self._edges[0]

    @property
    def triangle_edges(self) -> np.ndarray:
        return self._edges[1]

    @cached_property
    def boundary_edge_mask(self) -> np.ndarray:
        return self._edges[2] == 1

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def validate(self):
        if self.n_vertices < 3 or self.n_triangles < 1:
            raise MeshError("mesh needs at least 3 vertices and 1 triangle")
        if self.triangles.min() < 0 or self.triangles.max() >= self.n_vertices:
            raise MeshError("triangle references a vertex index out of range")
        if np.any(_signed_areas(self.vertices, self.triangles) <= 0):
            raise MeshError("triangles must have positive signed area")
        edges, _, counts = _edge_table(self.triangles)
        if np.any(counts > 2):
            raise MeshError("non-conforming mesh: an edge is shared by more than 2 triangles")
        derived = edges[counts == 1]
        if len(derived) != len(self.boundary_edges) or np.any(derived != self.boundary_edges):
            raise MeshError("boundary_edges do not match the edges with a single triangle")

    def scaled(self, factor) -> "TriMesh":
        return TriMesh(self.vertices * factor, self.triangles, self.boundary_edges)

    def translated(self, shift) -> "TriMesh":
        return TriMesh(self.vertices + np.asarray(shift, dtype=float), self.triangles,
                       self.boundary_edges)

    def min_angle(self) -> float:
        """Smallest interior angle over all triangles, in degrees."""
        p = self.vertices[self.triangles]
        angles = []
        for k in range(3):
            a = p[:, (k + 1) % 3] - p[:, k]
            b = p[:, (k + 2) % 3] - p[:, k]
            cos = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles.append(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))
        return float(np.min(angles))

    def max_edge_length(self) -> float:
        e = self.edges
        return float(np.max(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)))


@dataclass(frozen=True)
class ElementMeasure:
    areas: np.ndarray
    total_area: float


def element_measures(mesh: TriMesh) -> ElementMeasure:
    areas = _signed_areas(mesh.vertices, mesh.triangles)
    areas.setflags(write=False)
    return ElementMeasure(areas=areas, total_area=float(np.sum(areas)))


def boundary_from_triangles(triangles) -> np.ndarray:
    edges, _, counts = _edge_table(np.asarray(triangles, dtype=np.int64))
    return edges[counts == 1]


def mesh_from_triangles(vertices, triangles) -> TriMesh:
    """Build a mesh, dropping unused vertices and deriving the boundary."""
    triangles = np.asarray(triangles, dtype=np.int64)
    used, remap = np.unique(triangles, return_inverse=True)
    triangles = remap.reshape(-1, 3)
    vertices = np.asarray(vertices, dtype=float)[used]
    return TriMesh(vertices, triangles, boundary_from_triangles(triangles))


def _positive(**kwargs):
    for name, value in kwargs.items():
        if not value > 0:
            raise MeshError(f"{name} must be positive, got {value}")


def _grid_triangles(nx, ny, keep=None, pattern="alternating"):
    """Split an (nx, ny) cell grid into triangles; vertex (i, j) has index j*(nx+1)+i."""
    tris = []
    for j in range(ny):
        for i in range(nx):
            if keep is not None and not keep[i, j]:
                continue
            a = j * (nx + 1) + i
            b, c, d = a + 1, a + nx + 2, a + nx + 1
            if pattern == "uniform" or (i + j) % 2 == 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    return np.array(tris, dtype=np.int64)


def _divisions(breaks, target_h):
    pts = [breaks[0]]
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        n = max(1, math.ceil((hi - lo) / target_h - 1e-9))
        pts.extend(lo + (hi - lo) * np.arange(1, n + 1) / n)
    pts[-1] = breaks[-1]
    return np.array(pts)


def generate_rectangle(width, height, target_h, pattern="alternating") -> TriMesh:
    """Structured triangulation of ``[0, width] x [0, height]``.

    ``pattern="alternating"`` flips the cell diagonal in a checkerboard so the
    mesh is symmetric about both mid-lines; ``"uniform"`` uses one direction.
    """
    _positive(width=width, height=height, target_h=target_h)
    xs = _divisions([0.0, float(width)], target_h)
    ys = _divisions([0.0, float(height)], target_h)
    X, Y = np.meshgrid(xs, ys)
    verts = np.column_stack([X.ravel(), Y.ravel()])
    tris = _grid_triangles(len(xs) - 1, len(ys) - 1, pattern=pattern)
    return TriMesh(verts, tris, boundary_from_triangles(tris))


def generate_rectangle_with_hole(outer_w, outer_h, hole_w, hole_h, target_h) -> TriMesh:
    """Rectangle ``[0, outer_w] x [0, outer_h]`` minus a centred rectangular hole."""
    _positive(outer_w=outer_w, outer_h=outer_h, hole_w=hole_w, hole_h=hole_h, target_h=target_h)
    if not (hole_w < outer_w and hole_h < outer_h):
        raise MeshError("hole must lie strictly inside the rectangle")
    x0, y0 = (outer_w - hole_w) / 2, (outer_h - hole_h) / 2
    xs = _divisions([0.0, x0, x0 + hole_w, float(outer_w)], target_h)
    ys = _divisions([0.0, y0, y0 + hole_h, float(outer_h)], target_h)
    cx = 0.5 * (xs[:-1] + xs[1:])
    cy = 0.5 * (ys[:-1] + ys[1:])
    in_hole = ((cx[:, None] > x0) & (cx[:, None] < x0 + hole_w)
               & (cy[None, :] > y0) & (cy[None, :] < y0 + hole_h))
    X, Y = np.meshgrid(xs, ys)
    tris = _grid_triangles(len(xs) - 1, len(ys) - 1, keep=~in_hole)
    return mesh_from_triangles(np.column_stack([X.ravel(), Y.ravel()]), tris)


def _resample_closed(curve, target_h):
    """Resample a densely sampled closed curve at near-uniform arc length <= target_h."""
    seg = np.linalg.norm(np.diff(np.vstack([curve, curve[:1]]), axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    n = max(8, math.ceil(s[-1] / target_h))
    t = np.arange(n) * s[-1] / n
    closed = np.vstack([curve, curve[:1]])
    return np.column_stack([np.interp(t, s, closed[:, 0]), np.interp(t, s, closed[:, 1])])


def _mesh_curved(loop, inside: Callable[[np.ndarray], np.ndarray], dense_boundary, target_h,
                 smoothing_passes=12) -> TriMesh:
    """Mesh the region enclosed by one closed boundary loop (vertex order CCW).

    Boundary points are kept fixed. Interior points start on a hexagonal
    lattice and are relaxed by Laplacian smoothing between re-triangulations.
    """
    h = float(target_h)
    nb = len(loop)
    tree = cKDTree(dense_boundary)
    lo, hi = dense_boundary.min(axis=0), dense_boundary.max(axis=0)
    dy = h * math.sqrt(3) / 2
    rows = []
    for j, y in enumerate(np.arange(lo[1] + dy / 2, hi[1], dy)):
        xs = np.arange(lo[0] + (h / 2 if j % 2 else 0.0), hi[0], h)
        rows.append(np.column_stack([xs, np.full_like(xs, y)]))
    interior = np.vstack(rows) if rows else np.empty((0, 2))
    if len(interior):
        interior = interior[inside(interior)]
        interior = interior[tree.query(interior)[0] > 0.6 * h]

    def triangulate(points):
        tri = Delaunay(points).simplices.astype(np.int64)
        cent = points[tri].mean(axis=1)
        tri = tri[inside(cent)]
        area = _signed_areas(points, tri)
        tri[area < 0] = tri[area < 0][:, [0, 2, 1]]
        return tri[np.abs(area) > 1e-12 * h * h]

    for _ in range(smoothing_passes):
        if not len(interior):
            break
        points = np.vstack([loop, interior])
        tri = triangulate(points)
        e = np.vstack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
        e = np.unique(np.sort(e, axis=1), axis=0)
        acc = np.zeros_like(points)
        deg = np.zeros(len(points))
        np.add.at(acc, e[:, 0], points[e[:, 1]])
        np.add.at(acc, e[:, 1], points[e[:, 0]])
        np.add.at(deg, e[:, 0], 1)
        np.add.at(deg, e[:, 1], 1)
        moved = acc[nb:] / np.maximum(deg[nb:, None], 1)
        ok = inside(moved) & (tree.query(moved)[0] > 0.3 * h) & (deg[nb:] > 0)
        interior = np.where(ok[:, None], moved, interior)
        interior = interior[deg[nb:] > 0]

    points = np.vstack([loop, interior])
    tri = triangulate(points)
    expected = np.sort(np.column_stack([np.arange(nb), (np.arange(nb) + 1) % nb]), axis=1)
    got = boundary_from_triangles(tri)
    expected = expected[np.lexsort((expected[:, 1], expected[:, 0]))]
    if len(got) != len(expected) or np.any(got != expected):
        raise MeshError("triangulation did not recover the boundary; try a smaller target_h")
    return mesh_from_triangles(points, tri)


def generate_ellipse(a, b, target_h) -> TriMesh:
    """Quasi-uniform mesh of the ellipse with semi-axes ``a`` (x) and ``b`` (y)."""
    _positive(a=a, b=b, target_h=target_h)
    theta = np.linspace(0.0, 2 * np.pi, 4096, endpoint=False)
    dense = np.column_stack([a * np.cos(theta), b * np.sin(theta)])
    if a == b:
        n = max(8, math.ceil(2 * np.pi * a / target_h))
        phi = 2 * np.pi * np.arange(n) / n
        loop = np.column_stack([a * np.cos(phi), a * np.sin(phi)])
    else:
        loop = _resample_closed(dense, target_h)
        # pull the resampled chords back onto the curve
        ang = np.arctan2(loop[:, 1] / b, loop[:, 0] / a)
        loop = np.column_stack([a * np.cos(ang), b * np.sin(ang)])

    def inside(p):
        return (p[:, 0] / a) ** 2 + (p[:, 1] / b) ** 2 < 1.0

    return _mesh_curved(loop, inside, dense, target_h)


def generate_disk(radius, target_h) -> TriMesh:
    """Mesh of the disk of given radius centred at the origin."""
    _positive(radius=radius, target_h=target_h)
    return generate_ellipse(radius, radius, target_h)


def lune_area(r_outer, r_inner, offset) -> float:
    """Area of disk(0, r_outer) minus disk((offset, 0), r_inner)."""
    R, r, d = float(r_outer), float(r_inner), float(offset)
    if d >= R + r:
        return math.pi * R * R
    if d <= abs(R - r):
        return max(0.0, math.pi * (R * R - r * r)) if r < R else 0.0
    lens = (r * r * math.acos((d * d + r * r - R * R) / (2 * d * r))
            + R * R * math.acos((d * d + R * R - r * r) / (2 * d * R))
            - 0.5 * math.sqrt((-d + r + R) * (d + r - R) * (d - r + R) * (d + r + R)))
    return math.pi * R * R - lens


def generate_crescent(r_outer, r_inner, offset, target_h) -> TriMesh:
    """Mesh of disk(0, r_outer) minus disk((offset, 0), r_inner).

    The two circles must cross so the difference is a single crescent.
    """
    _positive(r_outer=r_outer, r_inner=r_inner, offset=offset, target_h=target_h)
    R, r, d, h = float(r_outer), float(r_inner), float(offset), float(target_h)
    if d >= R + r:
        raise MeshError("inner disk lies outside the outer disk; nothing is removed")
    if d <= abs(R - r):
        raise MeshError("circles do not cross: the difference is empty or not a crescent")
    x0 = (d * d + R * R - r * r) / (2 * d)
    y0 = math.sqrt(R * R - x0 * x0)
    t0 = math.atan2(y0, x0)
    p0 = math.atan2(y0, x0 - d)
    n_out = max(4, math.ceil(R * (2 * np.pi - 2 * t0) / h))
    n_in = max(4, math.ceil(r * (2 * np.pi - 2 * p0) / h))
    t = t0 + (2 * np.pi - 2 * t0) * np.arange(n_out) / n_out
    outer = np.column_stack([R * np.cos(t), R * np.sin(t)])
    p = (2 * np.pi - p0) - (2 * np.pi - 2 * p0) * np.arange(n_in) / n_in
    inner = np.column_stack([d + r * np.cos(p), r * np.sin(p)])
    loop = np.vstack([outer, inner])
    ts = np.linspace(t0, 2 * np.pi - t0, 2048)
    ps = np.linspace(p0, 2 * np.pi - p0, 2048)
    dense = np.vstack([np.column_stack([R * np.cos(ts), R * np.sin(ts)]),
                       np.column_stack([d + r * np.cos(ps), r * np.sin(ps)])])

    def inside(q):
        return ((q[:, 0] ** 2 + q[:, 1] ** 2 < R * R)
                & ((q[:, 0] - d) ** 2 + q[:, 1] ** 2 > r * r))

    return _mesh_curved(loop, inside, dense, h)


def save_mesh(mesh: TriMesh, path):
    with open(path, "w") as fh:
        fh.write("# plateopt mesh: nv nt nb, vertices, triangles, boundary edges\n")
        fh.write(f"{mesh.n_vertices} {mesh.n_triangles} {len(mesh.boundary_edges)}\n")
        for x, y in mesh.vertices.tolist():
            fh.write(f"{x!r} {y!r}\n")
        for i, j, k in mesh.triangles.tolist():
            fh.write(f"{i} {j} {k}\n")
        for i, j in mesh.boundary_edges.tolist():
            fh.write(f"{i} {j}\n")


def load_mesh(path) -> TriMesh:
    """Read the text mesh format written by :func:`save_mesh`.

    Inverted triangles are reoriented with a warning. Errors carry the
    1-based line number of the offending record.
    """
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].split()
            if text:
                rows.append((lineno, text))
    if not rows:
        raise MeshError("empty mesh file")

    def numbers(idx, kind, count):
        lineno, text = rows[idx]
        if len(text) != count:
            raise MeshError(f"expected {count} values, got {len(text)}", lineno)
        try:
            return [kind(x) for x in text]
        except ValueError:
            raise MeshError(f"cannot parse {' '.join(text)!r}", lineno) from None

    nv, nt, nb = numbers(0, int, 3)
    if len(rows) != 1 + nv + nt + nb:
        raise MeshError(f"expected {nv + nt + nb} records after the header, found {len(rows) - 1}")
    verts = np.array([numbers(1 + i, float, 2) for i in range(nv)]).reshape(-1, 2)
    tris = np.array([numbers(1 + nv + i, int, 3) for i in range(nt)], dtype=np.int64).reshape(-1, 3)
    bnd = np.array([numbers(1 + nv + nt + i, int, 2) for i in range(nb)], dtype=np.int64).reshape(-1, 2)
    for k, tri in enumerate(tris):
        if tri.min() < 0 or tri.max() >= nv:
            raise MeshError("triangle references a vertex index out of range", rows[1 + nv + k][0])
    for k, edge in enumerate(bnd):
        if edge.min() < 0 or edge.max() >= nv:
            raise MeshError("boundary edge references a vertex index out of range",
                            rows[1 + nv + nt + k][0])
    area = _signed_areas(verts, tris)
    for k in np.flatnonzero(area == 0):
        raise MeshError("degenerate triangle with zero area", rows[1 + nv + k][0])
    flipped = area < 0
    if flipped.any():
        warnings.warn(f"reoriented {int(flipped.sum())} inverted triangle(s)", MeshWarning,
                      stacklevel=2)
        tris[flipped] = tris[flipped][:, [0, 2, 1]]
    return TriMesh(verts, tris, bnd)
