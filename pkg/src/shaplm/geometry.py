"""Triangulated planar domains: meshes, barycentric coordinates, point location."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay as _QhullDelaunay
from scipy.spatial import QhullError

# Barycentric slack used when deciding whether a point lies inside a triangle.
INSIDE_TOL = 1e-10

# Meshes with at most this many triangles are located by a linear scan.
_BRUTE_FORCE_LIMIT = 256


@dataclass
class TriangulationMesh:
    """A conforming triangulation of a planar region.

    Attributes
    ----------
    vertices : (n_vertices, 2) float array
    triangles : (n_triangles, 3) int array
        Vertex indices, kept in the order they were supplied.
    shared_edges : list of (tri_a, tri_b, (v_i, v_j))
        Interior edges, with ``tri_a < tri_b`` and ``v_i < v_j``.
    mesh_size : float
        Length of the longest edge.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    shared_edges: list = field(default_factory=list)
    mesh_size: float = 0.0
    _grid: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]


def _signed_area2(v: np.ndarray) -> float:
    """Twice the signed area of a triangle given as a (3, 2) array."""
    return float(
        (v[1, 0] - v[0, 0]) * (v[2, 1] - v[0, 1])
        - (v[2, 0] - v[0, 0]) * (v[1, 1] - v[0, 1])
    )


def make_mesh(vertices, triangles) -> TriangulationMesh:
    """Validate raw arrays and assemble a :class:`TriangulationMesh`.

    Raises
    ------
    ValueError
        On out-of-range indices, repeated vertices within a triangle,
        degenerate (zero area) triangles, or an edge shared by more than
        two triangles.
    """
    vertices = np.ascontiguousarray(vertices, dtype=np.float64)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise ValueError("vertices must be an (n, 2) array")
    if not np.all(np.isfinite(vertices)):
        raise ValueError("vertices must be finite")
    if triangles.ndim != 2 or triangles.shape[1] != 3:
        raise ValueError("triangles must be an (m, 3) array")
    n = vertices.shape[0]
    if triangles.size and (triangles.min() < 0 or triangles.max() >= n):
        raise ValueError("triangle vertex index out of range")

    extent = 1.0
    if n:
        span = vertices.max(axis=0) - vertices.min(axis=0)
        extent = max(1.0, float(span.max()))
    edge_count: dict[tuple[int, int], list[int]] = {}
    mesh_size = 0.0
    for t, tri in enumerate(triangles):
        a, b, c = (int(tri[0]), int(tri[1]), int(tri[2]))
        if a == b or b == c or a == c:
            raise ValueError(f"triangle {t} repeats a vertex")
        if abs(_signed_area2(vertices[tri])) <= 1e-14 * extent * extent:
            raise ValueError(f"triangle {t} is degenerate")
        for u, w in ((a, b), (b, c), (a, c)):
            key = (u, w) if u < w else (w, u)
            edge_count.setdefault(key, []).append(t)
            mesh_size = max(mesh_size, float(np.hypot(*(vertices[u] - vertices[w]))))

    shared = []
    for (u, w), tris in edge_count.items():
        if len(tris) > 2:
            raise ValueError(f"edge {(u, w)} is shared by more than two triangles")
        if len(tris) == 2:
            ta, tb = sorted(tris)
            shared.append((ta, tb, (u, w)))
    shared.sort()
    return TriangulationMesh(vertices, triangles, shared, mesh_size)


def barycentric(mesh: TriangulationMesh, tri: int, points) -> np.ndarray:
    """Barycentric coordinates of ``points`` with respect to triangle ``tri``.

    Returns a (3,) array for a single point or an (m, 3) array for a batch.
    Coordinates follow the stored vertex order of the triangle and sum to one.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    v = mesh.vertices[mesh.triangles[tri]]
    mat = np.column_stack((v[1] - v[0], v[2] - v[0]))
    sol = np.linalg.solve(mat, (pts - v[0]).T)
    out = np.empty((pts.shape[0], 3))
    out[:, 1] = sol[0]
    out[:, 2] = sol[1]
    out[:, 0] = 1.0 - sol[0] - sol[1]
    return out[0] if single else out


def _build_grid(mesh: TriangulationMesh):
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    span = np.maximum(hi - lo, 1e-30)
    ncell = max(1, math.ceil(math.sqrt(mesh.n_triangles)))
    cells: dict[tuple[int, int], list[int]] = {}
    pad = 1e-9 * float(span.max())
    for t in range(mesh.n_triangles):
        v = mesh.vertices[mesh.triangles[t]]
        cx0, cy0 = np.floor((v.min(axis=0) - pad - lo) / span * ncell).astype(int)
        cx1, cy1 = np.floor((v.max(axis=0) + pad - lo) / span * ncell).astype(int)
        for cx in range(max(cx0, 0), min(cx1, ncell - 1) + 1):
            for cy in range(max(cy0, 0), min(cy1, ncell - 1) + 1):
                cells.setdefault((cx, cy), []).append(t)
    return lo, span, ncell, cells


def locate_points(mesh: TriangulationMesh, points) -> np.ndarray:
    """Containing triangle index for each point, -1 where no triangle contains it.

    Points on a shared edge or vertex resolve to the lowest triangle index.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    m = pts.shape[0]
    out = np.full(m, -1, dtype=np.int64)

    if mesh.n_triangles <= _BRUTE_FORCE_LIMIT:
        todo = np.arange(m)
        for t in range(mesh.n_triangles):
            if todo.size == 0:
                break
            b = barycentric(mesh, t, pts[todo])
            hit = b.min(axis=1) >= -INSIDE_TOL
            out[todo[hit]] = t
            todo = todo[~hit]
        return out

    if mesh._grid is None:
        mesh._grid = _build_grid(mesh)
    lo, span, ncell, cells = mesh._grid
    cell_ids = np.floor((pts - lo) / span * ncell).astype(int)
    np.clip(cell_ids, 0, ncell - 1, out=cell_ids)
    keys = cell_ids[:, 0] * ncell + cell_ids[:, 1]
    for key in np.unique(keys):
        rows = np.flatnonzero(keys == key)
        cands = cells.get((int(key) // ncell, int(key) % ncell), [])
        todo = rows
        for t in sorted(cands):
            if todo.size == 0:
                break
            b = barycentric(mesh, t, pts[todo])
            hit = b.min(axis=1) >= -INSIDE_TOL
            out[todo[hit]] = t
            todo = todo[~hit]
    return out


def locate_point(mesh: TriangulationMesh, point) -> int:
    """Index of the triangle containing ``point``; raises if outside the domain."""
    t = int(locate_points(mesh, np.asarray(point, dtype=np.float64)[None, :])[0])
    if t < 0:
        raise ValueError(f"point {tuple(np.asarray(point))} lies outside the triangulation")
    return t


def delaunay(points) -> TriangulationMesh:
    """Delaunay triangulation of a point set.

    Raises
    ------
    ValueError
        On fewer than three points, duplicate points, or collinear input.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be an (n, 2) array")
    if pts.shape[0] < 3:
        raise ValueError("need at least three points to triangulate")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    if np.unique(pts, axis=0).shape[0] != pts.shape[0]:
        raise ValueError("duplicate points are not allowed")
    try:
        qh = _QhullDelaunay(pts)
    except QhullError as exc:
        raise ValueError(f"degenerate point set (collinear?): {exc}") from exc
    if qh.coplanar.size:
        raise ValueError("triangulation dropped input points")
    return make_mesh(pts, qh.simplices.astype(np.int64))


def mesh_edges(mesh: TriangulationMesh) -> np.ndarray:
    """Unique undirected edges of the mesh as a sorted (m, 2) int array."""
    tri = mesh.triangles
    pairs = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [0, 2]]])
    pairs = np.sort(pairs, axis=1)
    return np.unique(pairs, axis=0)


def mesh_uniform_rect(domain, resolution: int) -> TriangulationMesh:
    """Uniform triangulation of a rectangle.

    ``domain = (xmin, xmax, ymin, ymax)`` is split into ``resolution ** 2``
    squares, each cut along its lower-left to upper-right diagonal.
    """
    xmin, xmax, ymin, ymax = map(float, domain)
    if not (xmax > xmin and ymax > ymin):
        raise ValueError("domain must have positive width and height")
    if resolution < 1:
        raise ValueError("resolution must be at least 1")
    r = int(resolution)
    xs = np.linspace(xmin, xmax, r + 1)
    ys = np.linspace(ymin, ymax, r + 1)
    gx, gy = np.meshgrid(xs, ys)
    vertices = np.column_stack((gx.ravel(), gy.ravel()))
    tris = []
    for iy in range(r):
        for ix in range(r):
            v00 = iy * (r + 1) + ix
            v10 = v00 + 1
            v01 = v00 + (r + 1)
            v11 = v01 + 1
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    return make_mesh(vertices, np.array(tris, dtype=np.int64))


def mesh_to_dict(mesh: TriangulationMesh) -> dict:
    return {
        "vertices": mesh.vertices.tolist(),
        "triangles": mesh.triangles.tolist(),
    }


def mesh_from_dict(obj: dict) -> TriangulationMesh:
    try:
        vertices = obj["vertices"]
        triangles = obj["triangles"]
    except (KeyError, TypeError) as exc:
        raise ValueError("mesh object needs 'vertices' and 'triangles' keys") from exc
    return make_mesh(np.asarray(vertices, dtype=np.float64), np.asarray(triangles))


def load_mesh(path) -> TriangulationMesh:
    """Read a mesh from a JSON file with 'vertices' and 'triangles' keys."""
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON: {exc}") from exc
    return mesh_from_dict(obj)


def save_mesh(mesh: TriangulationMesh, path) -> None:
    with open(path, "w") as fh:
        json.dump(mesh_to_dict(mesh), fh)
