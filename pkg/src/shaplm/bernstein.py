"""Bivariate Bernstein-Bezier splines over a triangulation.

Each triangle carries the degree-d Bernstein basis
``B_{ijk}(s) = d!/(i!j!k!) b1^i b2^j b3^k`` with ``i+j+k = d`` in the
triangle's barycentric coordinates.  Smoothness across shared edges is a
set of linear relations on the coefficients; restricting the raw
piecewise basis to the null space of those relations yields an
unconstrained basis for the smooth spline space.  The roughness penalty
integrates the squared second derivatives exactly, using the closed form
``int_T b1^a b2^b b3^c dA = 2 A a! b! c! / (a+b+c+2)!``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from .geometry import TriangulationMesh, barycentric, locate_points

# Rank cutoff for the constraint matrix, relative to its largest singular value.
_RANK_TOL = 1e-10


@dataclass(frozen=True)
class SplineBasisSpec:
    """Degree and cross-edge smoothness order of the spline space."""

    degree: int = 5
    smoothness: int = 1

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("degree must be at least 1")
        if not 0 <= self.smoothness < self.degree:
            raise ValueError("smoothness must satisfy 0 <= smoothness < degree")

    @property
    def n_local(self) -> int:
        """Basis functions per triangle."""
        return (self.degree + 1) * (self.degree + 2) // 2


@lru_cache(maxsize=None)
def multi_indices(degree: int) -> tuple[tuple[int, int, int], ...]:
    """All (i, j, k) with i+j+k = degree, descending in i then j.

    This ordering, together with mesh triangle order, fixes the global
    basis numbering: triangle t owns columns [t * n_local, (t+1) * n_local).
    """
    out = []
    for i in range(degree, -1, -1):
        for j in range(degree - i, -1, -1):
            out.append((i, j, degree - i - j))
    return tuple(out)


@lru_cache(maxsize=None)
def _local_pos(degree: int) -> dict:
    return {ijk: c for c, ijk in enumerate(multi_indices(degree))}


@lru_cache(maxsize=None)
def _coeffs(degree: int) -> np.ndarray:
    fd = math.factorial(degree)
    return np.array(
        [fd / (math.factorial(i) * math.factorial(j) * math.factorial(k))
         for i, j, k in multi_indices(degree)]
    )


def _bern_values(bary: np.ndarray, degree: int) -> np.ndarray:
    """Evaluate all degree-d Bernstein polynomials at barycentric rows."""
    bary = np.atleast_2d(bary)
    coef = _coeffs(degree)
    out = np.empty((bary.shape[0], len(coef)))
    for c, (i, j, k) in enumerate(multi_indices(degree)):
        out[:, c] = coef[c] * bary[:, 0] ** i * bary[:, 1] ** j * bary[:, 2] ** k
    return out


def eval_basis(mesh: TriangulationMesh, spec: SplineBasisSpec, points) -> np.ndarray:
    """Evaluate the raw piecewise basis at ``points``.

    Returns an (m, n_triangles * n_local) matrix; each row is supported on
    the block of the triangle containing the point.  Points on shared edges
    use the lowest containing triangle index.

    Raises
    ------
    ValueError
        If any point lies outside the triangulation.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    tri_of = locate_points(mesh, pts)
    if np.any(tri_of < 0):
        bad = pts[int(np.argmin(tri_of))]
        raise ValueError(f"point {tuple(bad)} lies outside the triangulation")
    per = spec.n_local
    B = np.zeros((pts.shape[0], mesh.n_triangles * per))
    for t in np.unique(tri_of):
        rows = np.flatnonzero(tri_of == t)
        bary = barycentric(mesh, int(t), pts[rows])
        B[rows[:, None], np.arange(t * per, (t + 1) * per)[None, :]] = _bern_values(
            bary, spec.degree
        )
    return B


def _off_edge_vertex(tri_vertices, edge) -> int:
    for v in tri_vertices:
        if v not in edge:
            return int(v)
    raise ValueError("triangle does not contain a vertex off the edge")


def _global_index(mesh, spec, tri, exponents: dict) -> int:
    """Column of the coefficient with the given per-vertex exponents."""
    verts = mesh.triangles[tri]
    ijk = (exponents[int(verts[0])], exponents[int(verts[1])], exponents[int(verts[2])])
    return tri * spec.n_local + _local_pos(spec.degree)[ijk]


def build_constraints(mesh: TriangulationMesh, spec: SplineBasisSpec) -> np.ndarray:
    """Cross-edge smoothness relations K with K @ alpha = 0 on the smooth space.

    For a shared edge (p, q) between triangles ta < tb with off-edge
    vertices u_a, u_b, write polynomials on both sides in the vertex order
    (u, p, q).  Matching all derivatives up to the smoothness order r gives,
    for each rho <= r and j + k = d - rho,

        c_b[rho, j, k] = sum_{mu+nu+ka = rho} B_{mu nu ka}(beta) c_a[mu, j+nu, k+ka]

    where beta are the barycentric coordinates of u_b with respect to ta
    and B are the degree-rho Bernstein polynomials.  Rows may be linearly
    dependent; the reparameterisation handles rank.
    """
    d, r = spec.degree, spec.smoothness
    rows = []
    M = mesh.n_triangles * spec.n_local
    for ta, tb, (p, q) in mesh.shared_edges:
        va = mesh.triangles[ta]
        vb = mesh.triangles[tb]
        ua = _off_edge_vertex(va, (p, q))
        ub = _off_edge_vertex(vb, (p, q))
        bary = barycentric(mesh, ta, mesh.vertices[ub])
        pos = {int(v): c for c, v in enumerate(va)}
        beta = (bary[pos[ua]], bary[pos[p]], bary[pos[q]])
        for rho in range(r + 1):
            fr = math.factorial(rho)
            for j in range(d - rho, -1, -1):
                k = d - rho - j
                row = np.zeros(M)
                row[_global_index(mesh, spec, tb, {ub: rho, p: j, q: k})] = 1.0
                for mu, nu, ka in multi_indices(rho):
                    w = (
                        fr
                        / (math.factorial(mu) * math.factorial(nu) * math.factorial(ka))
                        * beta[0] ** mu
                        * beta[1] ** nu
                        * beta[2] ** ka
                    )
                    row[_global_index(mesh, spec, ta, {ua: mu, p: j + nu, q: k + ka})] -= w
                rows.append(row)
    if not rows:
        return np.zeros((0, M))
    return np.asarray(rows)


def _bary_gradients(mesh, tri) -> np.ndarray:
    """(3, 2) array of Cartesian gradients of the barycentric coordinates."""
    v = mesh.vertices[mesh.triangles[tri]]
    det = (v[1, 1] - v[2, 1]) * (v[0, 0] - v[2, 0]) + (v[2, 0] - v[1, 0]) * (
        v[0, 1] - v[2, 1]
    )
    g = np.empty((3, 2))
    for l in range(3):
        a, b = v[(l + 1) % 3], v[(l + 2) % 3]
        g[l, 0] = (a[1] - b[1]) / det
        g[l, 1] = (b[0] - a[0]) / det
    return g


def _diff_map(degree: int, direction: np.ndarray) -> np.ndarray:
    """Coefficient map of one directional derivative, degree d -> d-1.

    ``direction`` holds the derivatives of (b1, b2, b3) along the Cartesian
    direction; it sums to zero.
    """
    lo = multi_indices(degree - 1)
    pos = _local_pos(degree)
    out = np.zeros((len(lo), len(pos)))
    for row, (i, j, k) in enumerate(lo):
        out[row, pos[(i + 1, j, k)]] += degree * direction[0]
        out[row, pos[(i, j + 1, k)]] += degree * direction[1]
        out[row, pos[(i, j, k + 1)]] += degree * direction[2]
    return out


def _gram(degree: int, area: float) -> np.ndarray:
    """Exact Gram matrix of the degree-d Bernstein basis on one triangle."""
    mi = multi_indices(degree)
    norm = _coeffs(degree)
    denom = math.factorial(2 * degree + 2)
    G = np.empty((len(mi), len(mi)))
    for a, (i1, j1, k1) in enumerate(mi):
        for b, (i2, j2, k2) in enumerate(mi):
            G[a, b] = (
                norm[a]
                * norm[b]
                * 2.0
                * area
                * math.factorial(i1 + i2)
                * math.factorial(j1 + j2)
                * math.factorial(k1 + k2)
                / denom
            )
    return G


def build_energy(mesh: TriangulationMesh, spec: SplineBasisSpec) -> np.ndarray:
    """Roughness penalty P with alpha' P alpha = sum_T int (g_xx^2 + 2 g_xy^2 + g_yy^2)."""
    d = spec.degree
    per = spec.n_local
    M = mesh.n_triangles * per
    P = np.zeros((M, M))
    if d < 2:
        return P
    for t in range(mesh.n_triangles):
        g = _bary_gradients(mesh, t)
        area = abs(_area(mesh, t))
        dx_hi, dy_hi = _diff_map(d, g[:, 0]), _diff_map(d, g[:, 1])
        dx_lo, dy_lo = _diff_map(d - 1, g[:, 0]), _diff_map(d - 1, g[:, 1])
        dxx = dx_lo @ dx_hi
        dxy = dx_lo @ dy_hi
        dyy = dy_lo @ dy_hi
        G = _gram(d - 2, area)
        loc = dxx.T @ G @ dxx + 2.0 * dxy.T @ G @ dxy + dyy.T @ G @ dyy
        sl = slice(t * per, (t + 1) * per)
        P[sl, sl] = 0.5 * (loc + loc.T)
    return P


def _area(mesh, tri) -> float:
    v = mesh.vertices[mesh.triangles[tri]]
    return 0.5 * (
        (v[1, 0] - v[0, 0]) * (v[2, 1] - v[0, 1])
        - (v[2, 0] - v[0, 0]) * (v[1, 1] - v[0, 1])
    )


def reparameterize(B: np.ndarray, K: np.ndarray, P: np.ndarray):
    """Restrict the raw basis to the null space of the constraints.

    A QR decomposition of K' yields an orthonormal basis Q2 of null(K);
    returns (B @ Q2, Q2, Q2' P Q2).  The rank of K is the number of
    diagonal entries of the pivoted R above ``1e-10 * sigma_max(K)``.
    """
    M = B.shape[1]
    if K.shape[0] == 0 or not np.any(K):
        Q2 = np.eye(M)
        return B.copy(), Q2, 0.5 * (P + P.T)
    sigma_max = np.linalg.norm(K, 2)
    Q, R, _ = scipy.linalg.qr(K.T, mode="full", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > _RANK_TOL * sigma_max))
    Q2 = Q[:, rank:]
    D = Q2.T @ P @ Q2
    return B @ Q2, Q2, 0.5 * (D + D.T)


@dataclass
class SplineSystem:
    """Everything the solver needs about the smooth spline space at the data."""

    mesh: TriangulationMesh
    spec: SplineBasisSpec
    B: np.ndarray
    K: np.ndarray
    P: np.ndarray
    Btilde: np.ndarray
    Q2: np.ndarray
    D: np.ndarray

    @property
    def n_basis(self) -> int:
        return self.Btilde.shape[1]


def build_spline_system(mesh, spec, points) -> SplineSystem:
    B = eval_basis(mesh, spec, points)
    K = build_constraints(mesh, spec)
    P = build_energy(mesh, spec)
    Btilde, Q2, D = reparameterize(B, K, P)
    return SplineSystem(mesh, spec, B, K, P, Btilde, Q2, D)


def eval_spline(mesh, spec, alpha, points) -> np.ndarray:
    """Evaluate the piecewise polynomial with raw coefficients ``alpha``."""
    return eval_basis(mesh, spec, points) @ np.asarray(alpha, dtype=np.float64)


def eval_on_triangle(mesh, spec, alpha, tri: int, points, grad: bool = False):
    """Evaluate the polynomial piece of one triangle, ignoring point location.

    With ``grad=True`` also returns the (m, 2) Cartesian gradient.  Used to
    compare the two sides of a shared edge.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    per = spec.n_local
    local = np.asarray(alpha, dtype=np.float64)[tri * per : (tri + 1) * per]
    bary = barycentric(mesh, tri, pts)
    vals = _bern_values(bary, spec.degree) @ local
    if not grad:
        return vals
    g = _bary_gradients(mesh, tri)
    lower = _bern_values(bary, spec.degree - 1)
    gx = lower @ (_diff_map(spec.degree, g[:, 0]) @ local)
    gy = lower @ (_diff_map(spec.degree, g[:, 1]) @ local)
    return vals, np.column_stack((gx, gy))


def interpolate(mesh, spec, fn) -> np.ndarray:
    """Raw coefficients matching ``fn`` at every triangle's domain points.

    Exact (and automatically smooth) when ``fn`` is a global polynomial of
    degree at most the basis degree; for other functions the result is the
    per-triangle collocation interpolant and need not be continuous.
    """
    d = spec.degree
    mi = np.array(multi_indices(d), dtype=np.float64)
    A = _bern_values(mi / d, d)
    A_inv = np.linalg.inv(A)
    alpha = np.empty(mesh.n_triangles * spec.n_local)
    for t in range(mesh.n_triangles):
        v = mesh.vertices[mesh.triangles[t]]
        pts = mi @ v / d
        alpha[t * spec.n_local : (t + 1) * spec.n_local] = A_inv @ np.asarray(fn(pts))
    return alpha


@dataclass
class SplineFunction:
    """A fitted smooth surface, callable at new points inside the mesh."""

    mesh: TriangulationMesh
    spec: SplineBasisSpec
    alpha: np.ndarray

    def __call__(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        single = pts.ndim == 1
        vals = eval_spline(self.mesh, self.spec, self.alpha, np.atleast_2d(pts))
        return float(vals[0]) if single else vals
