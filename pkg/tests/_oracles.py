"""Independent reference implementations used to validate derived quantities.

Everything here is written from first principles against the mathematical
definitions, deliberately avoiding the code paths under test: dense matrix
algebra instead of tree recursions, quadrature instead of closed-form Gram
assembly, exhaustive enumeration instead of greedy graph algorithms, and a
plain accelerated proximal-gradient loop instead of block coordinate descent.
"""

from __future__ import annotations

import itertools

import numpy as np
from numba import njit

# ---------------------------------------------------------------------------
# geometry


def in_circumcircle(a, b, c, p) -> float:
    """InCircle predicate: positive when p lies strictly inside circle(a, b, c).

    Uses the lifted 3x3 determinant with the triangle normalised to positive
    orientation so the sign convention is unambiguous.
    """

    a, b, c, p = (np.asarray(v, dtype=float) for v in (a, b, c, p))
    u, v = b - a, c - a
    orient = u[0] * v[1] - u[1] * v[0]
    if orient < 0.0:
        b, c = c, b
    rows = []
    for v in (a, b, c):
        d = v - p
        rows.append([d[0], d[1], d[0] ** 2 + d[1] ** 2])
    return float(np.linalg.det(np.array(rows)))


# ---------------------------------------------------------------------------
# graphs and trees


def spanning_trees(n_vertices: int, edges: np.ndarray) -> list[tuple[int, ...]]:
    """All spanning trees of a small graph, as tuples of edge indices."""

    m = len(edges)
    out = []
    for combo in itertools.combinations(range(m), n_vertices - 1):
        parent = list(range(n_vertices))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        ok = True
        for idx in combo:
            i, j = edges[idx]
            ri, rj = find(int(i)), find(int(j))
            if ri == rj:
                ok = False
                break
            parent[ri] = rj
        if ok:
            out.append(combo)
    return out


def min_tree_weight(n_vertices: int, edges: np.ndarray, weights: np.ndarray) -> float:
    trees = spanning_trees(n_vertices, edges)
    return min(float(weights[list(t)].sum()) for t in trees)


def dense_tree_matrix(tree) -> np.ndarray:
    """The fused-difference transform of a spanning tree as a dense matrix.

    One row per tree edge (+1 at the smaller vertex, -1 at the larger) plus a
    final scaled-mean row; this is the defining construction, assembled without
    any of the traversal-order bookkeeping used by the fast implementation.
    """

    n = tree.n_vertices
    rows = np.zeros((n, n))
    for l, (i, j) in enumerate(np.asarray(tree.edges)):
        rows[l, int(i)] = 1.0
        rows[l, int(j)] = -1.0
    rows[n - 1, :] = 1.0 / np.sqrt(n)
    return rows


# ---------------------------------------------------------------------------
# spline energy via refit-to-monomials plus triangle quadrature


def _gauss_triangle(order: int = 20):
    """Quadrature nodes/weights on the reference triangle via a Duffy map."""

    x, w = np.polynomial.legendre.leggauss(order)
    u = 0.5 * (x + 1.0)
    wu = 0.5 * w
    uu, vv = np.meshgrid(u, u, indexing="ij")
    ww = np.outer(wu, wu) * (1.0 - uu)
    pts = np.column_stack([uu.ravel(), (vv * (1.0 - uu)).ravel()])
    return pts, ww.ravel()


def _monomial_powers(degree: int):
    return [(a, b) for a in range(degree + 1) for b in range(degree + 1 - a)]


def energy_quadrature(mesh, spec, alpha, eval_piece) -> float:
    """Thin-plate energy of a spline by numerical quadrature.

    Per triangle the piecewise polynomial is re-expressed in the monomial
    basis (sampling at a unisolvent barycentric grid and solving a Vandermonde
    system), differentiated analytically, and the squared second derivatives
    are integrated with a Gauss rule that is exact far beyond the degrees
    involved.  ``eval_piece(mesh, spec, alpha, tri, points)`` evaluates one
    triangle's polynomial.
    """

    d = spec.degree
    powers = _monomial_powers(d)
    ref_pts, ref_w = _gauss_triangle()
    total = 0.0
    bary = [
        (i / d, j / d, (d - i - j) / d)
        for i in range(d + 1)
        for j in range(d + 1 - i)
    ]
    for t in range(mesh.n_triangles):
        verts = mesh.vertices[mesh.triangles[t]]
        sample = np.array([w0 * verts[0] + w1 * verts[1] + w2 * verts[2] for w0, w1, w2 in bary])
        vals = eval_piece(mesh, spec, alpha, t, sample)
        vand = np.array([[x**a * y**b for a, b in powers] for x, y in sample])
        coef = np.linalg.solve(vand, vals)

        # analytic second derivatives of sum c_ab x^a y^b
        def second(px, py):
            out = np.zeros(ref_w.shape)
            jac = np.column_stack([verts[1] - verts[0], verts[2] - verts[0]])
            pts = verts[0] + ref_pts @ jac.T
            for (a, b), c in zip(powers, coef):
                aa, bb = a, b
                cc = c
                for _ in range(px):
                    cc *= aa
                    aa -= 1
                for _ in range(py):
                    cc *= bb
                    bb -= 1
                if aa < 0 or bb < 0 or cc == 0.0:
                    continue
                out += cc * pts[:, 0] ** aa * pts[:, 1] ** bb
            return out

        area_scale = abs(np.linalg.det(np.column_stack([verts[1] - verts[0], verts[2] - verts[0]])))
        gxx, gxy, gyy = second(2, 0), second(1, 1), second(0, 2)
        total += area_scale * np.sum(ref_w * (gxx**2 + 2.0 * gxy**2 + gyy**2))
    return float(total)


# ---------------------------------------------------------------------------
# penalized objective and an accelerated proximal-gradient reference solver


def joint_objective(y, B, X, D, rho, lam, mult, psi, theta) -> float:
    """(1/2n)||y - B psi - X theta||^2 + rho psi' D psi + lam sum mult_l |theta_l|."""

    n = len(y)
    r = y - X @ theta
    if B is not None:
        r = r - B @ psi
    val = 0.5 * float(r @ r) / n
    if B is not None:
        val += rho * float(psi @ D @ psi)
    finite = np.isfinite(mult)
    val += lam * float(np.sum(mult[finite] * np.abs(theta[finite])))
    return val


@njit(cache=True)
def _fista_loop(A, y, Dbar, rho, lam, mult, z0, n_iter, tol):
    n, m = A.shape
    AtA = A.T @ A / n
    Aty = A.T @ y / n
    lip = np.linalg.eigvalsh(AtA + 2.0 * rho * Dbar)[-1]
    step = 1.0 / lip
    z = z0.copy()
    zprev = z0.copy()
    tk = 1.0
    last = 1e300
    for it in range(n_iter):
        grad = AtA @ z + 2.0 * rho * (Dbar @ z) - Aty
        v = z - step * grad
        for l in range(m):
            thr = step * lam * mult[l]
            if thr > 0.0:
                if not np.isfinite(thr):
                    v[l] = 0.0
                elif v[l] > thr:
                    v[l] -= thr
                elif v[l] < -thr:
                    v[l] += thr
                else:
                    v[l] = 0.0
        tnew = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
        znew = v + ((tk - 1.0) / tnew) * (v - zprev)
        zprev = v
        tk = tnew
        z = znew
        if it % 1000 == 999:
            r = y - A @ v
            obj = 0.5 * (r @ r) / n + rho * (v @ (Dbar @ v))
            for l in range(m):
                if mult[l] > 0.0 and np.isfinite(mult[l]):
                    obj += lam * mult[l] * abs(v[l])
            if abs(last - obj) <= tol * max(1.0, abs(obj)):
                break
            last = obj
    return zprev


def prox_gradient_solve(y, B, X, D, rho, lam, mult, n_iter=300_000, tol=1e-14):
    """Reference solution of the joint penalized problem by FISTA.

    Returns (psi, theta).  ``mult`` carries the per-coordinate penalty
    multipliers for theta (0 for unpenalized coordinates, +inf pins to zero).
    """

    q = 0 if B is None else B.shape[1]
    m = X.shape[1]
    if B is None:
        A = np.asarray(X, dtype=float)
        Dbar = np.zeros((m, m))
        mult_full = np.asarray(mult, dtype=float)
    else:
        A = np.hstack([B, X])
        Dbar = np.zeros((q + m, q + m))
        Dbar[:q, :q] = D
        mult_full = np.concatenate([np.zeros(q), np.asarray(mult, dtype=float)])
    z = _fista_loop(
        np.ascontiguousarray(A, dtype=np.float64),
        np.ascontiguousarray(y, dtype=np.float64),
        np.ascontiguousarray(Dbar, dtype=np.float64),
        float(rho),
        float(lam),
        np.ascontiguousarray(np.where(np.isfinite(mult_full), mult_full, np.inf)),
        np.zeros(A.shape[1]),
        n_iter,
        tol,
    )
    return z[:q], z[q:]


# ---------------------------------------------------------------------------
# metrics


def rand_index_pairs(a, b) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    n = len(a)
    agree = 0
    total = 0
    for i in range(n):
        for j in range(i + 1, n):
            total += 1
            if (a[i] == a[j]) == (b[i] == b[j]):
                agree += 1
    return agree / total


def mse_loop(est, true) -> float:
    est = np.asarray(est, dtype=float)
    true = np.asarray(true, dtype=float)
    tot = 0.0
    for i in range(est.shape[0]):
        for err in np.atleast_1d(est[i] - true[i]):
            tot += err * err
    return tot / est.shape[0]


def df_psi_dense(Btilde, D, rho, n) -> float:
    """trace of the spline hat block, by explicit dense inversion."""

    G = Btilde.T @ Btilde + 2.0 * n * rho * D
    H = Btilde @ np.linalg.inv(G) @ Btilde.T
    return float(np.trace(H))
