"""Spatial adjacency graphs, spanning trees, and the tree-difference transform.

A spanning tree T on the n data sites turns a coefficient vector beta into
theta = H_tilde beta, where the first n-1 entries are the differences
beta_i - beta_j across tree edges and the last entry is sum(beta) / sqrt(n).
H_tilde is square and invertible; both directions run in O(n) by walking
the tree from its root.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import delaunay, mesh_edges


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[rb] = ra
        return True


@dataclass
class SpatialGraph:
    """Undirected weighted graph on vertex indices 0..n-1."""

    n_vertices: int
    edges: np.ndarray  # (m, 2) int, each row i < j, unique
    weights: np.ndarray  # (m,) float

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]


def spatial_graph(n_vertices: int, edges, weights=None) -> SpatialGraph:
    """Validate and build a :class:`SpatialGraph`; the graph must be connected."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if weights is None:
        weights = np.ones(edges.shape[0])
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (edges.shape[0],):
        raise ValueError("weights must align with edges")
    if edges.size:
        if edges.min() < 0 or edges.max() >= n_vertices:
            raise ValueError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValueError("self loops are not allowed")
    edges = np.sort(edges, axis=1)
    if np.unique(edges, axis=0).shape[0] != edges.shape[0]:
        raise ValueError("duplicate edges are not allowed")
    uf = _UnionFind(n_vertices)
    n_comp = n_vertices
    for a, b in edges:
        if uf.union(int(a), int(b)):
            n_comp -= 1
    if n_comp != 1:
        raise ValueError("graph must be connected")
    return SpatialGraph(n_vertices, edges, weights)


def delaunay_graph(locations) -> SpatialGraph:
    """Delaunay adjacency of the data sites, edges weighted by distance."""
    locations = np.asarray(locations, dtype=np.float64)
    mesh = delaunay(locations)
    edges = mesh_edges(mesh)
    d = np.hypot(*(locations[edges[:, 0]] - locations[edges[:, 1]]).T)
    return SpatialGraph(locations.shape[0], edges, d)


@dataclass
class SpanningTree:
    """A rooted spanning tree with precomputed traversal tables.

    ``edges`` keeps construction order (Kruskal acceptance order); that
    order is the coordinate order of the difference part of the transform.
    """

    n_vertices: int
    edges: np.ndarray  # (n-1, 2) int, each row i < j
    root: int = 0
    order: np.ndarray = field(default=None, repr=False)  # BFS visit order
    parent: np.ndarray = field(default=None, repr=False)
    parent_edge: np.ndarray = field(default=None, repr=False)


def make_tree(n_vertices: int, edges, root: int = 0) -> SpanningTree:
    edges = np.sort(np.asarray(edges, dtype=np.int64).reshape(-1, 2), axis=1)
    if edges.shape[0] != n_vertices - 1:
        raise ValueError("a spanning tree on n vertices has n-1 edges")
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n_vertices)]
    for l, (a, b) in enumerate(edges):
        adj[int(a)].append((int(b), l))
        adj[int(b)].append((int(a), l))
    order = np.empty(n_vertices, dtype=np.int64)
    parent = np.full(n_vertices, -1, dtype=np.int64)
    parent_edge = np.full(n_vertices, -1, dtype=np.int64)
    seen = np.zeros(n_vertices, dtype=bool)
    order[0] = root
    seen[root] = True
    head, tail = 0, 1
    while head < tail:
        u = int(order[head])
        head += 1
        for v, l in adj[u]:
            if not seen[v]:
                seen[v] = True
                parent[v] = u
                parent_edge[v] = l
                order[tail] = v
                tail += 1
    if tail != n_vertices:
        raise ValueError("edges do not span the vertex set")
    return SpanningTree(n_vertices, edges, root, order, parent, parent_edge)


def _kruskal(n_vertices: int, edges: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # Stable sort keeps ties in edge list order.
    order = np.argsort(weights, kind="stable")
    uf = _UnionFind(n_vertices)
    keep = []
    for e in order:
        a, b = int(edges[e, 0]), int(edges[e, 1])
        if uf.union(a, b):
            keep.append(int(e))
            if len(keep) == n_vertices - 1:
                break
    return np.array(keep, dtype=np.int64)


def mst(graph: SpatialGraph) -> SpanningTree:
    """Minimum spanning tree under the graph's own weights (ties: edge order)."""
    keep = _kruskal(graph.n_vertices, graph.edges, graph.weights)
    return make_tree(graph.n_vertices, graph.edges[keep])


def random_spanning_tree(graph: SpatialGraph, seed) -> SpanningTree:
    """Spanning tree drawn as the MST under i.i.d. Uniform(0,1) edge weights."""
    rng = np.random.default_rng(seed)
    keep = _kruskal(graph.n_vertices, graph.edges, rng.random(graph.n_edges))
    return make_tree(graph.n_vertices, graph.edges[keep])


@dataclass
class TreeTransform:
    """The invertible map theta = H_tilde beta attached to a spanning tree."""

    tree: SpanningTree

    @property
    def n(self) -> int:
        return self.tree.n_vertices


def tree_incidence(tree: SpanningTree) -> TreeTransform:
    return TreeTransform(tree)


def apply_transform(tt: TreeTransform, beta: np.ndarray) -> np.ndarray:
    """theta from beta: edge differences (min minus max endpoint), then mean row."""
    beta = np.asarray(beta, dtype=np.float64)
    n = tt.n
    if beta.shape[0] != n:
        raise ValueError("beta length must equal the number of vertices")
    theta = np.empty_like(beta)
    e = tt.tree.edges
    theta[: n - 1] = beta[e[:, 0]] - beta[e[:, 1]]
    theta[n - 1] = beta.sum(axis=0) / math.sqrt(n)
    return theta


def apply_inverse(tt: TreeTransform, theta: np.ndarray) -> np.ndarray:
    """beta from theta in O(n): walk the tree, then shift to the stored mean.

    Works on a vector or on an (n, m) matrix of stacked coordinate vectors.
    """
    theta = np.asarray(theta, dtype=np.float64)
    n = tt.n
    if theta.shape[0] != n:
        raise ValueError("theta length must equal the number of vertices")
    tree = tt.tree
    beta = np.zeros_like(theta)
    for v in tree.order[1:]:
        u = tree.parent[v]
        l = tree.parent_edge[v]
        if v == tree.edges[l, 1]:
            beta[v] = beta[u] - theta[l]
        else:
            beta[v] = beta[u] + theta[l]
    shift = theta[n - 1] / math.sqrt(n) - beta.mean(axis=0)
    return beta + shift


def incidence_dense(tt: TreeTransform) -> np.ndarray:
    """H_tilde as a dense (n, n) matrix, for small-n checks."""
    n = tt.n
    H = np.zeros((n, n))
    for l, (a, b) in enumerate(tt.tree.edges):
        H[l, a] = 1.0
        H[l, b] = -1.0
    H[n - 1, :] = 1.0 / math.sqrt(n)
    return H


def inverse_dense(tt: TreeTransform) -> np.ndarray:
    """H_tilde^{-1} materialised column by column via the O(n) inverse."""
    return apply_inverse(tt, np.eye(tt.n))


def build_design(X: np.ndarray, transforms: list[TreeTransform]) -> np.ndarray:
    """Transformed design [diag(x_k) H_tilde_k^{-1}]_k, covariate-major blocks.

    Column k*n + l carries coordinate l of covariate k's theta block; the
    last column of each block (l = n-1) is the unpenalised mean coordinate.
    """
    X = np.asarray(X, dtype=np.float64)
    n, p = X.shape
    if len(transforms) != p:
        raise ValueError("need one transform per covariate")
    out = np.empty((n, n * p), order="F")
    for k, tt in enumerate(transforms):
        if tt.n != n:
            raise ValueError("transform size does not match the data")
        out[:, k * n : (k + 1) * n] = X[:, k : k + 1] * inverse_dense(tt)
    return out


def penalized_mask(n: int, n_blocks: int) -> np.ndarray:
    """Boolean mask of fused-difference coordinates (mean coordinates excluded)."""
    mask = np.ones(n * n_blocks, dtype=bool)
    mask[n - 1 :: n] = False
    return mask
