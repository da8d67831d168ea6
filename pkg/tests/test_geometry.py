from __future__ import annotations

import numpy as np
import pytest

from shaplm import (
    barycentric,
    delaunay,
    load_mesh,
    locate_points,
    make_mesh,
    mesh_edges,
    mesh_uniform_rect,
    save_mesh,
)
from shaplm.geometry import locate_point, mesh_from_dict, mesh_to_dict

from _oracles import in_circumcircle


class TestMakeMesh:
    def test_attributes(self, square_mesh):
        assert square_mesh.n_vertices == 4
        assert square_mesh.n_triangles == 2
        assert square_mesh.mesh_size == pytest.approx(np.sqrt(2.0))
        assert len(square_mesh.shared_edges) == 1
        ta, tb, (vi, vj) = square_mesh.shared_edges[0]
        assert ta < tb and vi < vj

    def test_single_triangle_has_no_shared_edges(self, unit_right_mesh):
        assert unit_right_mesh.shared_edges == []

    def test_degenerate_triangle_rejected(self):
        with pytest.raises(ValueError):
            make_mesh([[0, 0], [1, 0], [2, 0]], [[0, 1, 2]])

    def test_vertex_index_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            make_mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 3]])


class TestBarycentric:
    def test_vertices_are_unit_coordinates(self, unit_right_mesh):
        for loc, expect in zip(
            ([0.0, 0.0], [1.0, 0.0], [0.0, 1.0]),
            np.eye(3),
        ):
            np.testing.assert_allclose(
                barycentric(unit_right_mesh, 0, loc), expect, atol=1e-14
            )

    def test_centroid(self, unit_right_mesh):
        c = unit_right_mesh.vertices.mean(axis=0)
        np.testing.assert_allclose(
            barycentric(unit_right_mesh, 0, c), np.full(3, 1 / 3), atol=1e-14
        )

    def test_known_point(self, unit_right_mesh):
        np.testing.assert_allclose(
            barycentric(unit_right_mesh, 0, [0.2, 0.3]), [0.5, 0.2, 0.3], atol=1e-14
        )

    def test_reconstruction_and_sum(self, unit_right_mesh, rng):
        pts = rng.random((50, 2))
        b = barycentric(unit_right_mesh, 0, pts)
        np.testing.assert_allclose(b.sum(axis=1), 1.0, atol=1e-12)
        verts = unit_right_mesh.vertices[unit_right_mesh.triangles[0]]
        np.testing.assert_allclose(b @ verts, pts, atol=1e-12)

    def test_batch_matches_single(self, square_mesh, rng):
        pts = rng.random((7, 2))
        batch = barycentric(square_mesh, 1, pts)
        for i, p in enumerate(pts):
            np.testing.assert_allclose(batch[i], barycentric(square_mesh, 1, p))


class TestLocate:
    def test_centroids_locate_to_own_triangle(self, rect2_mesh):
        cents = rect2_mesh.vertices[rect2_mesh.triangles].mean(axis=1)
        np.testing.assert_array_equal(
            locate_points(rect2_mesh, cents), np.arange(rect2_mesh.n_triangles)
        )

    def test_outside_is_minus_one(self, square_mesh):
        out = locate_points(square_mesh, [[2.0, 2.0], [-0.5, 0.5]])
        np.testing.assert_array_equal(out, [-1, -1])

    def test_locate_point_raises_outside(self, square_mesh):
        with pytest.raises(ValueError):
            locate_point(square_mesh, [5.0, 5.0])

    def test_shared_edge_resolves_to_lowest_index(self, square_mesh):
        # midpoint of the shared diagonal
        ta, tb, (vi, vj) = square_mesh.shared_edges[0]
        mid = square_mesh.vertices[[vi, vj]].mean(axis=0)
        assert locate_point(square_mesh, mid) == ta == 0

    def test_every_vertex_is_located(self, rect2_mesh):
        found = locate_points(rect2_mesh, rect2_mesh.vertices)
        assert np.all(found >= 0)

    def test_grid_accelerated_path_agrees(self, rng):
        # a mesh large enough to trigger the cell-bucket path
        mesh = mesh_uniform_rect((0.0, 1.0, 0.0, 1.0), 17)
        assert mesh.n_triangles > 256
        pts = rng.random((300, 2))
        found = locate_points(mesh, pts)
        assert np.all(found >= 0)
        for p, t in zip(pts, found):
            assert barycentric(mesh, int(t), p).min() >= -1e-9
        # vertices and edge midpoints still resolve
        assert np.all(locate_points(mesh, mesh.vertices) >= 0)


class TestDelaunay:
    def test_three_points(self):
        mesh = delaunay([[0, 0], [1, 0], [0, 1]])
        assert mesh.n_triangles == 1
        assert mesh.n_vertices == 3
        assert len(mesh_edges(mesh)) == 3

    def test_unit_square(self):
        mesh = delaunay([[0, 0], [1, 0], [1, 1], [0, 1]])
        assert mesh.n_triangles == 2
        edges = mesh_edges(mesh)
        assert len(edges) == 5
        diagonals = {(0, 2), (1, 3)}
        present = {tuple(e) for e in edges} & diagonals
        assert len(present) == 1

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            delaunay([[0, 0], [1, 1]])

    def test_duplicate_points(self):
        with pytest.raises(ValueError):
            delaunay([[0, 0], [1, 0], [0, 1], [0, 0]])

    def test_collinear_points(self):
        with pytest.raises(ValueError):
            delaunay([[0, 0], [1, 0], [2, 0], [3, 0]])

    def test_empty_circumcircle_property(self, rng):
        pts = rng.random((50, 2))
        mesh = delaunay(pts)
        for tri in mesh.triangles:
            a, b, c = mesh.vertices[tri]
            others = np.setdiff1d(np.arange(50), tri)
            for p in mesh.vertices[others]:
                assert in_circumcircle(a, b, c, p) <= 1e-9

    def test_triangles_cover_hull_area(self, rng):
        pts = rng.random((40, 2))
        mesh = delaunay(pts)
        areas = []
        for tri in mesh.triangles:
            v = mesh.vertices[tri]
            e1, e2 = v[1] - v[0], v[2] - v[0]
            areas.append(0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0]))
        import scipy.spatial

        hull = scipy.spatial.ConvexHull(pts)
        assert np.isclose(sum(areas), hull.volume, rtol=1e-10)


class TestUniformRect:
    def test_resolution_one(self):
        mesh = mesh_uniform_rect((0.0, 1.0, 0.0, 1.0), 1)
        assert mesh.n_triangles == 2
        assert mesh.n_vertices == 4

    def test_resolution_two(self):
        mesh = mesh_uniform_rect((0.0, 1.0, 0.0, 1.0), 2)
        assert mesh.n_triangles == 8
        assert mesh.n_vertices == 9

    def test_counts_scale_quadratically(self):
        mesh = mesh_uniform_rect((0.0, 2.0, -1.0, 1.0), 4)
        assert mesh.n_triangles == 32
        assert mesh.n_vertices == 25

    def test_covers_domain(self, rng):
        mesh = mesh_uniform_rect((0.0, 2.0, -1.0, 1.0), 3)
        pts = np.column_stack([2 * rng.random(100), 2 * rng.random(100) - 1])
        assert np.all(locate_points(mesh, pts) >= 0)

    def test_invalid_domain(self):
        with pytest.raises(ValueError):
            mesh_uniform_rect((1.0, 0.0, 0.0, 1.0), 2)
        with pytest.raises(ValueError):
            mesh_uniform_rect((0.0, 1.0, 0.0, 1.0), 0)


class TestMeshIO:
    def test_round_trip_dict(self, rect2_mesh):
        clone = mesh_from_dict(mesh_to_dict(rect2_mesh))
        np.testing.assert_array_equal(clone.vertices, rect2_mesh.vertices)
        np.testing.assert_array_equal(clone.triangles, rect2_mesh.triangles)

    def test_round_trip_file(self, rect2_mesh, tmp_path):
        path = tmp_path / "mesh.json"
        save_mesh(rect2_mesh, path)
        clone = load_mesh(path)
        np.testing.assert_array_equal(clone.vertices, rect2_mesh.vertices)
        np.testing.assert_array_equal(clone.triangles, rect2_mesh.triangles)
        assert clone.mesh_size == rect2_mesh.mesh_size
