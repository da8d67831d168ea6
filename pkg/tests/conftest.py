from __future__ import annotations

import numpy as np
import pytest

from shaplm import make_mesh, mesh_uniform_rect


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def unit_right_mesh():
    """A single right triangle with legs on the axes."""
    return make_mesh([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]])


@pytest.fixture
def square_mesh():
    """The unit square split along one diagonal: two triangles."""
    return mesh_uniform_rect((0.0, 1.0, 0.0, 1.0), 1)


@pytest.fixture
def rect2_mesh():
    return mesh_uniform_rect((0.0, 1.0, 0.0, 1.0), 2)


def interior_points(rng, n):
    """Random points strictly inside the unit square."""
    return 0.02 + 0.96 * rng.random((n, 2))
