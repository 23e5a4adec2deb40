import numpy as np
import pytest

from prif.geometry import TriangleMesh, build_bvh, normalize_mesh
from prif.shapes import icosphere


def random_directions(rng, n):
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def random_triangle_mesh(rng, n_triangles):
    """Disconnected random triangle soup inside the unit box."""
    centers = rng.uniform(-1, 1, size=(n_triangles, 1, 3))
    corners = centers + rng.uniform(-0.15, 0.15, size=(n_triangles, 3, 3))
    vertices = corners.reshape(-1, 3)
    triangles = np.arange(3 * n_triangles).reshape(-1, 3)
    return TriangleMesh(vertices=vertices, triangles=triangles)


@pytest.fixture(scope="session")
def unit_icosphere():
    """Subdivision-3 icosphere of radius 1 with its BVH."""
    mesh = icosphere(3)
    return mesh, build_bvh(mesh)


@pytest.fixture(scope="session")
def norm_icosphere():
    """Subdivision-2 icosphere normalized to max radius 0.9, with BVH."""
    mesh, _, _ = normalize_mesh(icosphere(2), 0.9)
    return mesh, build_bvh(mesh)
