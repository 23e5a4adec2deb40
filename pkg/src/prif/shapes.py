"""Procedural test shapes: icospheres, boxes, and a two-level step plate."""

import numpy as np

from .geometry import TriangleMesh


def icosphere(subdivisions: int = 2, radius: float = 1.0,
              color=None) -> TriangleMesh:
    """Subdivided icosahedron with all vertices on the radius sphere."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]

    verts = [v for v in verts]
    for _ in range(subdivisions):
        midpoint_cache = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoint_cache:
                m = verts[i] + verts[j]
                m /= np.linalg.norm(m)
                verts.append(m)
                midpoint_cache[key] = len(verts) - 1
            return midpoint_cache[key]

        new_faces = []
        for a, b, c in faces:
            ab = midpoint(a, b)
            bc = midpoint(b, c)
            ca = midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces

    v = np.array(verts) * radius
    colors = None
    if color is not None:
        colors = np.tile(np.asarray(color, dtype=np.float64), (len(v), 1))
    return TriangleMesh(vertices=v, triangles=np.array(faces, dtype=np.int64),
                        colors=colors)


def icosphere_inradius(mesh: TriangleMesh) -> float:
    """Distance from the origin to the nearest face plane; together with
    the circumradius this bounds the tessellation error of an icosphere."""
    v0, v1, v2 = mesh.triangle_corners()
    n = np.cross(v1 - v0, v2 - v0)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    return float(np.abs(np.sum(n * v0, axis=1)).min())


def box(half_extents=(1.0, 1.0, 1.0), color=None) -> TriangleMesh:
    """Axis-aligned box (12 triangles), centered at the origin."""
    hx, hy, hz = half_extents
    v = np.array([
        [-hx, -hy, -hz], [hx, -hy, -hz], [hx, hy, -hz], [-hx, hy, -hz],
        [-hx, -hy, hz], [hx, -hy, hz], [hx, hy, hz], [-hx, hy, hz],
    ], dtype=np.float64)
    quads = [
        (0, 3, 2, 1),  # -z
        (4, 5, 6, 7),  # +z
        (0, 1, 5, 4),  # -y
        (2, 3, 7, 6),  # +y
        (1, 2, 6, 5),  # +x
        (0, 4, 7, 3),  # -x
    ]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    colors = None
    if color is not None:
        colors = np.tile(np.asarray(color, dtype=np.float64), (len(v), 1))
    return TriangleMesh(vertices=v, triangles=np.array(tris, dtype=np.int64),
                        colors=colors)


def tetrahedron(scale: float = 1.0) -> TriangleMesh:
    """Regular tetrahedron with vertices on the unit sphere (times scale)."""
    v = np.array([
        [1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1],
    ], dtype=np.float64) / np.sqrt(3.0) * scale
    t = np.array([
        (0, 1, 2), (0, 3, 1), (0, 2, 3), (1, 3, 2),
    ], dtype=np.int64)
    return TriangleMesh(vertices=v, triangles=t)


def step_plate(half_width: float = 0.6, z_low: float = 0.0,
               z_high: float = 0.3) -> TriangleMesh:
    """Two abutting square plates with a height step along x = 0.

    The plate at x < 0 sits at z_low, the plate at x > 0 at z_high; the
    depth discontinuity along the shared edge exercises the input-gradient
    outlier filter.
    """
    w = half_width
    v = np.array([
        # low plate, x in [-w, 0]
        [-w, -w, z_low], [0.0, -w, z_low], [0.0, w, z_low], [-w, w, z_low],
        # high plate, x in [0, w]
        [0.0, -w, z_high], [w, -w, z_high], [w, w, z_high], [0.0, w, z_high],
    ], dtype=np.float64)
    t = np.array([
        (0, 1, 2), (0, 2, 3),
        (4, 5, 6), (4, 6, 7),
    ], dtype=np.int64)
    return TriangleMesh(vertices=v, triangles=t)
