"""Triangle meshes, BVH construction, and exact ray/point queries.

This is the ground-truth oracle for everything downstream: ray casting
produces the supervision targets, closest-point queries back the signed
distance baseline, and area-weighted sampling produces evaluation clouds.

All geometry runs in float64. Mesh and Bvh are immutable after
construction; the query functions are reentrant.
"""

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)

# Intersections closer than this along the ray are treated as
# self-intersections and skipped.
RAY_EPS = 1e-6

_DEGENERATE_DET = 1e-12


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle soup with optional per-vertex RGB in [0, 1]."""

    vertices: np.ndarray          # (nv, 3) float64
    triangles: np.ndarray         # (nt, 3) int64
    colors: Optional[np.ndarray] = None  # (nv, 3) float64 or None

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64))
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if self.colors is not None:
            c = np.ascontiguousarray(np.asarray(self.colors, dtype=np.float64))
            if c.shape != v.shape:
                raise ValueError("colors must be one RGB triple per vertex")
            object.__setattr__(self, "colors", c)
        if t.size and t.max(initial=-1) >= len(v):
            raise ValueError("triangle index out of range")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def triangle_corners(self):
        """(v0, v1, v2) arrays of shape (nt, 3)."""
        v = self.vertices
        t = self.triangles
        return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]

    def triangle_areas(self) -> np.ndarray:
        v0, v1, v2 = self.triangle_corners()
        return 0.5 * np.linalg.norm(np.cross(v1 - v0, v2 - v0), axis=1)

    def is_watertight(self) -> bool:
        """True when every edge is shared by exactly two triangles."""
        t = self.triangles
        edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        edges = np.sort(edges, axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return bool(np.all(counts == 2))


@dataclass(frozen=True)
class Ray:
    p: np.ndarray  # origin
    d: np.ndarray  # unit direction

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=np.float64))
        object.__setattr__(self, "d", np.asarray(self.d, dtype=np.float64))


@dataclass(frozen=True)
class Hit:
    t: float
    point: np.ndarray
    triangle: int


def drop_degenerate_triangles(vertices: np.ndarray, triangles: np.ndarray,
                              rel_tol: float = 1e-12):
    """Remove zero-area faces; returns (triangles, dropped_count)."""
    if len(triangles) == 0:
        return triangles, 0
    v0 = vertices[triangles[:, 0]]
    v1 = vertices[triangles[:, 1]]
    v2 = vertices[triangles[:, 2]]
    areas = 0.5 * np.linalg.norm(np.cross(v1 - v0, v2 - v0), axis=1)
    extent = vertices.max(axis=0) - vertices.min(axis=0)
    scale2 = max(float(np.max(extent)) ** 2, np.finfo(np.float64).tiny)
    keep = areas > rel_tol * scale2
    dropped = int(np.count_nonzero(~keep))
    if dropped:
        log.warning("dropped %d degenerate triangle(s)", dropped)
    return triangles[keep], dropped


def normalize_mesh(mesh: TriangleMesh, target_radius: float = 0.9):
    """Uniformly scale about the bounding-sphere center so max |v| = target.

    Returns (mesh, scale, center); original coordinates are recovered as
    v / scale + center. The bounding sphere is centered on the midpoint of
    the axis-aligned bounding box.
    """
    if mesh.n_vertices == 0:
        raise ValueError("cannot normalize an empty mesh")
    if target_radius <= 0:
        raise ValueError("target_radius must be positive")
    v = mesh.vertices
    center = 0.5 * (v.min(axis=0) + v.max(axis=0))
    radii = np.linalg.norm(v - center, axis=1)
    r = float(radii.max())
    if r == 0.0:
        raise ValueError("mesh collapses to a single point")
    scale = target_radius / r
    out = TriangleMesh((v - center) * scale, mesh.triangles, mesh.colors)
    return out, scale, center


def mesh_hash(mesh: TriangleMesh) -> str:
    h = hashlib.sha256()
    h.update(mesh.vertices.tobytes())
    h.update(mesh.triangles.tobytes())
    if mesh.colors is not None:
        h.update(mesh.colors.tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# small vector helpers (fixed evaluation order, used by every query kernel)

def _dot3(a, b):
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def _cross3(a, b):
    out = np.empty(np.broadcast(a, b).shape, dtype=np.float64)
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def intersect_rays_triangles(origins, dirs, v0, v1, v2, eps_t=RAY_EPS,
                             return_bary=False):
    """Moller-Trumbore over every (ray, triangle) pair.

    origins/dirs: (m, 3); v0/v1/v2: (k, 3). Returns t of shape (m, k)
    with +inf for misses. Boundary barycentrics are inclusive so rays
    crossing a shared edge register on at least one of its triangles.
    """
    o = origins[:, None, :]
    d = dirs[:, None, :]
    e1 = (v1 - v0)[None, :, :]
    e2 = (v2 - v0)[None, :, :]
    pv = _cross3(d, e2)
    det = _dot3(e1, pv)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        tv = o - v0[None, :, :]
        u = _dot3(tv, pv) * inv
        qv = _cross3(tv, e1)
        v = _dot3(d, qv) * inv
        t = _dot3(e2, qv) * inv
    ok = (np.abs(det) > _DEGENERATE_DET) & (u >= 0.0) & (v >= 0.0) \
        & (u + v <= 1.0) & (t > eps_t)
    t = np.where(ok, t, np.inf)
    if return_bary:
        return t, u, v, det
    return t


# ---------------------------------------------------------------------------
# BVH

@dataclass(frozen=True)
class Bvh:
    """Median-split box hierarchy over triangle centroids.

    Leaves index a contiguous run of `perm`; each leaf run is sorted by
    original triangle id so first-minimum reductions break ties toward the
    lowest id.
    """

    box_min: np.ndarray   # (n_nodes, 3)
    box_max: np.ndarray   # (n_nodes, 3)
    left: np.ndarray      # (n_nodes,) child id or -1
    right: np.ndarray
    start: np.ndarray     # leaf range into perm (count == 0 for internal)
    count: np.ndarray
    perm: np.ndarray      # (nt,) triangle permutation
    leaf_size: int = 8

    @property
    def n_nodes(self) -> int:
        return len(self.left)


def build_bvh(mesh: TriangleMesh, leaf_size: int = 8) -> Bvh:
    """Build the hierarchy by splitting at the centroid median of the
    longest axis; every leaf holds at most `leaf_size` triangles."""
    nt = mesh.n_triangles
    if nt == 0:
        raise ValueError("cannot build a BVH over an empty mesh")
    v0, v1, v2 = mesh.triangle_corners()
    tri_min = np.minimum(np.minimum(v0, v1), v2)
    tri_max = np.maximum(np.maximum(v0, v1), v2)
    centroids = (v0 + v1 + v2) / 3.0

    box_min, box_max = [], []
    left, right, start, count = [], [], [], []
    perm = np.arange(nt)

    def new_node(idx):
        node = len(left)
        sel = perm[idx[0]:idx[1]]
        box_min.append(tri_min[sel].min(axis=0))
        box_max.append(tri_max[sel].max(axis=0))
        left.append(-1)
        right.append(-1)
        start.append(0)
        count.append(0)
        return node

    # iterative build; stack carries (node, lo, hi) ranges into perm
    root = new_node((0, nt))
    stack = [(root, 0, nt)]
    while stack:
        node, lo, hi = stack.pop()
        n = hi - lo
        if n <= leaf_size:
            perm[lo:hi] = np.sort(perm[lo:hi])
            start[node] = lo
            count[node] = n
            continue
        sel = perm[lo:hi]
        c = centroids[sel]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        order = np.argsort(c[:, axis], kind="stable")
        perm[lo:hi] = sel[order]
        mid = lo + n // 2
        l = new_node((lo, mid))
        r = new_node((mid, hi))
        left[node] = l
        right[node] = r
        stack.append((l, lo, mid))
        stack.append((r, mid, hi))

    return Bvh(
        box_min=np.array(box_min), box_max=np.array(box_max),
        left=np.array(left), right=np.array(right),
        start=np.array(start), count=np.array(count),
        perm=perm, leaf_size=leaf_size,
    )


def _slab_test(box_min, box_max, origins, inv_dirs, t_cap):
    """Forward ray/AABB overlap for a packet; conservative for rays lying
    exactly in a box plane. Returns (hit mask, entry t)."""
    with np.errstate(invalid="ignore"):
        t0 = (box_min - origins) * inv_dirs
        t1 = (box_max - origins) * inv_dirs
    near = np.minimum(t0, t1)
    far = np.maximum(t0, t1)
    near = np.where(np.isnan(near), -np.inf, near)
    far = np.where(np.isnan(far), np.inf, far)
    tmin = near.max(axis=1)
    tmax = far.min(axis=1)
    hit = (tmax >= np.maximum(tmin, RAY_EPS)) & (tmin <= t_cap)
    return hit, tmin


def cast_rays(bvh: Bvh, mesh: TriangleMesh, origins, dirs):
    """Nearest-hit query for a batch of rays.

    Returns (t, tri, points, hit_mask); t = +inf and tri = -1 on miss.
    Ties at equal t resolve to the lowest triangle id, so results match a
    brute-force scan over all triangles bit for bit.
    """
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    squeeze = origins.ndim == 1
    if squeeze:
        origins = origins[None]
        dirs = dirs[None]
    nr = len(origins)
    v0, v1, v2 = mesh.triangle_corners()
    with np.errstate(divide="ignore"):
        inv_dirs = 1.0 / dirs

    best_t = np.full(nr, np.inf)
    best_tri = np.full(nr, -1, dtype=np.int64)

    stack = [(0, np.arange(nr))]
    while stack:
        node, active = stack.pop()
        hit, _ = _slab_test(bvh.box_min[node], bvh.box_max[node],
                            origins[active], inv_dirs[active], best_t[active])
        active = active[hit]
        if active.size == 0:
            continue
        cnt = bvh.count[node]
        if cnt > 0:
            lo = bvh.start[node]
            tris = bvh.perm[lo:lo + cnt]
            t = intersect_rays_triangles(origins[active], dirs[active],
                                         v0[tris], v1[tris], v2[tris])
            j = np.argmin(t, axis=1)
            rows = np.arange(len(active))
            tmin = t[rows, j]
            tid = tris[j]
            better = (tmin < best_t[active]) | (
                (tmin == best_t[active]) & (tid < best_tri[active]))
            upd = active[better]
            best_t[upd] = tmin[better]
            best_tri[upd] = tid[better]
        else:
            l, r = bvh.left[node], bvh.right[node]
            hl, tl = _slab_test(bvh.box_min[l], bvh.box_max[l],
                                origins[active], inv_dirs[active],
                                best_t[active])
            hr, tr = _slab_test(bvh.box_min[r], bvh.box_max[r],
                                origins[active], inv_dirs[active],
                                best_t[active])
            # visit the nearer child first (popped last-in-first-out)
            if np.sum(np.where(hl, tl, np.inf)) <= np.sum(np.where(hr, tr, np.inf)):
                stack.append((r, active[hr]))
                stack.append((l, active[hl]))
            else:
                stack.append((l, active[hl]))
                stack.append((r, active[hr]))

    points = origins + best_t[:, None] * dirs
    hit_mask = np.isfinite(best_t)
    points[~hit_mask] = 0.0
    if squeeze:
        return best_t[0], best_tri[0], points[0], hit_mask[0]
    return best_t, best_tri, points, hit_mask


def cast_ray(bvh: Bvh, mesh: TriangleMesh, ray: Ray) -> Optional[Hit]:
    """Single-ray convenience wrapper; None on miss."""
    t, tri, point, hit = cast_rays(bvh, mesh, ray.p, ray.d)
    if not hit:
        return None
    return Hit(t=float(t), point=point, triangle=int(tri))


def count_ray_hits(mesh: TriangleMesh, origins, dirs, eps_t=1e-9):
    """Number of triangle crossings per ray plus a grazing flag.

    A crossing that lands within 1e-9 of a triangle edge (or on a nearly
    parallel triangle) sets the flag: parity is then unreliable and the
    caller should retry with a jittered direction.
    """
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    v0, v1, v2 = mesh.triangle_corners()
    counts = np.zeros(len(origins), dtype=np.int64)
    grazing = np.zeros(len(origins), dtype=bool)
    chunk = max(1, 2_000_000 // max(mesh.n_triangles, 1))
    for i in range(0, len(origins), chunk):
        sl = slice(i, i + chunk)
        t, u, v, det = intersect_rays_triangles(
            origins[sl], dirs[sl], v0, v1, v2, eps_t=eps_t, return_bary=True)
        hit = np.isfinite(t)
        counts[sl] = hit.sum(axis=1)
        edge = hit & ((np.minimum(np.minimum(u, v), 1.0 - u - v) < 1e-9)
                      | (np.abs(det) < 1e-9))
        grazing[sl] = edge.any(axis=1)
    return counts, grazing


# ---------------------------------------------------------------------------
# closest-point queries (signed-distance support)

def closest_point_on_triangles(points, v0, v1, v2):
    """Closest point on each of k triangles for each of m query points.

    Classic barycentric region walk, vectorized; returns (d2, cp) with
    shapes (m, k) and (m, k, 3).
    """
    p = points[:, None, :]
    a = v0[None, :, :]
    b = v1[None, :, :]
    c = v2[None, :, :]
    ab = b - a
    ac = c - a
    ap = p - a

    d1 = _dot3(ab, ap)
    d2_ = _dot3(ac, ap)
    bp = p - b
    d3 = _dot3(ab, bp)
    d4 = _dot3(ac, bp)
    cp_ = p - c
    d5 = _dot3(ab, cp_)
    d6 = _dot3(ac, cp_)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2_ - d1 * d6
    vc = d1 * d4 - d3 * d2_

    shape = va.shape
    result = np.empty(shape + (3,), dtype=np.float64)
    done = np.zeros(shape, dtype=bool)

    def assign(mask, value):
        nonlocal done
        mask = mask & ~done
        if np.any(mask):
            result[mask] = value[mask] if value.shape == result.shape else value
            done |= mask

    # vertex regions
    assign((d1 <= 0) & (d2_ <= 0), np.broadcast_to(a, result.shape))
    assign((d3 >= 0) & (d4 <= d3), np.broadcast_to(b, result.shape))
    assign((d6 >= 0) & (d5 <= d6), np.broadcast_to(c, result.shape))

    # edge AB
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ab = d1 / (d1 - d3)
    assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + t_ab[..., None] * ab)

    # edge AC
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ac = d2_ / (d2_ - d6)
    assign((vb <= 0) & (d2_ >= 0) & (d6 <= 0), a + t_ac[..., None] * ac)

    # edge BC
    with np.errstate(divide="ignore", invalid="ignore"):
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
    assign((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0),
           b + t_bc[..., None] * (c - b))

    # interior
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 / (va + vb + vc)
    u = vb * denom
    v = vc * denom
    assign(np.ones(shape, dtype=bool), a + u[..., None] * ab + v[..., None] * ac)

    diff = points[:, None, :] - result
    return _dot3(diff, diff), result


def _box_dist2(box_min, box_max, points):
    lo = np.maximum(box_min - points, 0.0)
    hi = np.maximum(points - box_max, 0.0)
    d = lo + hi
    return _dot3(d, d)


def closest_points(bvh: Bvh, mesh: TriangleMesh, points):
    """Nearest surface point for each query; returns (dist, cp, tri)."""
    points = np.asarray(points, dtype=np.float64)
    squeeze = points.ndim == 1
    if squeeze:
        points = points[None]
    n = len(points)
    v0, v1, v2 = mesh.triangle_corners()
    best_d2 = np.full(n, np.inf)
    best_cp = np.zeros((n, 3))
    best_tri = np.full(n, -1, dtype=np.int64)

    stack = [(0, np.arange(n))]
    while stack:
        node, active = stack.pop()
        bd2 = _box_dist2(bvh.box_min[node], bvh.box_max[node], points[active])
        active = active[bd2 <= best_d2[active]]
        if active.size == 0:
            continue
        cnt = bvh.count[node]
        if cnt > 0:
            lo = bvh.start[node]
            tris = bvh.perm[lo:lo + cnt]
            d2, cp = closest_point_on_triangles(points[active],
                                                v0[tris], v1[tris], v2[tris])
            j = np.argmin(d2, axis=1)
            rows = np.arange(len(active))
            dmin = d2[rows, j]
            tid = tris[j]
            better = (dmin < best_d2[active]) | (
                (dmin == best_d2[active]) & (tid < best_tri[active]))
            upd = active[better]
            best_d2[upd] = dmin[better]
            best_cp[upd] = cp[rows, j][better]
            best_tri[upd] = tid[better]
        else:
            l, r = bvh.left[node], bvh.right[node]
            dl = _box_dist2(bvh.box_min[l], bvh.box_max[l], points[active])
            dr = _box_dist2(bvh.box_min[r], bvh.box_max[r], points[active])
            if dl.sum() <= dr.sum():
                stack.append((r, active[dr <= best_d2[active]]))
                stack.append((l, active[dl <= best_d2[active]]))
            else:
                stack.append((l, active[dl <= best_d2[active]]))
                stack.append((r, active[dr <= best_d2[active]]))

    dist = np.sqrt(best_d2)
    if squeeze:
        return dist[0], best_cp[0], best_tri[0]
    return dist, best_cp, best_tri


# ---------------------------------------------------------------------------
# sampling

def sample_surface_points(mesh: TriangleMesh, n: int, seed: int,
                          return_colors: bool = False):
    """Draw n points area-uniformly: triangle by area, then uniform
    barycentric coordinates. Bitwise reproducible for a fixed seed."""
    if mesh.n_triangles == 0:
        raise ValueError("cannot sample an empty mesh")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    areas = mesh.triangle_areas()
    tri = rng.choice(mesh.n_triangles, size=n, p=areas / areas.sum())
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    v0, v1, v2 = mesh.triangle_corners()
    pts = (v0[tri] + u[:, None] * (v1[tri] - v0[tri])
           + v[:, None] * (v2[tri] - v0[tri]))
    if not return_colors:
        return pts
    if mesh.colors is None:
        return pts, None
    c = mesh.colors
    t = mesh.triangles[tri]
    w = 1.0 - u - v
    cols = (w[:, None] * c[t[:, 0]] + u[:, None] * c[t[:, 1]]
            + v[:, None] * c[t[:, 2]])
    return pts, cols
