"""Chamfer-distance metrics and rendering benchmarks.

Chamfer uses squared nearest-neighbor distances: the mean is the sum of
the two directed means, the median is taken over the pooled two-sided
distance list. Benchmarks count network evaluations (rows pushed through
the trunk) and wall time for a full depth render.
"""

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .cameras import Camera, camera_rays
from .geometry import TriangleMesh, sample_surface_points
from .model import PrifModel, prif_forward
from .nn import Mlp
from .rays import encode_rays
from .sdf import sdf_network_fn, sphere_trace


@dataclass(frozen=True)
class ChamferReport:
    mean: float      # sum of the two directed mean squared distances
    median: float    # median of the pooled per-point squared distances
    n_a: int
    n_b: int

    def to_dict(self):
        return {"mean": self.mean, "median": self.median,
                "n_a": self.n_a, "n_b": self.n_b}


@dataclass(frozen=True)
class BenchReport:
    method: str
    queries: int
    wall_time: float
    rays: int

    def to_dict(self):
        return {"method": self.method, "queries": self.queries,
                "wall_time": self.wall_time, "rays": self.rays}


def chamfer(a, b) -> ChamferReport:
    """Symmetric squared-distance Chamfer report between two point sets."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer needs two non-empty point sets")
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    sq_ab = d_ab ** 2
    sq_ba = d_ba ** 2
    mean = float(sq_ab.mean() + sq_ba.mean())
    median = float(np.median(np.concatenate([sq_ab, sq_ba])))
    return ChamferReport(mean=mean, median=median, n_a=len(a), n_b=len(b))


def render_depth_prif(model: PrifModel, cam: Camera, shape_ids=None,
                      latent=None, threshold: float = 0.5,
                      chunk: int = 65536):
    """Depth image from one evaluation per pixel ray; background pixels 0.

    Returns (depth (h, w), mask probabilities (h, w), query count).
    """
    origins, dirs = camera_rays(cam)
    anchors, dirs = encode_rays(origins, dirs, model.mode)
    enc = np.concatenate([anchors, dirs], axis=1).astype(np.float32)
    n = len(enc)
    depth = np.zeros(n)
    probs = np.zeros(n)
    before = model.trunk.n_evals
    for i in range(0, n, chunk):
        sl = slice(i, min(i + chunk, n))
        ids = None if shape_ids is None else np.asarray(shape_ids)[sl]
        s, a = prif_forward(model, enc[sl], model.mode, ids, latent)
        # ray parameter from the camera origin: t = s - (p . d)
        t = s.astype(np.float64) - np.sum(origins[sl] * dirs[sl], axis=1)
        fg = a >= threshold
        depth[sl] = np.where(fg, t, 0.0)
        probs[sl] = a
    queries = model.trunk.n_evals - before
    h, w = cam.height, cam.width
    return depth.reshape(h, w), probs.reshape(h, w), queries


def render_depth_sphere_trace(sdf_net: Mlp, cam: Camera,
                              max_steps: int = 100, eps: float = 1e-3,
                              t_max: float = 10.0):
    """Depth image via iterative marching on the SDF network.

    Returns (depth (h, w), query count); every network row evaluated
    during the march counts as one query.
    """
    origins, dirs = camera_rays(cam)
    _, t, _, converged, queries = sphere_trace(
        sdf_network_fn(sdf_net), origins, dirs, max_steps, eps, t_max)
    depth = np.where(converged, t, 0.0)
    return depth.reshape(cam.height, cam.width), queries


def benchmark_render(net, cam: Camera, method: str, max_steps: int = 100,
                     eps: float = 1e-3, t_max: float = 10.0,
                     threshold: float = 0.5):
    """Render a depth image and account for every network evaluation.

    method "prif" expects a PrifModel (queries == pixel count, always);
    "sphere_trace" expects an SDF Mlp. Returns (BenchReport, depth image).
    """
    start = time.perf_counter()
    if method == "prif":
        depth, _, queries = render_depth_prif(net, cam, threshold=threshold)
    elif method == "sphere_trace":
        depth, queries = render_depth_sphere_trace(net, cam, max_steps, eps,
                                                   t_max)
    else:
        raise ValueError(f"unknown benchmark method {method!r}")
    elapsed = time.perf_counter() - start
    rays = cam.width * cam.height
    return BenchReport(method=method, queries=int(queries),
                       wall_time=elapsed, rays=rays), depth


def evaluation_protocol(points, mesh: TriangleMesh, n_eval: int = 30000,
                        seed: int = 0) -> ChamferReport:
    """Chamfer between an extracted cloud and fresh ground-truth surface
    samples; both sides are capped at n_eval points."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        raise ValueError("empty extracted point cloud")
    rng = np.random.default_rng(seed)
    if len(points) > n_eval:
        points = points[rng.choice(len(points), size=n_eval, replace=False)]
    gt = sample_surface_points(mesh, n_eval, seed=seed + 1)
    return chamfer(points, gt)
