"""Signed-distance baseline: ground-truth SDF sampling from a mesh, an
L1-trained SDF network on the shared dense-network engine, and a naive
sphere tracer with query accounting.

The sign comes from ray-crossing parity along a fixed probe direction;
grazing hits retry with jittered directions, so the sign is reliable on
watertight fixtures only (the magnitude is always valid).
"""

import json
import logging
import math
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import Bvh, TriangleMesh, closest_points, count_ray_hits
from .nn import (AdamState, Mlp, MlpSpec, adam_step, backward, cosine_lr,
                 forward, load_checkpoint, mlp_from_tensors, save_checkpoint)

log = logging.getLogger(__name__)

SDF_MAGIC = b"PRIFSDFS"

# probe directions for the parity test; the first is used unless a ray
# grazes an edge or a near-parallel triangle
_PROBE_DIRS = np.array([
    [1.0, 1.0, 1.0],
    [0.8581163, 0.2860388, 0.4260584],
    [0.0905357, 0.6337502, 0.7682361],
    [0.7071068, -0.7071068, 0.0137231],
    [-0.2672612, 0.5345225, 0.8017837],
    [0.9937980, 0.0124144, 0.1104595],
], dtype=np.float64)
_PROBE_DIRS /= np.linalg.norm(_PROBE_DIRS, axis=1, keepdims=True)


@dataclass(frozen=True)
class SdfSample:
    point: np.ndarray
    sdf: float


@dataclass(frozen=True)
class SphereTraceResult:
    hit: Optional[np.ndarray]
    steps_used: int
    converged: bool
    queries: int


def inside_mask(mesh: TriangleMesh, points, warn_open: bool = True):
    """Parity-based inside test for a batch of points."""
    points = np.asarray(points, dtype=np.float64)
    if warn_open and not mesh.is_watertight():
        log.warning("mesh is not watertight; SDF sign from ray parity "
                    "is unreliable (magnitudes remain valid)")
    inside = np.zeros(len(points), dtype=bool)
    pending = np.arange(len(points))
    for d in _PROBE_DIRS:
        dirs = np.broadcast_to(d, (len(pending), 3))
        counts, grazing = count_ray_hits(mesh, points[pending], dirs)
        ok = ~grazing
        inside[pending[ok]] = counts[ok] % 2 == 1
        pending = pending[grazing]
        if pending.size == 0:
            break
    if pending.size:
        # every probe grazed; fall back to the last parity anyway
        inside[pending] = counts[grazing] % 2 == 1
    return inside


def sdf_ground_truth(mesh: TriangleMesh, bvh: Bvh, points,
                     warn_open: bool = True):
    """Signed distance per query point: magnitude from the closest
    triangle, sign -1 inside / +1 outside by ray parity."""
    points = np.asarray(points, dtype=np.float64)
    squeeze = points.ndim == 1
    if squeeze:
        points = points[None]
    dist, _, _ = closest_points(bvh, mesh, points)
    sign = np.where(inside_mask(mesh, points, warn_open=warn_open), -1.0, 1.0)
    out = sign * dist
    return float(out[0]) if squeeze else out


def sample_sdf_training_set(mesh: TriangleMesh, bvh: Bvh, n: int, seed: int,
                            sigma_far: float = 0.01, sigma_near: float = 0.003,
                            uniform_radius: float = 1.1):
    """(points, sdf) training pairs: 40% surface + N(0, 0.01), 40% surface
    + N(0, 0.003), 20% uniform in the bounding ball; deterministic."""
    if n < 1:
        raise ValueError("n must be >= 1")
    from .geometry import sample_surface_points
    rng = np.random.default_rng(seed)
    n_far = int(0.4 * n)
    n_near = int(0.4 * n)
    n_uni = n - n_far - n_near
    surf = sample_surface_points(mesh, n_far + n_near, seed=seed)
    pts_far = surf[:n_far] + rng.normal(0.0, sigma_far, size=(n_far, 3))
    pts_near = surf[n_far:] + rng.normal(0.0, sigma_near, size=(n_near, 3))
    u = rng.normal(size=(n_uni, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = uniform_radius * rng.random(n_uni) ** (1.0 / 3.0)
    pts_uni = u * r[:, None]
    points = np.concatenate([pts_far, pts_near, pts_uni])
    values = sdf_ground_truth(mesh, bvh, points)
    return points, values


def sphere_trace(sdf_fn, origins, dirs, max_steps: int = 100,
                 eps: float = 1e-3, t_max: float = 10.0):
    """March t <- t + sdf(p + t d) from t = 0 for a batch of rays.

    sdf_fn maps an (m, 3) array to m values; every row evaluated counts as
    one query. Returns (hit points, t, steps, converged, total queries);
    hit rows are zero where the trace missed.
    """
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    n = len(origins)
    t = np.zeros(n)
    steps = np.zeros(n, dtype=np.int64)
    converged = np.zeros(n, dtype=bool)
    active = np.arange(n)
    queries = 0
    for _ in range(max_steps):
        if active.size == 0:
            break
        p = origins[active] + t[active, None] * dirs[active]
        d = np.asarray(sdf_fn(p), dtype=np.float64).reshape(-1)
        queries += len(active)
        steps[active] += 1
        hit = d < eps
        converged[active[hit]] = True
        t[active[~hit]] += d[~hit]
        active = active[~hit]
        alive = t[active] <= t_max
        active = active[alive]
    points = origins + t[:, None] * dirs
    points[~converged] = 0.0
    return points, t, steps, converged, queries


def sphere_trace_ray(sdf_fn, ray, max_steps: int = 100, eps: float = 1e-3,
                     t_max: float = 10.0) -> SphereTraceResult:
    """Single-ray wrapper around sphere_trace."""
    pts, t, steps, conv, queries = sphere_trace(
        sdf_fn, ray.p[None], ray.d[None], max_steps, eps, t_max)
    return SphereTraceResult(hit=pts[0] if conv[0] else None,
                             steps_used=int(steps[0]),
                             converged=bool(conv[0]), queries=queries)


def sdf_network_fn(mlp: Mlp):
    """Wrap an SDF network as a point -> value field for the tracer."""
    def fn(points):
        out, _ = forward(mlp, np.asarray(points, dtype=np.float32))
        return out[:, 0].astype(np.float64)
    return fn


def train_sdf(mlp: Mlp, points, values, epochs: int = 30,
              batch_size: int = 1024, lr_start: float = 1e-4,
              lr_end: float = 1e-7, seed: int = 0):
    """L1 regression of the network onto (point, sdf) samples with the
    same Adam + cosine-schedule machinery as geometry training."""
    points = np.asarray(points, dtype=np.float32)
    values = np.asarray(values, dtype=np.float32)
    if len(points) == 0:
        raise ValueError("no SDF samples to train on")
    n = len(points)
    params = mlp.parameters()
    state = AdamState()
    rng = np.random.default_rng(seed)
    batches = math.ceil(n / batch_size)
    total_steps = max(epochs * batches, 1)
    gstep = 0
    trace = []
    for epoch in range(epochs):
        perm = rng.permutation(n)
        total = 0.0
        for b in range(batches):
            idx = perm[b * batch_size:(b + 1) * batch_size]
            out, tape = forward(mlp, points[idx])
            pred = out[:, 0]
            diff = pred - values[idx]
            loss = float(np.mean(np.abs(diff.astype(np.float64))))
            if not np.isfinite(loss):
                raise RuntimeError(f"non-finite SDF loss at epoch {epoch}")
            og = (np.sign(diff) / len(idx))[:, None].astype(np.float32)
            grads, _ = backward(mlp, tape, og)
            lr = cosine_lr(gstep, total_steps, lr_start, lr_end)
            adam_step(state, params, grads, lr)
            gstep += 1
            total += loss
        trace.append({"epoch": epoch, "loss": total / batches})
    return trace


def save_sdf_samples(path, points, values) -> None:
    """Sample container: magic, JSON header, then 16-byte records
    (point 3xf32, sdf f32)."""
    points = np.asarray(points, dtype="<f4")
    values = np.asarray(values, dtype="<f4")
    header = json.dumps({"n_records": len(points)}).encode("utf-8")
    rec = np.concatenate([points, values[:, None]], axis=1).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(SDF_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(rec).tobytes())


def load_sdf_samples(path):
    with open(path, "rb") as fh:
        if fh.read(8) != SDF_MAGIC:
            raise ValueError(f"{path}: not an SDF sample file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        n = header["n_records"]
        rec = np.frombuffer(fh.read(16 * n), dtype="<f4").reshape(n, 4)
    return rec[:, :3].astype(np.float32), rec[:, 3].astype(np.float32)


def save_sdf_model(path, mlp: Mlp) -> None:
    save_checkpoint(path, {"kind": "sdf", "spec": mlp.spec.to_dict()},
                    mlp.parameters())


def load_sdf_model(path) -> Mlp:
    header, tensors = load_checkpoint(path)
    if header.get("kind") != "sdf":
        raise ValueError(f"{path}: not an SDF network checkpoint")
    return mlp_from_tensors(MlpSpec.from_dict(header["spec"]), tensors)
