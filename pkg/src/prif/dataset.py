"""Supervised ray datasets: generation from a mesh + camera rig,
corruption operators for denoising/completion studies, and the binary
on-disk container.

Each record is one ray: its encoding (anchor + direction), the ground
truth signed displacement s (foreground only; 0 sentinel otherwise), the
foreground flag, and a shape id. Records are ordered by (camera index,
row-major pixel) regardless of worker count.
"""

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rays as rays_mod
from .cameras import Camera, camera_rays
from .geometry import Bvh, TriangleMesh, cast_rays, mesh_hash
from .rays import ENCODING_MODES, anchor_to_foot, encode_rays

DATASET_MAGIC = b"PRIFDATA"

# one on-disk record: anchor 3xf32, direction 3xf32, s f32, a u8,
# shape_id u16, pad u8
RECORD_DTYPE = np.dtype([
    ("anchor", "<f4", (3,)),
    ("direction", "<f4", (3,)),
    ("s", "<f4"),
    ("a", "u1"),
    ("shape_id", "<u2"),
    ("pad", "u1"),
])


@dataclass(frozen=True)
class RayRecord:
    """One supervised ray, materialized from the packed arrays."""

    mode: str
    anchor: np.ndarray
    direction: np.ndarray
    s_gt: float
    a_gt: int
    shape_id: int
    hit: Optional[np.ndarray] = None


@dataclass
class RayDataset:
    mode: str
    anchors: np.ndarray      # (n, 3) float32
    directions: np.ndarray   # (n, 3) float32
    s: np.ndarray            # (n,) float32; 0 for background rays
    a: np.ndarray            # (n,) uint8
    shape_ids: np.ndarray    # (n,) uint16
    meta: dict = field(default_factory=dict)
    hits: Optional[np.ndarray] = None   # (n, 3) float32, diagnostics
    rgb: Optional[np.ndarray] = None    # (n, 3) float32, foreground colors

    def __len__(self) -> int:
        return len(self.s)

    @property
    def n_shapes(self) -> int:
        return int(self.shape_ids.max()) + 1 if len(self.s) else 0

    @property
    def foreground(self) -> np.ndarray:
        return self.a != 0

    def encodings(self) -> np.ndarray:
        """(n, 6) float32 network inputs: anchor then direction."""
        return np.concatenate([self.anchors, self.directions], axis=1)

    def record(self, i: int) -> RayRecord:
        return RayRecord(
            mode=self.mode,
            anchor=self.anchors[i].astype(np.float64),
            direction=self.directions[i].astype(np.float64),
            s_gt=float(self.s[i]),
            a_gt=int(self.a[i]),
            shape_id=int(self.shape_ids[i]),
            hit=None if self.hits is None else self.hits[i].astype(np.float64),
        )

    def select(self, idx) -> "RayDataset":
        return RayDataset(
            mode=self.mode,
            anchors=self.anchors[idx], directions=self.directions[idx],
            s=self.s[idx], a=self.a[idx], shape_ids=self.shape_ids[idx],
            meta=dict(self.meta),
            hits=None if self.hits is None else self.hits[idx],
            rgb=None if self.rgb is None else self.rgb[idx],
        )

    def shape_ranges(self) -> dict:
        """shape_id -> index array (ids are dense 0..n_shapes-1)."""
        return {int(s): np.nonzero(self.shape_ids == s)[0]
                for s in np.unique(self.shape_ids)}


def _cast_one_camera(mesh, bvh, cam, mode, capture_color):
    origins, dirs = camera_rays(cam)
    t, tri, points, hit = cast_rays(bvh, mesh, origins, dirs)
    anchors, dirs_unit = encode_rays(origins, dirs, mode)
    foot = anchor_to_foot(anchors, dirs_unit, mode)
    s = np.zeros(len(origins), dtype=np.float64)
    s[hit] = np.sum((points[hit] - foot[hit]) * dirs_unit[hit], axis=1)
    rgb = None
    if capture_color and mesh.colors is not None:
        rgb = np.zeros((len(origins), 3), dtype=np.float64)
        if np.any(hit):
            v0 = mesh.vertices[mesh.triangles[tri[hit], 0]]
            n0, n1, n2 = (mesh.colors[mesh.triangles[tri[hit], k]]
                          for k in range(3))
            e1 = mesh.vertices[mesh.triangles[tri[hit], 1]] - v0
            e2 = mesh.vertices[mesh.triangles[tri[hit], 2]] - v0
            rel = points[hit] - v0
            # barycentric via normal equations of the triangle plane
            d11 = np.sum(e1 * e1, axis=1)
            d12 = np.sum(e1 * e2, axis=1)
            d22 = np.sum(e2 * e2, axis=1)
            r1 = np.sum(rel * e1, axis=1)
            r2 = np.sum(rel * e2, axis=1)
            det = d11 * d22 - d12 * d12
            u = (d22 * r1 - d12 * r2) / det
            v = (d11 * r2 - d12 * r1) / det
            w = 1.0 - u - v
            rgb[hit] = w[:, None] * n0 + u[:, None] * n1 + v[:, None] * n2
    return anchors, dirs_unit, s, hit, points, rgb


def generate_ray_dataset(mesh: TriangleMesh, bvh: Bvh, rig, mode: str,
                         shape_id: int = 0, capture_color: bool = False,
                         keep_hits: bool = True, threads: int = 1,
                         progress=None) -> RayDataset:
    """One record per pixel per camera, cast against the mesh.

    Foreground rays carry s = (hit - foot) . d; background rays carry the
    0 sentinel. Per-camera work may run on a thread pool; record order is
    always (camera index, row-major pixel).
    """
    if mode not in ENCODING_MODES:
        raise ValueError(f"unknown encoding mode {mode!r}")
    if not rig:
        raise ValueError("camera rig is empty")
    results = [None] * len(rig)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futs = {pool.submit(_cast_one_camera, mesh, bvh, cam, mode,
                                capture_color): i
                    for i, cam in enumerate(rig)}
            for fut in futs:
                results[futs[fut]] = fut.result()
    else:
        for i, cam in enumerate(rig):
            results[i] = _cast_one_camera(mesh, bvh, cam, mode, capture_color)
            if progress is not None:
                progress(i + 1, len(rig))

    anchors = np.concatenate([r[0] for r in results]).astype(np.float32)
    dirs = np.concatenate([r[1] for r in results]).astype(np.float32)
    s = np.concatenate([r[2] for r in results]).astype(np.float32)
    a = np.concatenate([r[3] for r in results]).astype(np.uint8)
    hits = np.concatenate([r[4] for r in results]).astype(np.float32) \
        if keep_hits else None
    rgb = None
    if capture_color and results[0][5] is not None:
        rgb = np.concatenate([r[5] for r in results]).astype(np.float32)

    n = len(s)
    meta = {
        "mode": mode,
        "n_cameras": len(rig),
        "resolution": list(rig[0].resolution),
        "fov": float(rig[0].fov),
        "mesh_hash": mesh_hash(mesh),
        "cameras": [{"position": cam.position.tolist(),
                     "rotation": cam.rotation.tolist()} for cam in rig],
    }
    return RayDataset(mode=mode, anchors=anchors, directions=dirs, s=s, a=a,
                      shape_ids=np.full(n, shape_id, dtype=np.uint16),
                      meta=meta, hits=hits, rgb=rgb)


def merge_datasets(datasets) -> RayDataset:
    """Concatenate per-shape datasets; shape ids must already be dense."""
    datasets = list(datasets)
    if not datasets:
        raise ValueError("nothing to merge")
    mode = datasets[0].mode
    if any(d.mode != mode for d in datasets):
        raise ValueError("cannot merge datasets with mixed encoding modes")
    ids = sorted({int(i) for d in datasets for i in np.unique(d.shape_ids)})
    if ids != list(range(len(ids))):
        raise ValueError(f"shape ids are not dense: {ids}")
    has_hits = all(d.hits is not None for d in datasets)
    has_rgb = all(d.rgb is not None for d in datasets)
    return RayDataset(
        mode=mode,
        anchors=np.concatenate([d.anchors for d in datasets]),
        directions=np.concatenate([d.directions for d in datasets]),
        s=np.concatenate([d.s for d in datasets]),
        a=np.concatenate([d.a for d in datasets]),
        shape_ids=np.concatenate([d.shape_ids for d in datasets]),
        meta={"merged": [d.meta for d in datasets], "mode": mode},
        hits=np.concatenate([d.hits for d in datasets]) if has_hits else None,
        rgb=np.concatenate([d.rgb for d in datasets]) if has_rgb else None,
    )


def _reanchor(mode, anchors, dirs, new_hits):
    """Anchor of the ray through new_hits along the original direction."""
    if mode == "perp_foot":
        return (new_hits - np.sum(new_hits * dirs, axis=1, keepdims=True)
                * dirs)
    if mode == "plucker":
        return np.cross(new_hits, dirs)
    # raw: translate the stored origin laterally onto the new line
    foot_old = anchor_to_foot(anchors, dirs, "raw")
    foot_new = new_hits - np.sum(new_hits * dirs, axis=1, keepdims=True) * dirs
    return anchors + (foot_new - foot_old)


def corrupt(dataset: RayDataset, kind: str, level: float,
            seed: int) -> RayDataset:
    """Return a corrupted copy of the dataset.

    noise: perturb every foreground hit point with isotropic Gaussian noise
    of the given standard deviation, then recompute the anchor and s from
    the perturbed point along the original direction. partial: keep a
    uniformly random fraction `level` of the foreground records
    (background untouched). Deterministic per seed.
    """
    rng = np.random.default_rng(seed)
    if kind == "noise":
        if level < 0:
            raise ValueError("noise level must be >= 0")
        out = dataset.select(np.arange(len(dataset)))
        out.meta = dict(dataset.meta, corruption={"kind": kind, "level": level,
                                                  "seed": seed})
        if level == 0 or not np.any(dataset.foreground):
            return out
        fg = np.nonzero(dataset.foreground)[0]
        anchors = dataset.anchors[fg].astype(np.float64)
        dirs = dataset.directions[fg].astype(np.float64)
        foot = anchor_to_foot(anchors, dirs, dataset.mode)
        hits = foot + dataset.s[fg].astype(np.float64)[:, None] * dirs
        hits = hits + rng.normal(0.0, level, size=hits.shape)
        new_anchor = _reanchor(dataset.mode, anchors, dirs, hits)
        new_foot = anchor_to_foot(new_anchor, dirs, dataset.mode)
        out.anchors[fg] = new_anchor.astype(np.float32)
        out.s[fg] = np.sum((hits - new_foot) * dirs, axis=1).astype(np.float32)
        if out.hits is not None:
            out.hits[fg] = hits.astype(np.float32)
        return out
    if kind == "partial":
        if not (0 < level <= 1):
            raise ValueError("partial level must be in (0, 1]")
        fg = np.nonzero(dataset.foreground)[0]
        keep_n = int(round(level * len(fg)))
        kept_fg = fg[rng.permutation(len(fg))[:keep_n]]
        keep = np.concatenate([np.nonzero(~dataset.foreground)[0], kept_fg])
        keep.sort()
        out = dataset.select(keep)
        out.meta = dict(dataset.meta, corruption={"kind": kind, "level": level,
                                                  "seed": seed})
        return out
    raise ValueError(f"unknown corruption kind {kind!r}")


def points_to_rays(points, viewpoints, mode: str,
                   shape_id: int = 0) -> RayDataset:
    """Convert observed surface points into foreground ray records.

    Each point is paired with its nearest viewpoint c; the ray runs from c
    through the point. Raises when a point coincides with its viewpoint.
    """
    points = np.asarray(points, dtype=np.float64)
    viewpoints = np.asarray(viewpoints, dtype=np.float64)
    if len(points) == 0:
        raise ValueError("no observed points")
    if viewpoints.ndim != 2 or len(viewpoints) == 0:
        raise ValueError("no viewpoints")
    from scipy.spatial import cKDTree
    _, nearest = cKDTree(viewpoints).query(points)
    c = viewpoints[nearest]
    rel = points - c
    dist = np.linalg.norm(rel, axis=1)
    if np.any(dist < 1e-6):
        raise ValueError("observed point coincides with a viewpoint")
    d = rel / dist[:, None]
    anchors, d = encode_rays(c, d, mode)
    foot = anchor_to_foot(anchors, d, mode)
    s = np.sum((points - foot) * d, axis=1)
    n = len(points)
    return RayDataset(
        mode=mode,
        anchors=anchors.astype(np.float32),
        directions=d.astype(np.float32),
        s=s.astype(np.float32),
        a=np.ones(n, dtype=np.uint8),
        shape_ids=np.full(n, shape_id, dtype=np.uint16),
        meta={"mode": mode, "source": "points_to_rays"},
        hits=points.astype(np.float32),
    )


def save_dataset(path, dataset: RayDataset) -> None:
    """Binary container: magic, u32-length-prefixed JSON metadata, packed
    records, then optional float32 extension blocks declared in the
    header (hit points, colors)."""
    n = len(dataset)
    header = dict(dataset.meta)
    header.update({
        "mode": dataset.mode,
        "n_records": n,
        "has_hits": dataset.hits is not None,
        "has_rgb": dataset.rgb is not None,
    })
    blob = json.dumps(header).encode("utf-8")
    rec = np.zeros(n, dtype=RECORD_DTYPE)
    rec["anchor"] = dataset.anchors
    rec["direction"] = dataset.directions
    rec["s"] = dataset.s
    rec["a"] = dataset.a
    rec["shape_id"] = dataset.shape_ids
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(rec.tobytes())
        if dataset.hits is not None:
            fh.write(np.ascontiguousarray(dataset.hits, dtype="<f4").tobytes())
        if dataset.rgb is not None:
            fh.write(np.ascontiguousarray(dataset.rgb, dtype="<f4").tobytes())


def load_dataset(path) -> RayDataset:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != DATASET_MAGIC:
            raise ValueError(f"{path}: not a ray dataset file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        n = header["n_records"]
        rec = np.frombuffer(fh.read(RECORD_DTYPE.itemsize * n),
                            dtype=RECORD_DTYPE)
        hits = rgb = None
        if header.get("has_hits"):
            hits = np.frombuffer(fh.read(12 * n),
                                 dtype="<f4").reshape(n, 3).copy()
        if header.get("has_rgb"):
            rgb = np.frombuffer(fh.read(12 * n),
                                dtype="<f4").reshape(n, 3).copy()
    meta = {k: v for k, v in header.items()
            if k not in ("n_records", "has_hits", "has_rgb", "tensors")}
    return RayDataset(
        mode=header["mode"],
        anchors=rec["anchor"].astype(np.float32),
        directions=rec["direction"].astype(np.float32),
        s=rec["s"].astype(np.float32),
        a=rec["a"].astype(np.uint8),
        shape_ids=rec["shape_id"].astype(np.uint16),
        meta=meta,
        hits=hits,
        rgb=rgb,
    )
