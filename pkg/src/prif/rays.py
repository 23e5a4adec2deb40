"""Ray parametrizations and the hit-point / signed-displacement algebra.

A ray (p, d) with unit direction d can be re-anchored so that translating
the origin along the direction does not change the representation:

* ``perp_foot``: anchor = d x (p x d), the point on the ray's supporting
  line closest to the world origin,
* ``plucker``: anchor = p x d, the classical moment vector,
* ``raw``: anchor = p itself (aliased; kept for ablation studies).

For perpendicular-foot anchors the surface hit point of a ray is a single
scalar away: h = s * d + f, where s is the signed displacement from the
foot to the hit point along d.
"""

from dataclasses import dataclass

import numpy as np

ENCODING_MODES = ("perp_foot", "plucker", "raw")

# Directions this far from unit length are rejected; anything closer is
# silently renormalized (camera math accumulates rounding).
UNIT_TOL = 1e-4


@dataclass(frozen=True)
class RayEncoding:
    """A network-facing ray: 3-vector anchor plus unit direction."""

    mode: str
    anchor: np.ndarray
    direction: np.ndarray

    def as_array(self) -> np.ndarray:
        """Concatenated (anchor, direction) row of 6 scalars."""
        return np.concatenate([self.anchor, self.direction])


def _check_unit(d: np.ndarray) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    norms = np.linalg.norm(d, axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        worst = float(np.max(np.abs(norms - 1.0)))
        raise ValueError(f"direction not unit length (|norm - 1| = {worst:.3g})")
    return d / norms[..., None]


def perpendicular_foot(p, d) -> np.ndarray:
    """Closest point to the world origin on the line through p along d.

    Accepts single vectors or (..., 3) batches. Computed as d x (p x d),
    which equals p - (p . d) d for unit d.
    """
    p = np.asarray(p, dtype=np.float64)
    d = _check_unit(d)
    return np.cross(d, np.cross(p, d))


def encode_ray(ray, mode: str) -> RayEncoding:
    """Encode a single Ray (anything with .p and .d, or a (p, d) pair)."""
    if hasattr(ray, "p"):
        p, d = ray.p, ray.d
    else:
        p, d = ray
    anchor, d = encode_rays(np.asarray(p)[None], np.asarray(d)[None], mode)
    return RayEncoding(mode=mode, anchor=anchor[0], direction=d[0])


def encode_rays(p: np.ndarray, d: np.ndarray, mode: str):
    """Vectorized encoding: (n, 3) origins and directions -> (anchors, dirs)."""
    if mode not in ENCODING_MODES:
        raise ValueError(f"unknown encoding mode {mode!r}")
    p = np.asarray(p, dtype=np.float64)
    d = _check_unit(d)
    if mode == "perp_foot":
        anchor = np.cross(d, np.cross(p, d))
    elif mode == "plucker":
        anchor = np.cross(p, d)
    else:
        anchor = p.copy()
    return anchor, d


def anchor_to_foot(anchor: np.ndarray, d: np.ndarray, mode: str) -> np.ndarray:
    """Recover the perpendicular foot from any of the three anchor kinds.

    plucker moments satisfy f = d x m; raw origins go through the foot
    projection; perp_foot anchors are returned as-is.
    """
    anchor = np.asarray(anchor, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if mode == "perp_foot":
        return anchor
    if mode == "plucker":
        return np.cross(d, anchor)
    if mode == "raw":
        return anchor - np.sum(anchor * d, axis=-1, keepdims=True) * d
    raise ValueError(f"unknown encoding mode {mode!r}")


def hit_point(f, d, s) -> np.ndarray:
    """Hit point s * d + f. Broadcasts over leading dimensions."""
    f = np.asarray(f, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    return s[..., None] * d + f


def signed_displacement(f, d, h, tol: float = 1e-4) -> np.ndarray:
    """Displacement (h - f) . d of an on-line point h from the foot f.

    Raises if h is farther than `tol` from the line through f along d.
    """
    f = np.asarray(f, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    rel = h - f
    s = np.sum(rel * d, axis=-1)
    off = rel - s[..., None] * d
    max_off = float(np.max(np.linalg.norm(off, axis=-1), initial=0.0))
    if max_off > tol:
        raise ValueError(f"point is off the ray line by {max_off:.3g}")
    return s
