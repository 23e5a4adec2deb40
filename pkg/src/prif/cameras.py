"""Pinhole cameras and the Fibonacci-lattice capture rig.

Convention: pixel x grows right, pixel y grows down, and the camera looks
along -z of its own frame, so the camera-to-world matrix has columns
(right, down, back). Rays pass through pixel centers.
"""

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Ray

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))

# Defaults shared by the data-generation pipeline and the CLI. The rig
# radius/fov pair keeps a radius-0.9 object inside every frustum with
# margin: the object subtends asin(0.9/2.5) ~ 21.1 deg against a 25 deg
# half-angle.
DEFAULT_TARGET_RADIUS = 0.9
DEFAULT_RIG_RADIUS = 2.5
DEFAULT_FOV = math.radians(50.0)


@dataclass(frozen=True)
class Camera:
    """Pose + intrinsics. `rotation` maps camera frame to world frame."""

    position: np.ndarray      # (3,)
    rotation: np.ndarray      # (3, 3), columns (right, down, back)
    fov: float                # vertical field of view, radians
    resolution: tuple         # (width, height)

    def __post_init__(self):
        object.__setattr__(self, "position",
                           np.asarray(self.position, dtype=np.float64))
        object.__setattr__(self, "rotation",
                           np.asarray(self.rotation, dtype=np.float64))
        w, h = self.resolution
        if w < 1 or h < 1:
            raise ValueError("resolution must be at least 1x1")
        err = float(np.abs(self.rotation.T @ self.rotation - np.eye(3)).max())
        if err > 1e-6:
            raise ValueError(f"rotation is not orthonormal (|R^T R - I| = {err:.3g})")

    @property
    def width(self) -> int:
        return int(self.resolution[0])

    @property
    def height(self) -> int:
        return int(self.resolution[1])

    @property
    def forward(self) -> np.ndarray:
        return -self.rotation[:, 2]


def look_at_rotation(position, target=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Camera-to-world rotation looking from `position` toward `target`.

    Image up follows world +z; if the view axis is within 1e-3 of +-z the
    up hint falls back to +x.
    """
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    fwd = target - position
    norm = np.linalg.norm(fwd)
    if norm == 0.0:
        raise ValueError("camera position coincides with the look target")
    fwd = fwd / norm
    z = np.array([0.0, 0.0, 1.0])
    if min(np.linalg.norm(fwd - z), np.linalg.norm(fwd + z)) < 1e-3:
        up_hint = np.array([1.0, 0.0, 0.0])
    else:
        up_hint = z
    right = np.cross(fwd, up_hint)
    right = right / np.linalg.norm(right)
    up = np.cross(right, fwd)
    return np.stack([right, -up, -fwd], axis=1)


def fibonacci_camera_rig(n: int, radius: float = DEFAULT_RIG_RADIUS,
                         fov: float = DEFAULT_FOV,
                         resolution=(200, 200)) -> list:
    """n cameras on a Fibonacci lattice of the given sphere, all looking
    at the origin: z_i = 1 - 2(i+0.5)/n, azimuth_i = i * golden angle."""
    if n < 1:
        raise ValueError("rig needs at least one camera")
    cams = []
    for i in range(n):
        z = 1.0 - 2.0 * (i + 0.5) / n
        rho = math.sqrt(max(0.0, 1.0 - z * z))
        phi = i * GOLDEN_ANGLE
        pos = radius * np.array([rho * math.cos(phi), rho * math.sin(phi), z])
        cams.append(Camera(position=pos, rotation=look_at_rotation(pos),
                           fov=fov, resolution=tuple(resolution)))
    return cams


def pixel_directions_camera(fov: float, width: int, height: int) -> np.ndarray:
    """Unit ray directions through all pixel centers, camera frame,
    row-major (h*w, 3)."""
    tan_half = math.tan(0.5 * fov)
    aspect = width / height
    px = (np.arange(width) + 0.5) / width
    py = (np.arange(height) + 0.5) / height
    x = (2.0 * px - 1.0) * tan_half * aspect
    y = (2.0 * py - 1.0) * tan_half
    xx, yy = np.meshgrid(x, y)
    d = np.stack([xx.ravel(), yy.ravel(), -np.ones(width * height)], axis=1)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def camera_rays(cam: Camera):
    """(origins, directions) for every pixel, row-major; both (h*w, 3)."""
    d_cam = pixel_directions_camera(cam.fov, cam.width, cam.height)
    d_world = d_cam @ cam.rotation.T
    d_world = d_world / np.linalg.norm(d_world, axis=1, keepdims=True)
    origins = np.broadcast_to(cam.position, d_world.shape).copy()
    return origins, d_world


def camera_ray(cam: Camera, px: int, py: int) -> Ray:
    """Ray through the center of pixel (px, py)."""
    if not (0 <= px < cam.width and 0 <= py < cam.height):
        raise ValueError(f"pixel ({px}, {py}) outside {cam.resolution}")
    tan_half = math.tan(0.5 * cam.fov)
    aspect = cam.width / cam.height
    x = (2.0 * (px + 0.5) / cam.width - 1.0) * tan_half * aspect
    y = (2.0 * (py + 0.5) / cam.height - 1.0) * tan_half
    d_cam = np.array([x, y, -1.0])
    d = cam.rotation @ d_cam
    d = d / np.linalg.norm(d)
    return Ray(p=cam.position.copy(), d=d)
