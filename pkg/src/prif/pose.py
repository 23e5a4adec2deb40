"""Differentiable camera-pose recovery against a frozen ray network.

The pose is a 6-vector delta on a base camera: an axis-angle rotation
applied to the camera-to-world matrix and a translation added to the
position. Each step renders the mask probabilities through the network at
the current pose and descends the mean squared silhouette difference; the
chain runs loss -> mask logits -> network input gradients ->  analytic
jacobians of the ray encoding with respect to the 6 pose parameters.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .cameras import Camera, pixel_directions_camera
from .model import PrifModel
from .nn import AdamState, adam_step, backward, forward

_SMALL_ANGLE = 1e-7


@dataclass
class PoseParams:
    """Axis-angle rotation (radians) and translation, both world-frame."""

    rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).copy()
        self.translation = np.asarray(self.translation,
                                      dtype=np.float64).copy()

    def copy(self) -> "PoseParams":
        return PoseParams(self.rotation.copy(), self.translation.copy())


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def rodrigues(w: np.ndarray) -> np.ndarray:
    """Rotation matrix of the axis-angle vector w."""
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w)
    K = skew(w)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * (K @ K)
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def rotate_with_jacobian(w: np.ndarray, v: np.ndarray):
    """(R(w) v, d(R v)/dw) for a batch of vectors v of shape (n, 3).

    The jacobian has shape (n, 3, 3) with J[:, :, i] = d(Rv)/dw_i; near
    w = 0 it reduces to the first-order -[Rv]_x form.
    """
    w = np.asarray(w, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    R = rodrigues(w)
    rv = v @ R.T
    theta2 = float(w @ w)
    J = np.empty((len(v), 3, 3))
    if theta2 < _SMALL_ANGLE ** 2:
        for i in range(3):
            e = np.zeros(3)
            e[i] = 1.0
            J[:, :, i] = np.cross(e, rv)
        return rv, J
    ImR = np.eye(3) - R
    for i in range(3):
        M = (w[i] * skew(w) + skew(np.cross(w, ImR[:, i]))) / theta2
        J[:, :, i] = rv @ M.T
    return rv, J


def pose_to_rays(pose: PoseParams, base_cam: Camera):
    """Rays of the base camera moved by the pose delta, with jacobians.

    Returns (origins, dirs, Jf, Jd): per-ray perpendicular-foot and
    direction jacobians of shape (n, 3, 6) over the parameter order
    (rotation xyz, translation xyz). The zero pose reproduces the base
    camera's rays exactly.
    """
    d_cam = pixel_directions_camera(base_cam.fov, base_cam.width,
                                    base_cam.height)
    v = d_cam @ base_cam.rotation.T          # base world directions, unit
    dirs, Jrot = rotate_with_jacobian(pose.rotation, v)
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    p = base_cam.position + pose.translation
    n = len(dirs)
    origins = np.broadcast_to(p, (n, 3)).copy()

    Jd = np.zeros((n, 3, 6))
    Jd[:, :, :3] = Jrot

    # f = p - (p.d) d;  df = (I - d d^T) dp - (d p^T + (p.d) I) dd
    pd = dirs @ p
    P = np.eye(3)[None] - dirs[:, :, None] * dirs[:, None, :]
    M = dirs[:, :, None] * p[None, None, :] + pd[:, None, None] * np.eye(3)[None]
    Jf = np.zeros((n, 3, 6))
    Jf[:, :, 3:] = P
    Jf[:, :, :3] = -np.einsum("nij,njk->nik", M, Jrot)
    return origins, dirs, Jf, Jd


def silhouette_loss(pred, target):
    """Mean squared difference and its per-pixel gradient."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"resolution mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff ** 2))
    return loss, 2.0 * diff / diff.size


def render_mask(model: PrifModel, pose: PoseParams, base_cam: Camera,
                latent=None) -> np.ndarray:
    """Predicted foreground probabilities at the posed camera, (h, w)."""
    a, _ = _mask_forward(model, pose, base_cam, latent)
    return a.reshape(base_cam.height, base_cam.width)


def _mask_forward(model: PrifModel, pose: PoseParams, base_cam: Camera,
                  latent=None):
    origins, dirs, Jf, Jd = pose_to_rays(pose, base_cam)
    foot = origins - np.sum(origins * dirs, axis=1, keepdims=True) * dirs
    enc = np.concatenate([foot, dirs], axis=1).astype(np.float32)
    if model.latent_dim:
        if latent is None:
            raise ValueError("latent-conditioned model needs a latent")
        codes = np.broadcast_to(np.asarray(latent, dtype=np.float32),
                                (len(enc), model.latent_dim))
        x = np.concatenate([enc, codes], axis=1)
    else:
        x = enc
    net = model.mask_net if model.mask_net is not None else model.trunk
    col = 0 if model.mask_net is not None else 1
    out, tape = forward(net, x)
    a = expit(out[:, col])
    return a, (net, tape, col, a, Jf, Jd, len(x))


def pose_gradient(model: PrifModel, pose: PoseParams, base_cam: Camera,
                  target: np.ndarray, latent=None):
    """(loss, 6-gradient) of the silhouette objective at the pose."""
    a, (net, tape, col, _, Jf, Jd, n) = _mask_forward(model, pose, base_cam,
                                                      latent)
    loss, dL_da = silhouette_loss(a.reshape(target.shape), target)
    dL_da = dL_da.reshape(n)
    dlogit = dL_da * a * (1.0 - a)
    og = np.zeros((n, net.spec.out_dim), dtype=np.float32)
    og[:, col] = dlogit.astype(np.float32)
    _, gx = backward(net, tape, og)
    gf = gx[:, :3].astype(np.float64)
    gd = gx[:, 3:6].astype(np.float64)
    grad = (np.einsum("ni,nik->k", gf, Jf)
            + np.einsum("ni,nik->k", gd, Jd))
    return loss, grad


def optimize_pose(model: PrifModel, target: np.ndarray, base_cam: Camera,
                  init_pose: PoseParams, steps: int = 500, lr: float = 1e-2,
                  latent=None):
    """Adam descent on the 6 pose parameters with frozen network weights.

    The axis-angle vector is re-wrapped whenever its magnitude reaches pi.
    Returns (PoseParams, per-step loss trace).
    """
    pose = init_pose.copy()
    params = [("rot", pose.rotation), ("trans", pose.translation)]
    state = AdamState()
    trace = []
    for step in range(steps):
        loss, grad = pose_gradient(model, pose, base_cam, target, latent)
        if not np.isfinite(loss):
            raise RuntimeError(f"non-finite pose loss at step {step}")
        adam_step(state, params, {"rot": grad[:3], "trans": grad[3:]}, lr)
        theta = np.linalg.norm(pose.rotation)
        if theta >= math.pi:
            pose.rotation *= 1.0 - 2.0 * math.pi / theta
        trace.append({"step": step, "loss": loss})
    return pose, trace


def rotation_angle_deg(R: np.ndarray) -> float:
    """Rotation angle of a rotation matrix, degrees."""
    c = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    return math.degrees(math.acos(c))


def pose_errors(est: PoseParams, true: PoseParams):
    """(rotation error degrees, translation error) between two deltas."""
    R_err = rodrigues(est.rotation) @ rodrigues(true.rotation).T
    return (rotation_angle_deg(R_err),
            float(np.linalg.norm(est.translation - true.translation)))
