"""The ray-to-surface network: a trunk MLP maps an encoded ray (plus an
optional per-shape latent code) to a signed displacement and a foreground
logit. Optional extras: a separate same-architecture mask network, a
color head, and a latent-code table trained jointly with the weights.

Training minimizes cross-entropy on the mask plus mean absolute error on
the displacement over foreground rays. Point extraction renders every ray
with a single trunk evaluation and drops predictions whose displacement
gradient with respect to the ray position is large (the signature of a
depth discontinuity interpolated by the network).
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from .cameras import camera_rays
from .dataset import RayDataset
from .nn import (AdamState, Mlp, MlpSpec, adam_step, backward, cosine_lr,
                 forward, load_checkpoint, mlp_from_tensors, mlp_new,
                 save_checkpoint)
from .rays import ENCODING_MODES, anchor_to_foot, encode_rays

PROB_CLAMP = 1e-7


@dataclass
class PrifModel:
    trunk: Mlp                      # input 6 + latent_dim, output [s, logit]
    mode: str
    mask_net: Optional[Mlp] = None  # overrides the trunk's logit when present
    color_net: Optional[Mlp] = None
    latents: Optional[np.ndarray] = None   # (n_shapes, latent_dim) float32

    @property
    def latent_dim(self) -> int:
        return 0 if self.latents is None else self.latents.shape[1]

    @property
    def n_shapes(self) -> int:
        return 1 if self.latents is None else self.latents.shape[0]

    def geometry_parameters(self):
        """Parameters touched by geometry training (trunk + mask + codes)."""
        params = [("trunk." + n, a) for n, a in self.trunk.parameters()]
        if self.mask_net is not None:
            params += [("mask." + n, a) for n, a in self.mask_net.parameters()]
        if self.latents is not None:
            params.append(("latents", self.latents))
        return params

    def geometry_hash(self) -> str:
        import hashlib
        h = hashlib.sha256()
        h.update(self.trunk.param_hash().encode())
        if self.mask_net is not None:
            h.update(self.mask_net.param_hash().encode())
        return h.hexdigest()


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 1024
    lr_start: float = 1e-4
    lr_end: float = 1e-7
    seed: int = 0
    weight_s: float = 1.0
    weight_a: float = 1.0
    delta: float = 5.0     # outlier threshold carried along for extraction

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.lr_start <= 0 or self.lr_end <= 0 or self.lr_end > self.lr_start:
            raise ValueError("learning rates must be positive with lr_end <= lr_start")


def prif_model_new(mode: str = "perp_foot", depth: int = 6, width: int = 128,
                   seed: int = 0, latent_dim: int = 0, n_shapes: int = 1,
                   separate_mask: bool = False, with_color: bool = False,
                   residual: bool = True, layer_norm: bool = True) -> PrifModel:
    """Fresh model; the trunk consumes 6 ray scalars plus the latent code."""
    if mode not in ENCODING_MODES:
        raise ValueError(f"unknown encoding mode {mode!r}")
    in_dim = 6 + latent_dim
    trunk = mlp_new(MlpSpec(in_dim, 2, depth, width, residual, layer_norm),
                    seed)
    mask_net = None
    if separate_mask:
        mask_net = mlp_new(MlpSpec(in_dim, 1, depth, width, residual,
                                   layer_norm), seed + 1)
    color_net = None
    if with_color:
        color_net = mlp_new(MlpSpec(in_dim, 3, depth, width, residual,
                                    layer_norm), seed + 2)
    latents = None
    if latent_dim > 0:
        rng = np.random.default_rng(seed + 3)
        latents = rng.normal(0.0, 0.01,
                             size=(n_shapes, latent_dim)).astype(np.float32)
    return PrifModel(trunk=trunk, mode=mode, mask_net=mask_net,
                     color_net=color_net, latents=latents)


def _model_inputs(model: PrifModel, enc: np.ndarray, shape_ids=None,
                  latent=None) -> np.ndarray:
    enc = np.asarray(enc, dtype=np.float32)
    if model.latent_dim == 0:
        return enc
    if latent is not None:
        latent = np.asarray(latent, dtype=np.float32)
        codes = np.broadcast_to(latent, (len(enc), model.latent_dim))
    elif shape_ids is not None:
        shape_ids = np.asarray(shape_ids)
        if shape_ids.max(initial=0) >= model.n_shapes:
            raise ValueError("shape id outside the latent table")
        codes = model.latents[shape_ids]
    else:
        raise ValueError("latent-conditioned model needs shape_ids or a latent")
    return np.concatenate([enc, codes], axis=1)


def prif_forward(model: PrifModel, encodings: np.ndarray, mode: str,
                 shape_ids=None, latent=None):
    """(s, a) per ray; a is the sigmoid of the mask logit."""
    if mode != model.mode:
        raise ValueError(f"encoding mode {mode!r} does not match "
                         f"model mode {model.mode!r}")
    x = _model_inputs(model, encodings, shape_ids, latent)
    out, _ = forward(model.trunk, x)
    s = out[:, 0]
    if model.mask_net is not None:
        out_m, _ = forward(model.mask_net, x)
        logit = out_m[:, 0]
    else:
        logit = out[:, 1]
    return s, expit(logit)


def prif_loss(s, a, s_gt, a_gt, weight_s: float = 1.0, weight_a: float = 1.0):
    """(total, L_s, L_a): cross-entropy over all rays plus mean |s - s_gt|
    over foreground rays (0 when the batch has none)."""
    a = np.clip(np.asarray(a, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    a_gt = np.asarray(a_gt, dtype=np.float64)
    loss_a = float(np.mean(-a_gt * np.log(a) - (1.0 - a_gt) * np.log1p(-a)))
    fg = a_gt != 0
    if np.any(fg):
        loss_s = float(np.mean(np.abs(np.asarray(s, dtype=np.float64)[fg]
                                      - np.asarray(s_gt, dtype=np.float64)[fg])))
    else:
        loss_s = 0.0
    total = weight_a * loss_a + weight_s * loss_s
    return total, loss_s, loss_a


def _geometry_batch_grads(model: PrifModel, x, s_gt, a_gt, weight_s, weight_a):
    """Forward + loss + gradients for one mini-batch.

    Returns (grads dict, input grads, loss triple). The cross-entropy
    gradient is taken through the sigmoid before clamping (exact away from
    saturation, stable inside it).
    """
    n = len(x)
    out, tape = forward(model.trunk, x)
    s = out[:, 0]
    if model.mask_net is not None:
        out_m, tape_m = forward(model.mask_net, x)
        logit = out_m[:, 0]
    else:
        logit = out[:, 1]
    a = expit(logit)

    fg = a_gt != 0
    n_fg = int(np.count_nonzero(fg))
    dlogit = (weight_a / n) * (a - a_gt.astype(np.float32))
    ds = np.zeros(n, dtype=np.float32)
    if n_fg:
        ds[fg] = (weight_s / n_fg) * np.sign(s[fg] - s_gt[fg])

    og = np.zeros((n, 2), dtype=np.float32)
    og[:, 0] = ds
    if model.mask_net is None:
        og[:, 1] = dlogit
    grads_t, gx = backward(model.trunk, tape, og)
    grads = {"trunk." + k: v for k, v in grads_t.items()}
    if model.mask_net is not None:
        grads_m, gx_m = backward(model.mask_net, tape_m,
                                 dlogit[:, None].astype(np.float32))
        grads.update({"mask." + k: v for k, v in grads_m.items()})
        gx = gx + gx_m
    losses = prif_loss(s, a, s_gt, a_gt, weight_s, weight_a)
    return grads, gx, losses


def train(model: PrifModel, dataset: RayDataset, config: TrainConfig):
    """Shuffled mini-batch training with Adam and the cosine schedule.

    Latent codes (when present) are updated jointly with the weights.
    Returns the per-epoch loss trace; raises on a non-finite loss.
    """
    if dataset.mode != model.mode:
        raise ValueError(f"dataset mode {dataset.mode!r} does not match "
                         f"model mode {model.mode!r}")
    if model.latent_dim > 0 and dataset.n_shapes > model.n_shapes:
        raise ValueError("dataset contains shape ids outside the latent table")
    n = len(dataset)
    trace = []
    if config.epochs == 0 or n == 0:
        return trace

    enc = dataset.encodings()
    s_gt = dataset.s
    a_gt = dataset.a
    shape_ids = dataset.shape_ids

    params = model.geometry_parameters()
    state = AdamState()
    rng = np.random.default_rng(config.seed)
    batches = math.ceil(n / config.batch_size)
    total_steps = config.epochs * batches
    gstep = 0
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        sums = np.zeros(3)
        for b in range(batches):
            idx = perm[b * config.batch_size:(b + 1) * config.batch_size]
            x = _model_inputs(model, enc[idx],
                              shape_ids[idx] if model.latent_dim else None)
            grads, gx, losses = _geometry_batch_grads(
                model, x, s_gt[idx], a_gt[idx],
                config.weight_s, config.weight_a)
            if not np.isfinite(losses[0]):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch} step {b}: "
                    f"total={losses[0]}, L_s={losses[1]}, L_a={losses[2]}")
            if model.latent_dim:
                glat = np.zeros_like(model.latents)
                np.add.at(glat, shape_ids[idx], gx[:, 6:])
                grads["latents"] = glat
            lr = cosine_lr(gstep, total_steps, config.lr_start, config.lr_end)
            adam_step(state, params, grads, lr)
            gstep += 1
            sums += losses
        trace.append({"epoch": epoch, "loss": sums[0] / batches,
                      "loss_s": sums[1] / batches, "loss_a": sums[2] / batches,
                      "lr": lr})
    return trace


def displacement_input_gradients(model: PrifModel, encodings, shape_ids=None,
                                 latent=None, chunk: int = 32768):
    """d s / d input for every ray, shape (n, 6 + latent_dim)."""
    enc = np.asarray(encodings, dtype=np.float32)
    out = np.empty((len(enc), 6 + model.latent_dim), dtype=np.float32)
    for i in range(0, len(enc), chunk):
        x = _model_inputs(model, enc[i:i + chunk],
                          None if shape_ids is None else shape_ids[i:i + chunk],
                          latent)
        _, tape = forward(model.trunk, x)
        og = np.zeros((len(x), 2), dtype=np.float32)
        og[:, 0] = 1.0
        _, gx = backward(model.trunk, tape, og)
        out[i:i + chunk] = gx
    return out


def ray_position_gradients(model: PrifModel, encodings, shape_ids=None,
                           latent=None):
    """d s / d(ray position): input gradients with respect to the foot,
    projected off the direction, (I - d d^T) ds/df."""
    enc = np.asarray(encodings, dtype=np.float64)
    g = displacement_input_gradients(model, encodings, shape_ids,
                                     latent).astype(np.float64)[:, :3]
    d = enc[:, 3:6]
    return g - np.sum(g * d, axis=1, keepdims=True) * d


def outlier_filter(model: PrifModel, encodings, delta: float = 5.0,
                   shape_ids=None, latent=None) -> np.ndarray:
    """Keep-mask over rays: |ds/dp| < delta. Defined for the
    perpendicular-foot encoding only."""
    if model.mode != "perp_foot":
        raise ValueError("outlier filter requires the perp_foot encoding")
    gp = ray_position_gradients(model, encodings, shape_ids, latent)
    return np.linalg.norm(gp, axis=1) < delta


def extract_points(model: PrifModel, cameras=None, rays=None,
                   delta: Optional[float] = 5.0, threshold: float = 0.5,
                   shape_ids=None, latent=None, chunk: int = 65536):
    """Render rays once each and keep the confident, smooth hits.

    Rays come from a camera list (every pixel) or an (origins, dirs) pair.
    Returns (points, colors, stats); colors is None without a color head.
    The gradient filter runs only for perpendicular-foot models; pass
    delta=None to disable it.
    """
    if cameras is not None:
        per_cam = [camera_rays(c) for c in cameras]
        origins = np.concatenate([o for o, _ in per_cam])
        dirs = np.concatenate([d for _, d in per_cam])
    elif rays is not None:
        origins, dirs = rays
        origins = np.asarray(origins, dtype=np.float64)
        dirs = np.asarray(dirs, dtype=np.float64)
    else:
        raise ValueError("need cameras or rays")

    anchors, dirs = encode_rays(origins, dirs, model.mode)
    enc = np.concatenate([anchors, dirs], axis=1).astype(np.float32)
    n = len(enc)

    points, colors = [], []
    n_mask = n_kept = 0
    use_filter = delta is not None and model.mode == "perp_foot"
    for i in range(0, n, chunk):
        sl = slice(i, min(i + chunk, n))
        ids = None if shape_ids is None else np.asarray(shape_ids)[sl]
        x = _model_inputs(model, enc[sl], ids, latent)
        out, tape = forward(model.trunk, x)
        s = out[:, 0].astype(np.float64)
        if model.mask_net is not None:
            out_m, _ = forward(model.mask_net, x)
            a = expit(out_m[:, 0])
        else:
            a = expit(out[:, 1])
        keep = a >= threshold
        n_mask += int(np.count_nonzero(keep))
        if use_filter and np.any(keep):
            og = np.zeros((len(x), 2), dtype=np.float32)
            og[:, 0] = 1.0
            _, gx = backward(model.trunk, tape, og)
            g = gx.astype(np.float64)[:, :3]
            d = dirs[sl]
            gp = g - np.sum(g * d, axis=1, keepdims=True) * d
            keep &= np.linalg.norm(gp, axis=1) < delta
        n_kept += int(np.count_nonzero(keep))
        if not np.any(keep):
            continue
        foot = anchor_to_foot(anchors[sl][keep], dirs[sl][keep], model.mode)
        points.append(foot + s[keep, None] * dirs[sl][keep])
        if model.color_net is not None:
            out_c, _ = forward(model.color_net, x[keep])
            colors.append(expit(out_c))

    stats = {"n_rays": n, "n_mask_kept": n_mask, "n_points": n_kept}
    pts = np.concatenate(points) if points else np.zeros((0, 3))
    cols = None
    if model.color_net is not None:
        cols = np.concatenate(colors) if colors else np.zeros((0, 3))
    return pts, cols, stats


def auto_decode(model: PrifModel, observations: RayDataset,
                init_latent=None, steps: int = 300, lr: float = 1e-3,
                batch_size: int = 1024, seed: int = 0):
    """Recover a latent code for unseen observations with frozen weights.

    Only the latent vector is optimized (Adam on the geometry loss over
    the observation records). Returns (latent, per-step loss trace).
    """
    if model.latent_dim == 0:
        raise ValueError("model has no latent codes to decode into")
    if observations.mode != model.mode:
        raise ValueError("observation encoding mode does not match the model")
    if init_latent is None:
        latent = np.zeros(model.latent_dim, dtype=np.float32)
    else:
        latent = np.asarray(init_latent, dtype=np.float32).copy()
    if steps == 0:
        return latent, []

    enc = observations.encodings()
    s_gt = observations.s
    a_gt = observations.a
    n = len(observations)
    rng = np.random.default_rng(seed)
    params = [("latent", latent)]
    state = AdamState()
    trace = []
    for step in range(steps):
        idx = rng.permutation(n)[:batch_size] if n > batch_size \
            else np.arange(n)
        x = _model_inputs(model, enc[idx], latent=latent)
        _, gx, losses = _geometry_batch_grads(model, x, s_gt[idx], a_gt[idx],
                                              1.0, 1.0)
        if not np.isfinite(losses[0]):
            raise RuntimeError(f"non-finite loss at auto-decode step {step}")
        grads = {"latent": gx[:, 6:].sum(axis=0)}
        adam_step(state, params, grads, lr)
        trace.append({"step": step, "loss": losses[0]})
    return latent, trace


def color_forward(model: PrifModel, encodings, mode: str, shape_ids=None,
                  latent=None) -> np.ndarray:
    """RGB in [0, 1] per ray from the color head."""
    if model.color_net is None:
        raise ValueError("model has no color head")
    if mode != model.mode:
        raise ValueError("encoding mode does not match the model")
    x = _model_inputs(model, encodings, shape_ids, latent)
    out, _ = forward(model.color_net, x)
    return expit(out)


def fit_color(model: PrifModel, dataset: RayDataset, epochs: int = 30,
              batch_size: int = 1024, lr_start: float = 1e-4,
              lr_end: float = 1e-7, seed: int = 0):
    """Second-stage color fit: mean squared error between the color head's
    output and the observed RGB over foreground rays. The geometry trunk
    (and mask net) stay bitwise untouched."""
    if model.color_net is None:
        raise ValueError("model has no color head")
    if dataset.rgb is None:
        raise ValueError("dataset carries no color targets")
    if dataset.mode != model.mode:
        raise ValueError("dataset mode does not match the model")
    fg = np.nonzero(dataset.foreground)[0]
    if len(fg) == 0:
        raise ValueError("dataset has no foreground rays to fit color on")
    enc = dataset.encodings()[fg]
    target = dataset.rgb[fg]
    ids = dataset.shape_ids[fg] if model.latent_dim else None

    params = [("color." + k, v) for k, v in model.color_net.parameters()]
    state = AdamState()
    rng = np.random.default_rng(seed)
    n = len(fg)
    batches = math.ceil(n / batch_size)
    total_steps = max(epochs * batches, 1)
    gstep = 0
    trace = []
    for epoch in range(epochs):
        perm = rng.permutation(n)
        total = 0.0
        for b in range(batches):
            idx = perm[b * batch_size:(b + 1) * batch_size]
            x = _model_inputs(model, enc[idx],
                              None if ids is None else ids[idx])
            out, tape = forward(model.color_net, x)
            c = expit(out)
            diff = c - target[idx]
            loss = float(np.mean(diff.astype(np.float64) ** 2))
            if not np.isfinite(loss):
                raise RuntimeError(f"non-finite color loss at epoch {epoch}")
            og = (2.0 / diff.size) * diff * c * (1.0 - c)
            grads, _ = backward(model.color_net, tape, og.astype(np.float32))
            grads = {"color." + k: v for k, v in grads.items()}
            lr = cosine_lr(gstep, total_steps, lr_start, lr_end)
            adam_step(state, params, grads, lr)
            gstep += 1
            total += loss
        trace.append({"epoch": epoch, "loss": total / batches})
    return trace


# ---------------------------------------------------------------------------
# checkpoints

def save_model(path, model: PrifModel) -> None:
    header = {
        "kind": "prif",
        "mode": model.mode,
        "latent_dim": model.latent_dim,
        "shape_ids": list(range(model.n_shapes)) if model.latents is not None
        else [],
        "separate_mask": model.mask_net is not None,
        "has_color": model.color_net is not None,
        "trunk_spec": model.trunk.spec.to_dict(),
    }
    tensors = [("trunk." + n, a) for n, a in model.trunk.parameters()]
    if model.mask_net is not None:
        header["mask_spec"] = model.mask_net.spec.to_dict()
        tensors += [("mask." + n, a) for n, a in model.mask_net.parameters()]
    if model.color_net is not None:
        header["color_spec"] = model.color_net.spec.to_dict()
        tensors += [("color." + n, a) for n, a in model.color_net.parameters()]
    if model.latents is not None:
        tensors.append(("latents", model.latents))
    save_checkpoint(path, header, tensors)


def load_model(path) -> PrifModel:
    header, tensors = load_checkpoint(path)
    if header.get("kind") != "prif":
        raise ValueError(f"{path}: not a ray-model checkpoint")
    trunk = mlp_from_tensors(MlpSpec.from_dict(header["trunk_spec"]),
                             tensors, "trunk.")
    mask_net = None
    if header.get("separate_mask"):
        mask_net = mlp_from_tensors(MlpSpec.from_dict(header["mask_spec"]),
                                    tensors, "mask.")
    color_net = None
    if header.get("has_color"):
        color_net = mlp_from_tensors(MlpSpec.from_dict(header["color_spec"]),
                                     tensors, "color.")
    latents = tensors.get("latents")
    return PrifModel(trunk=trunk, mode=header["mode"], mask_net=mask_net,
                     color_net=color_net, latents=latents)
