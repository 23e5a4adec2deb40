"""Minimal dense-network engine in float32 numpy.

Residual MLP with optional layer normalization, exact reverse-mode
gradients with respect to both the parameters and the input batch, a
bias-corrected Adam update, and the cosine-annealed learning-rate
schedule. Everything is bitwise reproducible for a fixed seed on a single
thread.

Layer i computes z = x @ W_i + b_i. Hidden layers apply ReLU, add the
residual input when the layer is square, and normalize the block output;
the final layer is a plain affine map.
"""

import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

LN_EPS = 1e-5
CHECKPOINT_MAGIC = b"PRIFCKPT"


@dataclass(frozen=True)
class MlpSpec:
    in_dim: int
    out_dim: int
    depth: int            # number of affine layers
    width: int
    residual: bool = True
    layer_norm: bool = True
    activation: str = "relu"

    def layer_dims(self):
        """(fan_in, fan_out) per layer."""
        dims = [self.in_dim] + [self.width] * (self.depth - 1) + [self.out_dim]
        return list(zip(dims[:-1], dims[1:]))

    def to_dict(self):
        return {"in_dim": self.in_dim, "out_dim": self.out_dim,
                "depth": self.depth, "width": self.width,
                "residual": self.residual, "layer_norm": self.layer_norm,
                "activation": self.activation}

    @staticmethod
    def from_dict(d):
        return MlpSpec(**d)


@dataclass
class Mlp:
    spec: MlpSpec
    weights: list          # per-layer (fan_in, fan_out) float32
    biases: list           # per-layer (fan_out,) float32
    ln_gain: list          # per non-final layer (fan_out,) float32
    ln_offset: list
    n_evals: int = 0       # rows pushed through forward(), for benchmarks

    def parameters(self):
        """Stable (name, array) list; checkpoint and Adam order."""
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"w{i}", w))
            out.append((f"b{i}", b))
        for i, (g, o) in enumerate(zip(self.ln_gain, self.ln_offset)):
            out.append((f"g{i}", g))
            out.append((f"o{i}", o))
        return out

    def param_hash(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for name, arr in self.parameters():
            h.update(name.encode())
            h.update(arr.tobytes())
        return h.hexdigest()

    def copy(self) -> "Mlp":
        return Mlp(spec=self.spec,
                   weights=[w.copy() for w in self.weights],
                   biases=[b.copy() for b in self.biases],
                   ln_gain=[g.copy() for g in self.ln_gain],
                   ln_offset=[o.copy() for o in self.ln_offset])


def mlp_new(spec: MlpSpec, seed: int) -> Mlp:
    """Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero biases,
    unit layer-norm gains; deterministic per seed."""
    if spec.depth < 2:
        raise ValueError("spec needs depth >= 2")
    if spec.width < 1 or spec.in_dim < 1 or spec.out_dim < 1:
        raise ValueError("spec dimensions must be positive")
    if spec.activation != "relu":
        raise ValueError(f"unsupported activation {spec.activation!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in spec.layer_dims():
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound,
                                   size=(fan_in, fan_out)).astype(np.float32))
        biases.append(np.zeros(fan_out, dtype=np.float32))
    ln_gain = [np.ones(fan_out, dtype=np.float32)
               for _, fan_out in spec.layer_dims()[:-1]]
    ln_offset = [np.zeros(fan_out, dtype=np.float32)
                 for _, fan_out in spec.layer_dims()[:-1]]
    return Mlp(spec=spec, weights=weights, biases=biases,
               ln_gain=ln_gain, ln_offset=ln_offset)


def forward(mlp: Mlp, batch: np.ndarray):
    """Run the network on an (n, in_dim) batch.

    Returns (outputs, tape); the tape retains the per-layer activations
    needed by backward(). Raises on shape mismatch or non-finite input.
    """
    x = np.asarray(batch, dtype=np.float32)
    if x.ndim != 2 or x.shape[1] != mlp.spec.in_dim:
        raise ValueError(f"batch shape {x.shape} does not match "
                         f"input dim {mlp.spec.in_dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite values in input batch")
    spec = mlp.spec
    depth = spec.depth
    tape = {"x0": x, "layers": []}
    for i in range(depth):
        w, b = mlp.weights[i], mlp.biases[i]
        final = i == depth - 1
        z = x @ w + b
        h = z if final else np.maximum(z, 0.0)
        res = spec.residual and not final and w.shape[0] == w.shape[1]
        r = h + x if res else h
        rec = {"x": x, "z": z, "res": res, "ln": False}
        if spec.layer_norm and not final:
            mu = r.mean(axis=1, keepdims=True)
            var = r.var(axis=1, keepdims=True)
            inv = 1.0 / np.sqrt(var + np.float32(LN_EPS))
            xhat = (r - mu) * inv
            y = xhat * mlp.ln_gain[i] + mlp.ln_offset[i]
            rec.update(ln=True, inv=inv, xhat=xhat)
        else:
            y = r
        tape["layers"].append(rec)
        x = y
    mlp.n_evals += len(x)
    return x, tape


def backward(mlp: Mlp, tape, output_grads: np.ndarray):
    """Exact reverse-mode gradients of <outputs, output_grads>.

    Returns (param_grads, input_grads): param_grads is a dict keyed like
    Mlp.parameters(), input_grads has the batch's shape.
    """
    gy = np.asarray(output_grads, dtype=np.float32)
    n_layers = len(tape["layers"])
    if n_layers != mlp.spec.depth:
        raise ValueError("tape does not match network depth")
    if gy.shape != (len(tape["x0"]), mlp.spec.out_dim):
        raise ValueError(f"output_grads shape {gy.shape} does not match tape")
    grads = {}
    for i in range(n_layers - 1, -1, -1):
        rec = tape["layers"][i]
        w = mlp.weights[i]
        if rec["ln"]:
            xhat = rec["xhat"]
            grads[f"g{i}"] = (gy * xhat).sum(axis=0)
            grads[f"o{i}"] = gy.sum(axis=0)
            dxhat = gy * mlp.ln_gain[i]
            m1 = dxhat.mean(axis=1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
            dr = rec["inv"] * (dxhat - m1 - xhat * m2)
        else:
            dr = gy
        final = i == n_layers - 1
        dz = dr if final else dr * (rec["z"] > 0)
        grads[f"w{i}"] = rec["x"].T @ dz
        grads[f"b{i}"] = dz.sum(axis=0)
        gy = dz @ w.T
        if rec["res"]:
            gy = gy + dr
    return grads, gy


@dataclass
class AdamState:
    """First/second-moment accumulators, beta1=0.9, beta2=0.999, eps=1e-8."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(state: AdamState, params, grads: dict, lr: float) -> AdamState:
    """Bias-corrected Adam update, applied in place to the (name, array)
    parameter list. Missing grads leave their tensors untouched."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params:
        if name not in grads:
            continue
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}: "
                             f"{g.shape} vs {p.shape}")
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mh = m / c1
        vh = v / c2
        p -= (lr * mh / (np.sqrt(vh) + state.eps)).astype(p.dtype)
    return state


def cosine_lr(step: int, total_steps: int, lr_start: float,
              lr_end: float) -> float:
    """Cosine annealing from lr_start (step 0) to lr_end (step total);
    endpoints are exact."""
    if not (0 <= step <= total_steps):
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    c = 0.5 * (1.0 + np.cos(np.pi * step / total_steps))
    return float(lr_start * c + lr_end * (1.0 - c))


# ---------------------------------------------------------------------------
# checkpoint container: magic, u32-length-prefixed JSON header, then all
# tensors as little-endian float32 in header order.

def save_checkpoint(path, header: dict, tensors) -> None:
    tensors = list(tensors)
    header = dict(header)
    header["tensors"] = [{"name": name, "shape": list(arr.shape)}
                         for name, arr in tensors]
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Returns (header, {name: float32 array})."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        tensors = {}
        for t in header["tensors"]:
            shape = tuple(t["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(4 * count), dtype="<f4")
            tensors[t["name"]] = data.reshape(shape).astype(np.float32)
    return header, tensors


def mlp_to_tensors(mlp: Mlp, prefix: str = ""):
    return [(prefix + name, arr) for name, arr in mlp.parameters()]


def mlp_from_tensors(spec: MlpSpec, tensors: dict, prefix: str = "") -> Mlp:
    mlp = mlp_new(spec, seed=0)
    for name, arr in mlp.parameters():
        src = tensors[prefix + name]
        if src.shape != arr.shape:
            raise ValueError(f"checkpoint tensor {prefix + name} has shape "
                             f"{src.shape}, expected {arr.shape}")
        arr[...] = src
    return mlp
