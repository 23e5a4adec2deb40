"""Command-line pipelines over the library.

Subcommands: gen-data, corrupt, train, train-sdf, render, extract,
eval-cd, bench, pose, auto-decode. Progress and results are emitted as
JSON lines on stdout; every subcommand honors --seed and --dry-run.
Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .cameras import (DEFAULT_FOV, DEFAULT_RIG_RADIUS, DEFAULT_TARGET_RADIUS,
                      Camera, fibonacci_camera_rig, look_at_rotation)
from .dataset import corrupt as corrupt_dataset
from .dataset import generate_ray_dataset, load_dataset, save_dataset
from .evaluation import benchmark_render, evaluation_protocol
from .geometry import build_bvh, normalize_mesh
from .images import read_pgm, write_depth_pgm, write_mask_pgm, write_ppm
from .meshio import load_mesh, load_ply_points, save_ply_points
from .model import (PrifModel, TrainConfig, auto_decode, extract_points,
                    fit_color, load_model, prif_model_new, save_model, train)
from .nn import MlpSpec, mlp_new
from .pose import PoseParams, optimize_pose, pose_errors, render_mask
from .sdf import (load_sdf_model, sample_sdf_training_set, save_sdf_model,
                  save_sdf_samples, train_sdf)
from .shapes import icosphere

PRESETS = {
    "desk": {"depth": 6, "width": 128, "cameras": 10, "res": 100,
             "epochs": 30},
    "paper": {"depth": 10, "width": 512, "cameras": 50, "res": 200,
              "epochs": 100},
}


def emit(**kv):
    print(json.dumps(kv), flush=True)


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; the CLI contract is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(1)


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int,
                   default=int(os.environ.get("PRIF_THREADS", "1")))
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded worker pools with ordered reductions")
    p.add_argument("--dry-run", action="store_true",
                   help="print the resolved config and touch no files")
    p.add_argument("--preset", choices=sorted(PRESETS), default=None)


def _resolve(args, key, preset_key=None):
    """Explicit flag beats preset beats hardcoded default."""
    val = getattr(args, key)
    if val is not None:
        return val
    if args.preset is not None:
        return PRESETS[args.preset][preset_key or key]
    return PRESETS["desk"][preset_key or key]


def _dry_run(args) -> bool:
    if args.dry_run:
        cfg = {k: v for k, v in vars(args).items() if k != "func"}
        emit(event="dry_run", config=cfg)
        return True
    return False


def _load_normalized_mesh(args):
    mesh = load_mesh(args.mesh)
    mesh, scale, center = normalize_mesh(mesh, args.target_radius)
    emit(event="mesh", vertices=mesh.n_vertices, triangles=mesh.n_triangles,
         scale=scale, center=center.tolist())
    return mesh


def _rig(args, n_cameras, res):
    return fibonacci_camera_rig(n_cameras, radius=args.radius, fov=args.fov,
                                resolution=(res, res))


def _threads(args) -> int:
    return 1 if args.deterministic else max(1, args.threads)


# ---------------------------------------------------------------------------


def cmd_gen_data(args):
    if _dry_run(args):
        return
    n_cams = _resolve(args, "cameras")
    res = _resolve(args, "res")
    mesh = _load_normalized_mesh(args)
    bvh = build_bvh(mesh)
    rig = _rig(args, n_cams, res)

    def progress(done, total):
        emit(event="camera", done=done, total=total)

    ds = generate_ray_dataset(mesh, bvh, rig, args.mode,
                              shape_id=args.shape_id,
                              capture_color=args.color,
                              threads=_threads(args),
                              progress=progress)
    save_dataset(args.out, ds)
    emit(event="dataset", records=len(ds),
         foreground=int(ds.foreground.sum()), out=args.out)


def cmd_corrupt(args):
    if _dry_run(args):
        return
    ds = load_dataset(getattr(args, "in"))
    out = corrupt_dataset(ds, args.kind, args.level, args.seed)
    save_dataset(args.out, out)
    emit(event="corrupt", kind=args.kind, level=args.level,
         records=len(out), out=args.out)


def cmd_train(args):
    if _dry_run(args):
        return
    ds = load_dataset(args.data)
    depth = _resolve(args, "depth")
    width = _resolve(args, "width")
    epochs = _resolve(args, "epochs")
    n_shapes = max(ds.n_shapes, 1)
    latent_dim = args.latent_dim if n_shapes > 1 or args.latent_dim else 0
    model = prif_model_new(ds.mode, depth=depth, width=width, seed=args.seed,
                           latent_dim=latent_dim, n_shapes=n_shapes,
                           separate_mask=args.separate_mask,
                           with_color=args.color_epochs > 0)
    cfg = TrainConfig(epochs=epochs, batch_size=args.batch,
                      lr_start=args.lr_start, lr_end=args.lr_end,
                      seed=args.seed)
    trace = train(model, ds, cfg)
    for entry in trace:
        emit(event="epoch", **entry)
    if args.color_epochs > 0:
        if ds.rgb is None:
            raise ValueError("--color-epochs needs a dataset generated "
                             "with --color")
        for entry in fit_color(model, ds, epochs=args.color_epochs,
                               batch_size=args.batch, seed=args.seed):
            emit(event="color_epoch", **entry)
    save_model(args.out, model)
    emit(event="checkpoint", out=args.out,
         final_loss=trace[-1]["loss"] if trace else None)


def cmd_train_sdf(args):
    if _dry_run(args):
        return
    depth = _resolve(args, "depth")
    width = _resolve(args, "width")
    epochs = _resolve(args, "epochs")
    mesh = _load_normalized_mesh(args)
    bvh = build_bvh(mesh)
    points, values = sample_sdf_training_set(mesh, bvh, args.samples,
                                             seed=args.seed)
    emit(event="sdf_samples", n=len(points))
    if args.samples_out:
        save_sdf_samples(args.samples_out, points, values)
    net = mlp_new(MlpSpec(3, 1, depth, width), seed=args.seed)
    trace = train_sdf(net, points, values, epochs=epochs,
                      batch_size=args.batch, lr_start=args.lr_start,
                      lr_end=args.lr_end, seed=args.seed)
    for entry in trace:
        emit(event="epoch", **entry)
    save_sdf_model(args.out, net)
    emit(event="checkpoint", out=args.out,
         final_loss=trace[-1]["loss"] if trace else None)


def _single_camera(args, res):
    pos = np.array([0.0, -args.radius, 0.0]) if args.cam_axis == "y" \
        else (np.array([0.0, 0.0, args.radius]) if args.cam_axis == "z"
              else np.array([args.radius, 0.0, 0.0]))
    return Camera(position=pos, rotation=look_at_rotation(pos),
                  fov=args.fov, resolution=(res, res))


def cmd_render(args):
    if _dry_run(args):
        return
    model = load_model(args.ckpt)
    cam = _single_camera(args, args.res)
    report, depth = benchmark_render(model, cam, "prif",
                                     threshold=args.threshold)
    write_depth_pgm(args.out, depth, t_max=args.t_max)
    emit(event="render", **report.to_dict(), out=args.out)
    if args.color_out:
        if model.color_net is None:
            raise ValueError("checkpoint has no color head")
        pts, cols, _ = extract_points(model, cameras=[cam], delta=None,
                                      threshold=args.threshold)
        from .cameras import camera_rays
        from .model import prif_forward, color_forward
        from .rays import encode_rays
        origins, dirs = camera_rays(cam)
        anchors, dirs = encode_rays(origins, dirs, model.mode)
        enc = np.concatenate([anchors, dirs], 1).astype(np.float32)
        _, a = prif_forward(model, enc, model.mode)
        rgb = color_forward(model, enc, model.mode)
        rgb[a < args.threshold] = 0.0
        write_ppm(args.color_out, rgb.reshape(args.res, args.res, 3))
        emit(event="color_render", out=args.color_out)


def cmd_extract(args):
    if _dry_run(args):
        return
    model = load_model(args.ckpt)
    n_cams = _resolve(args, "cameras")
    res = _resolve(args, "res")
    rig = _rig(args, n_cams, res)
    delta = None if args.no_filter else args.delta
    pts, cols, stats = extract_points(model, cameras=rig, delta=delta,
                                      threshold=args.threshold)
    save_ply_points(args.out, pts, cols)
    emit(event="extract", **stats, out=args.out)


def cmd_eval_cd(args):
    if _dry_run(args):
        return
    points, _ = load_ply_points(args.points)
    mesh = _load_normalized_mesh(args)
    report = evaluation_protocol(points, mesh, n_eval=args.n_eval,
                                 seed=args.seed)
    emit(event="chamfer", **report.to_dict())


def cmd_bench(args):
    if _dry_run(args):
        return
    cam = _single_camera(args, args.res)
    if args.method == "prif":
        net = load_model(args.ckpt)
    else:
        net = load_sdf_model(args.ckpt)
    report, depth = benchmark_render(net, cam, args.method,
                                     max_steps=args.max_steps, eps=args.eps,
                                     t_max=args.t_max)
    if args.out:
        write_depth_pgm(args.out, depth, t_max=args.t_max)
    emit(event="bench", **report.to_dict())


def cmd_pose(args):
    if _dry_run(args):
        return
    model = load_model(args.ckpt)
    cam = _single_camera(args, args.res)
    target = read_pgm(args.target)
    init = PoseParams(rotation=np.array(args.init_rot),
                      translation=np.array(args.init_trans))
    pose, trace = optimize_pose(model, target, cam, init, steps=args.steps,
                                lr=args.lr)
    for entry in trace[:: max(1, len(trace) // 20)]:
        emit(event="pose_step", **entry)
    emit(event="pose", rotation=pose.rotation.tolist(),
         translation=pose.translation.tolist(),
         final_loss=trace[-1]["loss"] if trace else None)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"rotation": pose.rotation.tolist(),
                       "translation": pose.translation.tolist()}, fh)


def cmd_auto_decode(args):
    if _dry_run(args):
        return
    model = load_model(args.ckpt)
    obs = load_dataset(args.obs)
    latent, trace = auto_decode(model, obs, steps=args.steps, lr=args.lr,
                                seed=args.seed)
    for entry in trace[:: max(1, len(trace) // 20)]:
        emit(event="decode_step", **entry)
    emit(event="latent", latent=latent.tolist(),
         final_loss=trace[-1]["loss"] if trace else None)
    if args.extract_out:
        n_cams = _resolve(args, "cameras")
        res = _resolve(args, "res")
        rig = _rig(args, n_cams, res)
        pts, cols, stats = extract_points(model, cameras=rig, latent=latent)
        save_ply_points(args.extract_out, pts, cols)
        emit(event="extract", **stats, out=args.extract_out)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="prif", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, **kw):
        sp = sub.add_parser(name, **kw)
        _add_common(sp)
        sp.set_defaults(func=fn)
        return sp

    sp = add("gen-data", cmd_gen_data, help="cast a camera rig against a mesh")
    sp.add_argument("--mesh", required=True)
    sp.add_argument("--cameras", type=int, default=None)
    sp.add_argument("--res", type=int, default=None)
    sp.add_argument("--mode", choices=["perp_foot", "plucker", "raw"],
                    default="perp_foot")
    sp.add_argument("--target-radius", type=float, default=DEFAULT_TARGET_RADIUS)
    sp.add_argument("--radius", type=float, default=DEFAULT_RIG_RADIUS)
    sp.add_argument("--fov", type=float, default=math.degrees(DEFAULT_FOV),
                    help="vertical field of view, degrees")
    sp.add_argument("--shape-id", type=int, default=0)
    sp.add_argument("--color", action="store_true",
                    help="record hit colors when the mesh has vertex colors")
    sp.add_argument("--out", required=True)

    sp = add("corrupt", cmd_corrupt, help="noise/partial dataset corruption")
    sp.add_argument("--in", required=True)
    sp.add_argument("--kind", choices=["noise", "partial"], required=True)
    sp.add_argument("--level", type=float, required=True)
    sp.add_argument("--out", required=True)

    sp = add("train", cmd_train, help="fit the ray network on a dataset")
    sp.add_argument("--data", required=True)
    sp.add_argument("--depth", type=int, default=None)
    sp.add_argument("--width", type=int, default=None)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--batch", type=int, default=1024)
    sp.add_argument("--lr-start", type=float, default=1e-4)
    sp.add_argument("--lr-end", type=float, default=1e-7)
    sp.add_argument("--latent-dim", type=int, default=0)
    sp.add_argument("--separate-mask", action="store_true",
                    help="dedicated same-architecture mask network")
    sp.add_argument("--color-epochs", type=int, default=0,
                    help="second-stage color-head epochs (trunk frozen)")
    sp.add_argument("--out", required=True)

    sp = add("train-sdf", cmd_train_sdf, help="fit the SDF baseline network")
    sp.add_argument("--mesh", required=True)
    sp.add_argument("--target-radius", type=float, default=DEFAULT_TARGET_RADIUS)
    sp.add_argument("--samples", type=int, default=100000)
    sp.add_argument("--samples-out", default=None)
    sp.add_argument("--depth", type=int, default=None)
    sp.add_argument("--width", type=int, default=None)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--batch", type=int, default=1024)
    sp.add_argument("--lr-start", type=float, default=1e-4)
    sp.add_argument("--lr-end", type=float, default=1e-7)
    sp.add_argument("--out", required=True)

    sp = add("render", cmd_render, help="depth (and color) image from a model")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--res", type=int, default=256)
    sp.add_argument("--radius", type=float, default=DEFAULT_RIG_RADIUS)
    sp.add_argument("--fov", type=float, default=math.degrees(DEFAULT_FOV))
    sp.add_argument("--cam-axis", choices=["x", "y", "z"], default="x")
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.add_argument("--t-max", type=float, default=5.0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--color-out", default=None)

    sp = add("extract", cmd_extract, help="surface point cloud from a model")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--cameras", type=int, default=None)
    sp.add_argument("--res", type=int, default=None)
    sp.add_argument("--radius", type=float, default=DEFAULT_RIG_RADIUS)
    sp.add_argument("--fov", type=float, default=math.degrees(DEFAULT_FOV))
    sp.add_argument("--delta", type=float, default=5.0)
    sp.add_argument("--no-filter", action="store_true")
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.add_argument("--out", required=True)

    sp = add("eval-cd", cmd_eval_cd, help="Chamfer vs ground-truth surface")
    sp.add_argument("--points", required=True)
    sp.add_argument("--mesh", required=True)
    sp.add_argument("--target-radius", type=float, default=DEFAULT_TARGET_RADIUS)
    sp.add_argument("--n-eval", type=int, default=30000)

    sp = add("bench", cmd_bench, help="query-count / wall-time benchmark")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--method", choices=["prif", "sphere_trace"],
                    required=True)
    sp.add_argument("--res", type=int, default=512)
    sp.add_argument("--radius", type=float, default=DEFAULT_RIG_RADIUS)
    sp.add_argument("--fov", type=float, default=math.degrees(DEFAULT_FOV))
    sp.add_argument("--cam-axis", choices=["x", "y", "z"], default="x")
    sp.add_argument("--max-steps", type=int, default=100)
    sp.add_argument("--eps", type=float, default=1e-3)
    sp.add_argument("--t-max", type=float, default=5.0)
    sp.add_argument("--out", default=None)

    sp = add("pose", cmd_pose, help="recover a camera pose from a silhouette")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--target", required=True, help="binary PGM mask")
    sp.add_argument("--res", type=int, default=64)
    sp.add_argument("--radius", type=float, default=DEFAULT_RIG_RADIUS)
    sp.add_argument("--fov", type=float, default=math.degrees(DEFAULT_FOV))
    sp.add_argument("--cam-axis", choices=["x", "y", "z"], default="x")
    sp.add_argument("--init-rot", type=float, nargs=3, default=[0.0, 0.0, 0.0])
    sp.add_argument("--init-trans", type=float, nargs=3,
                    default=[0.0, 0.0, 0.0])
    sp.add_argument("--steps", type=int, default=500)
    sp.add_argument("--lr", type=float, default=1e-2)
    sp.add_argument("--out", default=None)

    sp = add("auto-decode", cmd_auto_decode,
             help="fit a latent code to observations, weights frozen")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--obs", required=True, help="observation dataset file")
    sp.add_argument("--steps", type=int, default=300)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--cameras", type=int, default=None)
    sp.add_argument("--res", type=int, default=None)
    sp.add_argument("--radius", type=float, default=DEFAULT_RIG_RADIUS)
    sp.add_argument("--fov", type=float, default=math.degrees(DEFAULT_FOV))
    sp.add_argument("--extract-out", default=None)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if hasattr(args, "fov"):
        args.fov = math.radians(args.fov)
    try:
        args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        emit(event="error", message=str(exc))
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
