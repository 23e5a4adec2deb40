"""Ray-based neural surface representation toolkit.

Encodes oriented rays by their perpendicular foot from the origin, trains
small residual MLPs to map the encoding to a signed displacement and a
foreground mask, and provides the surrounding machinery: exact BVH ray
casting for supervision, a signed-distance + sphere-tracing baseline,
Chamfer evaluation, gradient-based outlier removal, latent-code shape
families with auto-decoding, camera-pose recovery, and a color head.
"""

from .cameras import (Camera, DEFAULT_FOV, DEFAULT_RIG_RADIUS,
                      DEFAULT_TARGET_RADIUS, camera_ray, camera_rays,
                      fibonacci_camera_rig, look_at_rotation)
from .dataset import (RayDataset, RayRecord, corrupt, generate_ray_dataset,
                      load_dataset, merge_datasets, points_to_rays,
                      save_dataset)
from .evaluation import (BenchReport, ChamferReport, benchmark_render,
                         chamfer, evaluation_protocol, render_depth_prif,
                         render_depth_sphere_trace)
from .geometry import (Bvh, Hit, Ray, TriangleMesh, build_bvh, cast_ray,
                       cast_rays, closest_points, mesh_hash, normalize_mesh,
                       sample_surface_points)
from .meshio import ParseError, load_mesh, load_ply_points, save_ply_points
from .model import (PrifModel, TrainConfig, auto_decode, color_forward,
                    extract_points, fit_color, load_model, outlier_filter,
                    prif_forward, prif_loss, prif_model_new,
                    ray_position_gradients, save_model, train)
from .nn import (AdamState, Mlp, MlpSpec, adam_step, backward, cosine_lr,
                 forward, load_checkpoint, mlp_new, save_checkpoint)
from .pose import (PoseParams, optimize_pose, pose_errors, pose_gradient,
                   pose_to_rays, render_mask, rodrigues, silhouette_loss)
from .rays import (RayEncoding, encode_ray, encode_rays, hit_point,
                   perpendicular_foot, signed_displacement)
from .sdf import (SphereTraceResult, load_sdf_model, load_sdf_samples,
                  sample_sdf_training_set, save_sdf_model, save_sdf_samples,
                  sdf_ground_truth, sdf_network_fn, sphere_trace,
                  sphere_trace_ray, train_sdf)
from .shapes import box, icosphere, icosphere_inradius, step_plate, tetrahedron

__version__ = "0.1.0"
