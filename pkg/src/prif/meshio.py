"""ASCII OBJ / PLY readers and the PLY point-cloud writer.

OBJ: `v x y z [r g b]` and `f i j k ...` lines (1-based indices, optional
`/vt/vn` suffixes). PLY: ascii 1.0, a vertex element with x/y/z floats and
optional red/green/blue uchars, and a face element with vertex_indices.
N-gons are fan-triangulated; zero-area faces are dropped.
"""

from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import TriangleMesh, drop_degenerate_triangles


class ParseError(ValueError):
    """Malformed mesh file; message carries the offending line number."""

    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = str(path)
        self.lineno = lineno


def _fan(indices, path, lineno):
    if len(indices) < 3:
        raise ParseError(path, lineno, f"face with {len(indices)} vertices")
    return [(indices[0], indices[i], indices[i + 1])
            for i in range(1, len(indices) - 1)]


def load_mesh(path, fmt: Optional[str] = None) -> TriangleMesh:
    """Load a triangle mesh; format inferred from the suffix when not given."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"mesh file not found: {path}")
    if fmt is None:
        fmt = path.suffix.lstrip(".").lower()
    if fmt == "obj":
        return _load_obj(path)
    if fmt == "ply":
        return _load_ply(path)
    raise ValueError(f"unsupported mesh format {fmt!r} (expected obj or ply)")


def _load_obj(path: Path) -> TriangleMesh:
    vertices = []
    colors = []
    faces = []
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                try:
                    vals = [float(x) for x in parts[1:]]
                except ValueError:
                    raise ParseError(path, lineno, f"bad vertex line: {line!r}")
                if len(vals) < 3:
                    raise ParseError(path, lineno, "vertex needs 3 coordinates")
                vertices.append(vals[:3])
                colors.append(vals[3:6] if len(vals) >= 6 else None)
            elif tag == "f":
                idx = []
                for tok in parts[1:]:
                    head = tok.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError:
                        raise ParseError(path, lineno, f"bad face index {tok!r}")
                    if i < 1 or i > len(vertices):
                        raise ParseError(path, lineno,
                                         f"face index {i} out of range")
                    idx.append(i - 1)
                faces.extend(_fan(idx, path, lineno))
            # other tags (vn, vt, o, g, s, usemtl, ...) are ignored
    return _finish(path, vertices, colors, faces)


def _load_ply(path: Path) -> TriangleMesh:
    with open(path, "r") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError(path, 1, "missing 'ply' magic")

    n_vertex = n_face = 0
    vertex_props = []
    current = None
    body_start = None
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            if parts[1] != "ascii":
                raise ParseError(path, lineno, "only ascii PLY is supported")
        elif parts[0] == "element":
            current = parts[1]
            if current == "vertex":
                n_vertex = int(parts[2])
            elif current == "face":
                n_face = int(parts[2])
        elif parts[0] == "property" and current == "vertex":
            vertex_props.append(parts[-1])
        elif parts[0] == "end_header":
            body_start = lineno + 1
            break
    if body_start is None:
        raise ParseError(path, len(lines), "missing end_header")

    def prop_index(name):
        return vertex_props.index(name) if name in vertex_props else None

    ix, iy, iz = prop_index("x"), prop_index("y"), prop_index("z")
    if None in (ix, iy, iz):
        raise ParseError(path, body_start - 1, "vertex element lacks x/y/z")
    ir, ig, ib = prop_index("red"), prop_index("green"), prop_index("blue")
    has_color = None not in (ir, ig, ib)

    vertices, colors, faces = [], [], []
    lineno = body_start
    for k in range(n_vertex):
        if lineno > len(lines):
            raise ParseError(path, len(lines), "file truncated in vertex list")
        parts = lines[lineno - 1].split()
        if len(parts) < len(vertex_props):
            raise ParseError(path, lineno, "short vertex line")
        try:
            vertices.append([float(parts[ix]), float(parts[iy]), float(parts[iz])])
            if has_color:
                colors.append([int(parts[ir]) / 255.0, int(parts[ig]) / 255.0,
                               int(parts[ib]) / 255.0])
            else:
                colors.append(None)
        except ValueError:
            raise ParseError(path, lineno, f"bad vertex line: {lines[lineno - 1]!r}")
        lineno += 1
    for k in range(n_face):
        if lineno > len(lines):
            raise ParseError(path, len(lines), "file truncated in face list")
        parts = lines[lineno - 1].split()
        try:
            cnt = int(parts[0])
            idx = [int(x) for x in parts[1:1 + cnt]]
        except (ValueError, IndexError):
            raise ParseError(path, lineno, f"bad face line: {lines[lineno - 1]!r}")
        if len(idx) != cnt:
            raise ParseError(path, lineno, "face index count mismatch")
        for i in idx:
            if i < 0 or i >= n_vertex:
                raise ParseError(path, lineno, f"face index {i} out of range")
        faces.extend(_fan(idx, path, lineno))
        lineno += 1
    return _finish(path, vertices, colors, faces)


def _finish(path, vertices, colors, faces) -> TriangleMesh:
    if not vertices:
        raise ParseError(path, 1, "no vertices found")
    v = np.asarray(vertices, dtype=np.float64)
    t = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    t, _ = drop_degenerate_triangles(v, t)
    col = None
    if any(c is not None for c in colors):
        col = np.array([c if c is not None else [0.0, 0.0, 0.0]
                        for c in colors], dtype=np.float64)
    return TriangleMesh(vertices=v, triangles=t, colors=col)


def save_ply_points(path, points, colors=None) -> None:
    """Write a point cloud as ASCII PLY (optional uchar RGB)."""
    points = np.asarray(points, dtype=np.float64)
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(points)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        if colors is not None:
            fh.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        fh.write("end_header\n")
        if colors is None:
            for p in points:
                fh.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")
        else:
            rgb = np.clip(np.asarray(colors, dtype=np.float64), 0.0, 1.0)
            rgb = np.round(rgb * 255.0).astype(np.int64)
            for p, c in zip(points, rgb):
                fh.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g} {c[0]} {c[1]} {c[2]}\n")


def load_ply_points(path):
    """Read back a point cloud written by save_ply_points; (points, colors)."""
    mesh = _load_ply(Path(path))
    return mesh.vertices, mesh.colors
