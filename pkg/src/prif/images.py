"""Binary PGM / PPM image files.

Depth images are 16-bit P5 (maxval 65535, most significant byte first per
the netpbm convention) with depth mapped linearly from [0, t_max]; color
renders are 8-bit P6. Masks read back as float arrays in [0, 1].
"""

import numpy as np


def write_depth_pgm(path, depth, t_max: float) -> None:
    """depth: (h, w) float array; values clip into [0, t_max]."""
    depth = np.asarray(depth, dtype=np.float64)
    scaled = np.clip(depth / t_max, 0.0, 1.0) * 65535.0
    img = np.round(scaled).astype(">u2")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(img.tobytes())


def write_mask_pgm(path, mask) -> None:
    """mask: (h, w) floats in [0, 1]; written as 8-bit P5."""
    img = np.round(np.clip(np.asarray(mask, dtype=np.float64), 0, 1)
                   * 255.0).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read binary P5 of either depth; returns floats in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        # skip whitespace and comment lines between header tokens
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if magic != b"P5":
        raise ValueError(f"{path}: not a binary PGM file")
    dtype = ">u2" if maxval > 255 else np.uint8
    img = np.frombuffer(data[pos:], dtype=dtype, count=w * h).reshape(h, w)
    return img.astype(np.float64) / maxval


def write_ppm(path, rgb) -> None:
    """rgb: (h, w, 3) floats in [0, 1]; written as binary P6."""
    img = np.round(np.clip(np.asarray(rgb, dtype=np.float64), 0, 1)
                   * 255.0).astype(np.uint8)
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
