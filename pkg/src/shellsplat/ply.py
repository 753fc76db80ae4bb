"""Binary PLY serialization for Gaussian clouds.

Layout follows the de-facto splatting convention: per-vertex float32 properties
x y z, nx ny nz (zeros), f_dc_0..2, f_rest_* (channel-major), opacity (logit),
scale_0..2 (log), rot_0..3 (quaternion), little-endian binary. Round trips are
bit-exact for float32 clouds.
"""

from __future__ import annotations

import os

import numpy as np
import torch

from .model import GaussianCloud


def attribute_names(n_rest_coeffs: int) -> list:
    names = ["x", "y", "z", "nx", "ny", "nz"]
    names += [f"f_dc_{i}" for i in range(3)]
    names += [f"f_rest_{i}" for i in range(3 * n_rest_coeffs)]
    names += ["opacity"]
    names += [f"scale_{i}" for i in range(3)]
    names += [f"rot_{i}" for i in range(4)]
    return names


def save_ply(cloud: GaussianCloud, path):
    path = os.fspath(path)
    n = len(cloud)
    xyz = cloud.get_xyz.detach().cpu().numpy().astype(np.float32)
    normals = np.zeros_like(xyz)
    f_dc = (
        cloud._features_dc.detach()
        .transpose(1, 2)
        .flatten(start_dim=1)
        .cpu()
        .numpy()
        .astype(np.float32)
    )
    f_rest = (
        cloud._features_rest.detach()
        .transpose(1, 2)
        .flatten(start_dim=1)
        .cpu()
        .numpy()
        .astype(np.float32)
    )
    opacities = cloud._opacity.detach().cpu().numpy().astype(np.float32)
    scale = cloud._scaling.detach().cpu().numpy().astype(np.float32)
    rotation = cloud._rotation.detach().cpu().numpy().astype(np.float32)

    names = attribute_names(cloud._features_rest.shape[1])
    dtype_full = [(name, "<f4") for name in names]
    elements = np.empty(n, dtype=dtype_full)
    attributes = np.concatenate(
        (xyz, normals, f_dc, f_rest, opacities, scale, rotation), axis=1
    )
    elements[:] = list(map(tuple, attributes))

    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {n}\n"
        + "".join(f"property float {name}\n" for name in names)
        + "end_header\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(elements.tobytes())


def load_ply(path, requires_grad: bool = False) -> GaussianCloud:
    path = os.fspath(path)
    with open(path, "rb") as f:
        data = f.read()
    end_tag = b"end_header\n"
    end = data.find(end_tag)
    if end < 0:
        raise ValueError(f"{path}: missing PLY end_header")
    header_lines = data[:end].decode("ascii").splitlines()
    body = data[end + len(end_tag):]

    if not header_lines or header_lines[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file")
    n = None
    names = []
    fmt_ok = False
    for line in header_lines[1:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt_ok = parts[1] == "binary_little_endian"
        elif parts[0] == "element":
            if parts[1] != "vertex":
                raise ValueError(f"{path}: unsupported element '{parts[1]}'")
            n = int(parts[2])
        elif parts[0] == "property":
            if parts[1] != "float":
                raise ValueError(f"{path}: unsupported property type '{parts[1]}'")
            names.append(parts[2])
    if not fmt_ok:
        raise ValueError(f"{path}: expected binary_little_endian format")
    if n is None:
        raise ValueError(f"{path}: missing vertex element")

    n_rest_cols = sum(1 for name in names if name.startswith("f_rest_"))
    if n_rest_cols % 3 != 0:
        raise ValueError(f"{path}: f_rest count {n_rest_cols} not divisible by 3")
    n_rest = n_rest_cols // 3
    k = n_rest + 1
    degree = int(round(np.sqrt(k))) - 1
    if (degree + 1) ** 2 != k:
        raise ValueError(f"{path}: {n_rest} rest coefficients is not a full SH band")
    expected = set(attribute_names(n_rest))
    missing = expected.difference(names)
    if missing:
        raise ValueError(f"{path}: missing properties {sorted(missing)}")

    dtype_full = np.dtype([(name, "<f4") for name in names])
    if len(body) < n * dtype_full.itemsize:
        raise ValueError(
            f"{path}: truncated body ({len(body)} bytes for {n} vertices)"
        )
    elements = np.frombuffer(body[: n * dtype_full.itemsize], dtype=dtype_full).copy()

    def cols(prefix, count):
        return np.stack([elements[f"{prefix}{i}"] for i in range(count)], axis=1)

    xyz = np.stack([elements["x"], elements["y"], elements["z"]], axis=1)
    f_dc = cols("f_dc_", 3).reshape(n, 3, 1)
    f_rest = cols("f_rest_", 3 * n_rest).reshape(n, 3, n_rest) if n_rest else np.zeros((n, 3, 0), np.float32)
    opacity = elements["opacity"].reshape(n, 1)
    scaling = cols("scale_", 3)
    rotation = cols("rot_", 4)

    return GaussianCloud.from_arrays(
        positions=np.ascontiguousarray(xyz),
        rotations=np.ascontiguousarray(rotation),
        log_scales=np.ascontiguousarray(scaling),
        opacity_logits=np.ascontiguousarray(opacity),
        features_dc=torch.from_numpy(np.ascontiguousarray(f_dc)).transpose(1, 2),
        features_rest=torch.from_numpy(np.ascontiguousarray(f_rest)).transpose(1, 2),
        sh_degree=degree,
        requires_grad=requires_grad,
        dtype=torch.float32,
    )
