"""Dataset ingestion: COLMAP text models, images, PFM depth maps, scale alignment.

Cameras use the COLMAP convention (x_cam = R @ x_world + t, +z forward). Only
SIMPLE_PINHOLE and PINHOLE camera models are accepted; images and depth maps are
matched to views by file stem.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .model import CameraView


class IngestError(ValueError):
    pass


@dataclass
class SparsePointCloud:
    positions: np.ndarray  # (M,3) float64
    colors: np.ndarray  # (M,3) float32 in [0,1]
    track_lengths: np.ndarray  # (M,) int64

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.float32).reshape(-1, 3)
        self.track_lengths = np.asarray(self.track_lengths, dtype=np.int64).reshape(-1)
        m = self.positions.shape[0]
        if self.colors.shape[0] != m or self.track_lengths.shape[0] != m:
            raise IngestError("point cloud arrays disagree on point count")

    def __len__(self):
        return self.positions.shape[0]


@dataclass
class ColmapScene:
    views: list
    points: SparsePointCloud
    scale_applied: Optional[float] = None


def _strip_comments(lines):
    for line in lines:
        line = line.strip()
        if line and not line.startswith("#"):
            yield line


def read_colmap_text(model_dir) -> ColmapScene:
    """Parse cameras.txt / images.txt / points3D.txt from a COLMAP text model."""
    model_dir = Path(model_dir)
    for fname in ("cameras.txt", "images.txt", "points3D.txt"):
        if not (model_dir / fname).exists():
            raise IngestError(f"missing {fname} in {model_dir}")

    cameras = {}
    with open(model_dir / "cameras.txt") as f:
        for line in _strip_comments(f):
            elems = line.split()
            cam_id = int(elems[0])
            model = elems[1]
            width, height = int(elems[2]), int(elems[3])
            params = [float(x) for x in elems[4:]]
            if model == "SIMPLE_PINHOLE":
                fx = fy = params[0]
                cx, cy = params[1], params[2]
            elif model == "PINHOLE":
                fx, fy, cx, cy = params[:4]
            else:
                raise IngestError(
                    f"camera {cam_id}: unsupported model '{model}' "
                    "(expected SIMPLE_PINHOLE or PINHOLE)"
                )
            cameras[cam_id] = (width, height, fx, fy, cx, cy)

    views = []
    with open(model_dir / "images.txt") as f:
        lines = [ln.strip() for ln in f if not ln.strip().startswith("#")]
    i = 0
    while i < len(lines):
        if not lines[i]:
            i += 1
            continue
        elems = lines[i].split()
        # pose line; the following line holds the (possibly empty) 2D points
        if len(elems) < 10:
            raise IngestError(f"images.txt: malformed record '{lines[i][:60]}'")
        qvec = np.array([float(x) for x in elems[1:5]])
        tvec = np.array([float(x) for x in elems[5:8]])
        cam_id = int(elems[8])
        name = elems[9]
        if cam_id not in cameras:
            raise IngestError(f"image '{name}' references unknown camera {cam_id}")
        width, height, fx, fy, cx, cy = cameras[cam_id]
        views.append(
            CameraView(
                view_id=Path(name).stem,
                width=width,
                height=height,
                fx=fx,
                fy=fy,
                cx=cx,
                cy=cy,
                qvec=qvec,
                tvec=tvec,
            )
        )
        i += 2
    views.sort(key=lambda v: v.view_id)
    ids = [v.view_id for v in views]
    if len(set(ids)) != len(ids):
        raise IngestError("duplicate image stems in images.txt")

    positions, colors, tracks = [], [], []
    with open(model_dir / "points3D.txt") as f:
        for line in _strip_comments(f):
            elems = line.split()
            positions.append([float(x) for x in elems[1:4]])
            colors.append([float(x) / 255.0 for x in elems[4:7]])
            track = elems[8:]
            if len(track) % 2 != 0:
                raise IngestError("points3D.txt: odd-length track")
            tracks.append(len(track) // 2)
    points = SparsePointCloud(
        positions=np.array(positions, dtype=np.float64).reshape(-1, 3),
        colors=np.array(colors, dtype=np.float32).reshape(-1, 3),
        track_lengths=np.array(tracks, dtype=np.int64),
    )
    return ColmapScene(views=views, points=points)


def write_colmap_text(model_dir, views, points: SparsePointCloud):
    """Write a minimal COLMAP text model (one PINHOLE camera per view)."""
    model_dir = Path(model_dir)
    model_dir.mkdir(parents=True, exist_ok=True)
    with open(model_dir / "cameras.txt", "w") as f:
        f.write("# Camera list: CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]\n")
        for i, v in enumerate(views, start=1):
            f.write(
                f"{i} PINHOLE {v.width} {v.height} "
                f"{float(v.fx)!r} {float(v.fy)!r} {float(v.cx)!r} {float(v.cy)!r}\n"
            )
    with open(model_dir / "images.txt", "w") as f:
        f.write("# Image list: IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME\n")
        for i, v in enumerate(views, start=1):
            q = " ".join(repr(float(x)) for x in v.qvec)
            t = " ".join(repr(float(x)) for x in v.tvec)
            f.write(f"{i} {q} {t} {i} {v.view_id}.png\n")
            f.write("\n")
    with open(model_dir / "points3D.txt", "w") as f:
        f.write("# 3D point list: POINT3D_ID X Y Z R G B ERROR TRACK[]\n")
        for j in range(len(points)):
            p = points.positions[j]
            c = np.clip(np.round(points.colors[j] * 255.0), 0, 255).astype(int)
            track = " ".join(
                f"{k + 1} {j}" for k in range(int(points.track_lengths[j]))
            )
            f.write(
                f"{j + 1} {float(p[0])!r} {float(p[1])!r} {float(p[2])!r} "
                f"{c[0]} {c[1]} {c[2]} 0.0 {track}".rstrip() + "\n"
            )


# -- rasters -----------------------------------------------------------------


def load_image(path) -> np.ndarray:
    """PNG/JPG -> (H,W,3) float32 in [0,1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr


def save_image_png(path, arr):
    arr = np.asarray(arr)
    data = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(os.fspath(path))


def save_mask_png(path, mask):
    mask = np.asarray(mask, dtype=bool)
    Image.fromarray(mask).convert("1").save(os.fspath(path))


def load_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127


def read_pfm(path) -> np.ndarray:
    """Grayscale PFM -> (H,W) float32, top-down row order."""
    with open(path, "rb") as f:
        header = f.readline().rstrip()
        if header == b"Pf":
            channels = 1
        elif header == b"PF":
            channels = 3
        else:
            raise IngestError(f"{path}: not a PFM file (header {header!r})")
        dims = f.readline()
        while dims.startswith(b"#"):
            dims = f.readline()
        m = re.match(rb"^(\d+)\s+(\d+)\s*$", dims)
        if not m:
            raise IngestError(f"{path}: malformed PFM dimensions line")
        width, height = int(m.group(1)), int(m.group(2))
        scale = float(f.readline().rstrip())
        if scale == 0:
            raise IngestError(f"{path}: PFM scale must be nonzero")
        endian = "<" if scale < 0 else ">"
        count = width * height * channels
        payload = f.read(count * 4)
        if len(payload) != count * 4:
            raise IngestError(f"{path}: truncated PFM payload")
        data = np.frombuffer(payload, dtype=endian + "f4")
    shape = (height, width) if channels == 1 else (height, width, 3)
    arr = data.reshape(shape)
    return np.ascontiguousarray(np.flipud(arr)).astype(np.float32)


def write_pfm(path, arr, little_endian: bool = True):
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim != 2:
        raise IngestError("write_pfm expects a 2D depth array")
    scale = -1.0 if little_endian else 1.0
    data = np.flipud(arr).astype("<f4" if little_endian else ">f4")
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{arr.shape[1]} {arr.shape[0]}\n".encode("ascii"))
        f.write(f"{scale}\n".encode("ascii"))
        f.write(data.tobytes())


def attach_rasters(views, images_dir=None, depths_dir=None, require_depth=False):
    """Attach per-view image (.png/.jpg) and depth (.pfm) rasters by file stem."""
    out = []
    for v in views:
        image = None
        depth = None
        if images_dir is not None:
            found = None
            for ext in (".png", ".jpg", ".jpeg", ".PNG", ".JPG"):
                cand = Path(images_dir) / f"{v.view_id}{ext}"
                if cand.exists():
                    found = cand
                    break
            if found is None:
                raise IngestError(f"no image for view '{v.view_id}' in {images_dir}")
            image = load_image(found)
        if depths_dir is not None:
            cand = Path(depths_dir) / f"{v.view_id}.pfm"
            if not cand.exists():
                if require_depth:
                    raise IngestError(f"no depth map for view '{v.view_id}' in {depths_dir}")
            else:
                depth = read_pfm(cand)
        if require_depth and depth is None:
            raise IngestError(f"view '{v.view_id}' is missing a depth map")
        out.append(v.replace(image=image, depth=depth))
    return out


# -- scale alignment ----------------------------------------------------------


class ScaleAlignmentError(IngestError):
    pass


def align_scale(scene: ColmapScene, views, min_observations: int = 20):
    """Median ratio depth_map / SfM camera-space depth over all usable projections.

    Returns (scale, n_observations). A usable observation is a sparse point that
    projects in front of a camera, inside the image, onto a finite depth value.
    """
    if scene.scale_applied is not None:
        raise ScaleAlignmentError(
            f"scene already carries scale {scene.scale_applied}; refusing to re-align"
        )
    ratios = []
    pts = scene.points.positions
    if len(pts) == 0:
        raise ScaleAlignmentError("no sparse points to align")
    for v in views:
        if v.depth is None:
            continue
        cam = v.world_to_camera(pts)
        z = cam[:, 2]
        ok = z > 1e-9
        u = np.full(len(pts), -1.0)
        w = np.full(len(pts), -1.0)
        u[ok] = v.fx * cam[ok, 0] / z[ok] + v.cx
        w[ok] = v.fy * cam[ok, 1] / z[ok] + v.cy
        ui = np.rint(u).astype(int)
        wi = np.rint(w).astype(int)
        ok &= (ui >= 0) & (ui < v.width) & (wi >= 0) & (wi < v.height)
        if not ok.any():
            continue
        d = v.depth[wi[ok], ui[ok]].astype(np.float64)
        zz = z[ok]
        good = np.isfinite(d) & (d > 0)
        ratios.append(d[good] / zz[good])
    if ratios:
        ratios = np.concatenate(ratios)
    n = len(ratios)
    if n < min_observations:
        raise ScaleAlignmentError(
            f"scale alignment needs at least {min_observations} usable "
            f"depth/SfM observations, found {n}"
        )
    return float(np.median(ratios)), n


def apply_scale(scene: ColmapScene, s: float) -> ColmapScene:
    """Scale all SfM geometry (positions and camera translations) by s, once."""
    if scene.scale_applied is not None:
        raise ScaleAlignmentError(
            f"scene already scaled by {scene.scale_applied}; apply_scale is one-shot"
        )
    if not np.isfinite(s) or s <= 0:
        raise ScaleAlignmentError(f"scale must be positive and finite, got {s}")
    scene.points.positions = scene.points.positions * s
    scene.views = [v.replace(tvec=v.tvec * s) for v in scene.views]
    scene.scale_applied = float(s)
    return scene


# -- scene geometry helpers ----------------------------------------------------


def camera_centers(views) -> np.ndarray:
    return np.stack([v.camera_center() for v in views], axis=0)


def barycenter(views) -> np.ndarray:
    return camera_centers(views).mean(axis=0)


def default_r_outer(views) -> float:
    """10x the navigation-area diameter (max pairwise camera distance)."""
    c = camera_centers(views)
    if len(c) < 2:
        raise IngestError("need at least two cameras to size the outer radius")
    d2 = ((c[:, None, :] - c[None, :, :]) ** 2).sum(-1)
    return 10.0 * float(np.sqrt(d2.max()))


# -- scene params file ----------------------------------------------------------


def write_scene_params(path, params: dict):
    lines = []
    for k in sorted(params):
        v = params[k]
        if isinstance(v, float):
            lines.append(f"{k}={float(v)!r}")
        else:
            lines.append(f"{k}={v}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_scene_params(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise IngestError(f"scene params: malformed line '{line}'")
        k, v = line.split("=", 1)
        try:
            out[k] = int(v)
        except ValueError:
            try:
                out[k] = float(v)
            except ValueError:
                out[k] = v
    return out
