"""Environment map extraction from the background shell.

Six 90-degree-FOV faces are rendered from a point inside the inner sphere,
using only background Gaussians farther than `near_cut` from that point, then
resampled into an equirectangular panorama. Pixels never covered by any
Gaussian are reported as holes.

Face frames are right-handed (+x right, +y down, +z forward per face camera):
  +x: right=+z down=-y   -x: right=-z down=-y
  +y: right=-x down=+z   -y: right=-x down=-z
  +z: right=-x down=-y   -z: right=+x down=-y
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .ingest import save_image_png, save_mask_png
from .model import CameraView, GaussianCloud, SceneShell, quat_from_matrix
from .renderer import RasterSettings, render

FACE_NAMES = ("px", "nx", "py", "ny", "pz", "nz")

# right (screen +u), down (screen +v), look (camera +z) per face, world space.
_FACE_FRAMES = {
    "px": ((0, 0, 1), (0, -1, 0), (1, 0, 0)),
    "nx": ((0, 0, -1), (0, -1, 0), (-1, 0, 0)),
    "py": ((-1, 0, 0), (0, 0, 1), (0, 1, 0)),
    "ny": ((-1, 0, 0), (0, 0, -1), (0, -1, 0)),
    "pz": ((-1, 0, 0), (0, -1, 0), (0, 0, 1)),
    "nz": ((1, 0, 0), (0, -1, 0), (0, 0, -1)),
}


@dataclass
class CubeMap:
    faces: dict  # name -> (F,F,3) float32
    holes: dict  # name -> (F,F) bool, True = no Gaussian coverage
    center: np.ndarray
    near_cut: float
    face_res: int

    def hole_fraction(self) -> float:
        total = sum(h.size for h in self.holes.values())
        return sum(int(h.sum()) for h in self.holes.values()) / total


def face_camera(name: str, center, face_res: int) -> CameraView:
    """Pinhole camera for one cube face: 90-degree FOV, pixel centers spanning
    the face exactly (fx = F/2, cx = (F-1)/2)."""
    right, down, look = (np.asarray(v, dtype=np.float64) for v in _FACE_FRAMES[name])
    R = np.stack([right, down, look], axis=0)  # world->camera rows
    center = np.asarray(center, dtype=np.float64).reshape(3)
    t = -R @ center
    f = face_res / 2.0
    c = (face_res - 1) / 2.0
    return CameraView(
        view_id=f"face_{name}",
        width=face_res,
        height=face_res,
        fx=f,
        fy=f,
        cx=c,
        cy=c,
        qvec=quat_from_matrix(R),
        tvec=t,
    )


def render_cubemap(
    background: GaussianCloud,
    shell: SceneShell,
    center=None,
    face_res: int = 512,
    near_cut: float = 0.0,
    hole_alpha: float = 1e-3,
) -> CubeMap:
    """Render the six faces from `center` (default: shell center), excluding
    Gaussians closer than `near_cut` to the viewpoint."""
    center = shell.center if center is None else np.asarray(center, dtype=np.float64).reshape(3)
    offset = np.linalg.norm(center - shell.center)
    if offset >= shell.r_inner:
        raise ValueError(
            f"cubemap viewpoint must lie inside the inner sphere "
            f"(offset {offset:.3f} >= r_inner {shell.r_inner:.3f})"
        )
    if near_cut < 0:
        raise ValueError("near_cut must be non-negative")
    if face_res < 2:
        raise ValueError("face_res must be at least 2")
    cloud = background
    if near_cut > 0 and len(cloud):
        with torch.no_grad():
            c = torch.as_tensor(center, dtype=cloud.dtype)
            dist = (cloud.get_xyz.detach() - c[None, :]).norm(dim=1)
            keep = dist >= near_cut
        cloud = _masked_copy(background, keep)
    faces = {}
    holes = {}
    settings = RasterSettings()
    with torch.no_grad():
        for name in FACE_NAMES:
            cam = face_camera(name, center, face_res)
            out = render(cloud, cam, settings=settings, update_visibility=False)
            faces[name] = out.image.detach().cpu().numpy().astype(np.float32)
            holes[name] = (out.alpha.detach().cpu().numpy() < hole_alpha)
    return CubeMap(faces=faces, holes=holes, center=center, near_cut=float(near_cut), face_res=face_res)


def _masked_copy(cloud: GaussianCloud, keep: torch.Tensor) -> GaussianCloud:
    out = GaussianCloud(sh_degree=cloud.max_sh_degree, dtype=cloud.dtype)
    for name, t in cloud.named_parameters().items():
        out.set_param(name, t.detach()[keep].clone())
    out.visibility_count = cloud.visibility_count[keep].clone()
    out.frozen = cloud.frozen
    return out


def direction_to_face(d: np.ndarray):
    """Unit direction(s) (...,3) -> (face index array, per-face pixel u, v)."""
    d = np.asarray(d, dtype=np.float64)
    ax, ay, az = np.abs(d[..., 0]), np.abs(d[..., 1]), np.abs(d[..., 2])
    face = np.where(
        (ax >= ay) & (ax >= az),
        np.where(d[..., 0] >= 0, 0, 1),
        np.where(
            ay >= az,
            np.where(d[..., 1] >= 0, 2, 3),
            np.where(d[..., 2] >= 0, 4, 5),
        ),
    )
    return face


def cubemap_to_equirect(cube: CubeMap, width: int, height: int):
    """Resample the cubemap into an equirectangular panorama.

    Longitude spans [-pi, pi) left to right, latitude [+pi/2, -pi/2] top to
    bottom; direction (0,0,1) lands at the +z face center. Returns
    (image (H,W,3) float32, holes (H,W) bool).
    """
    if width < 2 or height < 2:
        raise ValueError("equirect size must be at least 2x2")
    u = (np.arange(width) + 0.5) / width
    v = (np.arange(height) + 0.5) / height
    lon = u * 2.0 * np.pi - np.pi
    lat = np.pi / 2.0 - v * np.pi
    lon, lat = np.meshgrid(lon, lat)
    cos_lat = np.cos(lat)
    dirs = np.stack(
        [cos_lat * np.sin(lon), np.sin(lat), cos_lat * np.cos(lon)], axis=-1
    )
    face_idx = direction_to_face(dirs)
    image = np.zeros((height, width, 3), dtype=np.float32)
    holes = np.zeros((height, width), dtype=bool)
    res = cube.face_res
    f = res / 2.0
    c = (res - 1) / 2.0
    for fi, name in enumerate(FACE_NAMES):
        sel = face_idx == fi
        if not sel.any():
            continue
        right, down, look = (np.asarray(x, dtype=np.float64) for x in _FACE_FRAMES[name])
        d = dirs[sel]
        z = d @ look
        x = d @ right
        y = d @ down
        pu = f * x / z + c
        pv = f * y / z + c
        img, hol = _bilinear_face(cube.faces[name], cube.holes[name], pu, pv)
        image[sel] = img
        holes[sel] = hol
    return image, holes


def _bilinear_face(face: np.ndarray, face_holes: np.ndarray, u, v):
    res = face.shape[0]
    uu = np.clip(u, 0.0, res - 1.0)
    vv = np.clip(v, 0.0, res - 1.0)
    x0 = np.floor(uu).astype(int)
    y0 = np.floor(vv).astype(int)
    x1 = np.minimum(x0 + 1, res - 1)
    y1 = np.minimum(y0 + 1, res - 1)
    wx = (uu - x0)[:, None]
    wy = (vv - y0)[:, None]
    img = (
        face[y0, x0] * (1 - wx) * (1 - wy)
        + face[y0, x1] * wx * (1 - wy)
        + face[y1, x0] * (1 - wx) * wy
        + face[y1, x1] * wx * wy
    )
    hol = face_holes[y0, x0] | face_holes[y0, x1] | face_holes[y1, x0] | face_holes[y1, x1]
    return img.astype(np.float32), hol


def save_environment(cube: CubeMap, out_dir, equirect_size=None):
    """Write face_<name>.png, face_<name>_holes.png and equirect.png."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in FACE_NAMES:
        save_image_png(out_dir / f"face_{name}.png", np.clip(cube.faces[name], 0, 1))
        save_mask_png(out_dir / f"face_{name}_holes.png", cube.holes[name])
    if equirect_size is None:
        equirect_size = (4 * cube.face_res, 2 * cube.face_res)
    w, h = equirect_size
    image, holes = cubemap_to_equirect(cube, w, h)
    save_image_png(out_dir / "equirect.png", np.clip(image, 0, 1))
    save_mask_png(out_dir / "equirect_holes.png", holes)
    return image, holes
