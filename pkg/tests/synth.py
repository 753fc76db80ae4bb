"""Synthetic scene builders shared across the test suite.

Provides camera rigs, ground-truth Gaussian clouds with smoothly varying
colors, per-view depth rendering (camera-space z encoded through the DC color
channel so blend weights match the RGB pass exactly), analytic textured-sphere
datasets, and an on-disk dataset writer (COLMAP text + PNG + PFM).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from shellsplat import ingest
from shellsplat.model import (
    SH_C0,
    CameraView,
    GaussianCloud,
    SceneShell,
    quat_from_matrix,
    rgb_to_sh_dc,
)
from shellsplat.renderer import RasterSettings, render


def _normalize(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def look_at(eye, target, up=(0.0, 1.0, 0.0)):
    """World->camera rotation (rows right/down/forward) and translation."""
    eye = np.asarray(eye, dtype=np.float64)
    f = _normalize(np.asarray(target, dtype=np.float64) - eye)
    up = np.asarray(up, dtype=np.float64)
    if np.linalg.norm(np.cross(f, up)) < 1e-6:
        up = np.array([1.0, 0.0, 0.0])
    r = _normalize(np.cross(f, up))
    d = np.cross(f, r)
    R = np.stack([r, d, f], axis=0)
    return quat_from_matrix(R), -R @ eye


def make_view(view_id, eye, target, width=64, height=64, focal=None, up=(0, 1, 0)):
    focal = focal if focal is not None else float(width)
    q, t = look_at(eye, target, up)
    return CameraView(
        view_id=view_id,
        width=width,
        height=height,
        fx=focal,
        fy=focal,
        cx=(width - 1) / 2.0,
        cy=(height - 1) / 2.0,
        qvec=q,
        tvec=t,
    )


def build_cloud(
    positions,
    colors,
    scales,
    opacity=0.85,
    rotations=None,
    sh_degree=1,
    dtype=torch.float32,
    requires_grad=True,
):
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    n = len(positions)
    colors = np.broadcast_to(np.asarray(colors, dtype=np.float64), (n, 3))
    scales = np.broadcast_to(
        np.asarray(scales, dtype=np.float64).reshape(-1, 1)
        if np.ndim(scales) <= 1
        else np.asarray(scales, dtype=np.float64),
        (n, 3),
    )
    if rotations is None:
        rotations = np.zeros((n, 4))
        rotations[:, 0] = 1.0
    opac = np.broadcast_to(np.asarray(opacity, dtype=np.float64).reshape(-1, 1)
                           if np.ndim(opacity) <= 1 else np.asarray(opacity), (n, 1))
    np_dtype = np.float32 if dtype == torch.float32 else np.float64
    p = np.clip(opac, 1e-5, 1 - 1e-5)
    return GaussianCloud.from_arrays(
        positions=positions.astype(np_dtype),
        rotations=np.asarray(rotations, dtype=np_dtype),
        log_scales=np.log(scales).astype(np_dtype),
        opacity_logits=np.log(p / (1.0 - p)).astype(np_dtype),
        features_dc=rgb_to_sh_dc(np.clip(colors, 0.0, 1.0))[:, None, :].astype(np_dtype),
        sh_degree=sh_degree,
        requires_grad=requires_grad,
        dtype=dtype,
    )


def direction_color(dirs, gain=0.25):
    """Smooth color field linear in direction (representable by SH band 1)."""
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    rgb = 0.5 + gain * dirs
    return np.clip(rgb, 0.05, 0.95)


def gt_background_cloud(rng, shell: SceneShell, n=200, opacity=0.92):
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = rng.uniform(0.3 * shell.r_outer, 0.9 * shell.r_outer, size=n)
    positions = shell.center[None, :] + radii[:, None] * dirs
    colors = direction_color(dirs)
    scales = 0.16 * radii  # generous overlap so the dome has no gaps
    return build_cloud(positions, colors, np.stack([scales] * 3, 1), opacity=opacity)


def gt_foreground_cloud(rng, shell: SceneShell, n=50, opacity=0.9):
    axis = _normalize(rng.normal(size=3))
    center = shell.center + 0.55 * shell.r_inner * axis
    positions = center[None, :] + rng.normal(scale=0.35 * shell.r_inner / 3, size=(n, 3))
    off = positions - shell.center[None, :]
    r = np.linalg.norm(off, axis=1, keepdims=True)
    limit = 0.85 * shell.r_inner
    positions = np.where(r > limit, shell.center[None, :] + off * (limit / r), positions)
    colors = rng.uniform(0.2, 0.9, size=(n, 3))
    scales = rng.uniform(0.08, 0.2, size=n) * shell.r_inner
    return build_cloud(positions, colors, np.stack([scales] * 3, 1), opacity=opacity)


def camera_rig(rng, shell: SceneShell, n, width=128, height=128, nav_radius=1.0,
               fg_target=None):
    """Cameras inside a small navigation ball looking outward (and some at the
    foreground cluster if a target is given)."""
    views = []
    for i in range(n):
        eye = shell.center + rng.normal(size=3) * (nav_radius / 2.5)
        if fg_target is not None and i % 3 == 0:
            target = np.asarray(fg_target, dtype=np.float64)
        else:
            d = _normalize(rng.normal(size=3))
            target = shell.center + d * shell.r_outer
        if np.linalg.norm(target - eye) < 1e-6:
            target = eye + np.array([0.0, 0.0, 1.0])
        views.append(make_view(f"view_{i:03d}", eye, target, width=width, height=height))
    return views


def render_rgb(clouds, view, settings=None) -> np.ndarray:
    with torch.no_grad():
        out = render(clouds, view, settings=settings, update_visibility=False)
    return np.clip(out.image.detach().cpu().numpy(), 0.0, 1.0).astype(np.float32)


def _depth_proxy(cloud: GaussianCloud, view: CameraView) -> GaussianCloud:
    """Copy of `cloud` whose DC red channel encodes camera-space z, so that a
    render of it composites blend-weighted depth with identical weights."""
    with torch.no_grad():
        R = torch.as_tensor(view.rotation(), dtype=cloud.dtype)
        t = torch.as_tensor(view.tvec, dtype=cloud.dtype)
        z = (cloud.get_xyz.detach() @ R.T + t)[:, 2:3]
        dc = torch.zeros(len(cloud), 1, 3, dtype=cloud.dtype)
        dc[:, 0, 0] = ((z.squeeze(1) - 0.5) / SH_C0)
    proxy = GaussianCloud(sh_degree=0, dtype=cloud.dtype)
    proxy.set_param("xyz", cloud._xyz.detach().clone())
    proxy.set_param("rotation", cloud._rotation.detach().clone())
    proxy.set_param("scaling", cloud._scaling.detach().clone())
    proxy.set_param("opacity", cloud._opacity.detach().clone())
    proxy.set_param("f_dc", dc)
    proxy.set_param("f_rest", torch.zeros(len(cloud), 0, 3, dtype=cloud.dtype))
    proxy.visibility_count = torch.zeros(len(cloud), dtype=torch.long)
    return proxy


def render_zdepth(clouds, view, far) -> np.ndarray:
    """Blend-weighted camera-space z with `far` filling the unreached part."""
    if isinstance(clouds, GaussianCloud):
        clouds = [clouds]
    proxies = [_depth_proxy(c, view) for c in clouds]
    with torch.no_grad():
        out = render(
            proxies,
            view,
            bg_color=(far, 0.0, 0.0),
            update_visibility=False,
        )
    return out.image[:, :, 0].detach().cpu().numpy().astype(np.float32)


def attach_synthetic_rasters(views, clouds, far) -> list:
    out = []
    for v in views:
        img = render_rgb(clouds, v)
        dep = render_zdepth(clouds, v, far=far)
        out.append(v.replace(image=img, depth=dep))
    return out


def write_dataset(root, views, points_xyz, points_rgb, track_length=3):
    """COLMAP text model + images/ + depths/ laid out for the CLI."""
    root = Path(root)
    (root / "sparse").mkdir(parents=True, exist_ok=True)
    (root / "images").mkdir(exist_ok=True)
    (root / "depths").mkdir(exist_ok=True)
    points = ingest.SparsePointCloud(
        positions=np.asarray(points_xyz, dtype=np.float64),
        colors=np.asarray(points_rgb, dtype=np.float32),
        track_lengths=np.full(len(points_xyz), track_length, dtype=np.int64),
    )
    ingest.write_colmap_text(root / "sparse", views, points)
    for v in views:
        assert v.image is not None and v.depth is not None
        ingest.save_image_png(root / "images" / f"{v.view_id}.png", v.image)
        ingest.write_pfm(root / "depths" / f"{v.view_id}.pfm", v.depth)
    return root / "sparse", root / "images", root / "depths"


# -- analytic textured sphere ---------------------------------------------------


def sphere_hit_images(views, shell: SceneShell, sphere_radius, color_gain=0.25):
    """Render an analytically textured sphere of `sphere_radius` around the
    shell center: returns views with image+depth attached (z convention)."""
    out = []
    O = shell.center
    for v in views:
        R = v.rotation()
        C = v.camera_center()
        h, w = v.height, v.width
        u = np.arange(w, dtype=np.float64)[None, :]
        vv = np.arange(h, dtype=np.float64)[:, None]
        x = (u - v.cx) / v.fx
        y = (vv - v.cy) / v.fy
        d_cam = np.stack(np.broadcast_arrays(x, y, np.ones((h, w))), axis=-1)
        norm = np.linalg.norm(d_cam, axis=-1, keepdims=True)
        d_cam_unit = d_cam / norm
        d_world = d_cam_unit @ R  # R^T @ d
        oc = C - O
        b = (d_world * oc[None, None, :]).sum(-1)
        c = oc @ oc - sphere_radius**2
        disc = b * b - c
        t_hit = -b + np.sqrt(np.maximum(disc, 0.0))  # camera inside: far root
        hit = C[None, None, :] + t_hit[..., None] * d_world
        hit_dir = (hit - O[None, None, :]) / sphere_radius
        rgb = np.clip(0.5 + color_gain * hit_dir, 0.05, 0.95).astype(np.float32)
        zdepth = (t_hit[..., None] * d_cam_unit)[..., 2].astype(np.float32)
        out.append(v.replace(image=rgb, depth=zdepth))
    return out


def sparse_points_from_cloud(cloud: GaussianCloud, rng, jitter=0.02):
    pos = cloud.get_xyz.detach().cpu().numpy().astype(np.float64)
    pos = pos + rng.normal(scale=jitter, size=pos.shape)
    dc = cloud._features_dc.detach().cpu().numpy()[:, 0, :]
    rgb = np.clip(dc * SH_C0 + 0.5, 0.0, 1.0)
    return pos, rgb
