"""Initialization of the background shell cloud and the foreground cloud.

The background starts as a geodesic icosphere of directions around the scene
center. Each direction is pushed to a radius chosen from the per-view distance
maps (median over the views that see it): observed medians beyond r_outer pin
the Gaussian exactly to r_outer ("sky"), anything closer falls back to either a
uniform random radius inside the shell (default) or the clamped median
("distance" mode). Colors are averaged from the input images along each
direction; initial scales follow the local icosphere vertex spacing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy.spatial import cKDTree

from .model import GaussianCloud, SceneShell, inverse_sigmoid, rgb_to_sh_dc

INIT_MODES = ("random", "distance")


def icosphere(level: int):
    """Geodesic sphere via midpoint subdivision of an icosahedron.

    Returns (vertices (V,3) float64 unit vectors, faces (F,3) int64) with
    V = 10 * 4**level + 2.
    """
    if level < 0:
        raise ValueError("subdivision level must be >= 0")
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.asarray(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]

    for _ in range(level):
        midpoint = {}
        new_faces = []

        def mid(i, j):
            key = (i, j) if i < j else (j, i)
            if key not in midpoint:
                m = verts[i] + verts[j]
                m /= np.linalg.norm(m)
                verts.append(m)
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces

    return np.stack(verts), np.asarray(faces, dtype=np.int64)


def vertex_neighbor_spacing(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Mean edge length from each vertex to its mesh neighbors."""
    edges = set()
    for a, b, c in faces:
        edges.update(((a, b), (b, c), (c, a)))
    sums = np.zeros(len(vertices))
    counts = np.zeros(len(vertices))
    for i, j in edges:
        d = float(np.linalg.norm(vertices[i] - vertices[j]))
        sums[i] += d
        counts[i] += 1
        sums[j] += d
        counts[j] += 1
    if not np.all(counts > 0):
        raise ValueError("icosphere has isolated vertices")
    return sums / counts


def _project_points(view, pts_world: np.ndarray):
    """Project world points; returns (valid mask, integer u, integer v)."""
    cam = view.world_to_camera(pts_world)
    z = cam[:, 2]
    ok = z > 1e-9
    u = np.full(len(pts_world), -1.0)
    v = np.full(len(pts_world), -1.0)
    u[ok] = view.fx * cam[ok, 0] / z[ok] + view.cx
    v[ok] = view.fy * cam[ok, 1] / z[ok] + view.cy
    ui = np.rint(u).astype(np.int64)
    vi = np.rint(v).astype(np.int64)
    ok &= (ui >= 0) & (ui < view.width) & (vi >= 0) & (vi < view.height)
    return ok, ui, vi, u, v


def radial_placement(
    directions: np.ndarray,
    views,
    distance_maps,
    shell: SceneShell,
    mode: str = "random",
    rng: np.random.Generator = None,
):
    """Choose a radius per direction from distance-map observations.

    Returns (positions (N,3), radii (N,), observed (N,) bool).
    """
    if mode not in INIT_MODES:
        raise ValueError(f"unknown init mode '{mode}' (expected one of {INIT_MODES})")
    if rng is None:
        rng = np.random.default_rng(0)
    by_id = {dm.view_id: dm for dm in distance_maps}
    n = len(directions)
    probes = shell.center[None, :] + shell.r_outer * directions
    samples = np.full((n, len(views)), np.nan)
    for k, view in enumerate(views):
        dm = by_id.get(view.view_id)
        if dm is None:
            continue
        ok, ui, vi, _, _ = _project_points(view, probes)
        if ok.any():
            samples[ok, k] = dm.values[vi[ok], ui[ok]]
    observed = ~np.all(np.isnan(samples), axis=1)
    medians = np.full(n, np.nan)
    if observed.any():
        medians[observed] = np.nanmedian(samples[observed], axis=1)

    radii = rng.uniform(shell.r_inner, shell.r_outer, size=n)
    if mode == "distance":
        has_med = observed & np.isfinite(medians)
        radii[has_med] = np.clip(medians[has_med], shell.r_inner, shell.r_outer)
    far = observed & ~(medians <= shell.r_outer)  # median > r_outer (or inf)
    radii[far] = shell.r_outer
    positions = shell.center[None, :] + radii[:, None] * directions
    return positions, radii, observed


def ray_average_colors(positions: np.ndarray, views) -> np.ndarray:
    """Average bilinear image samples over all views that see each position."""
    n = len(positions)
    acc = np.zeros((n, 3))
    cnt = np.zeros(n)
    for view in views:
        if view.image is None:
            continue
        ok, _, _, u, v = _project_points(view, positions)
        if not ok.any():
            continue
        img = view.image
        uu = np.clip(u[ok], 0.0, view.width - 1.0)
        vv = np.clip(v[ok], 0.0, view.height - 1.0)
        x0 = np.floor(uu).astype(int)
        y0 = np.floor(vv).astype(int)
        x1 = np.minimum(x0 + 1, view.width - 1)
        y1 = np.minimum(y0 + 1, view.height - 1)
        wx = (uu - x0)[:, None]
        wy = (vv - y0)[:, None]
        val = (
            img[y0, x0] * (1 - wx) * (1 - wy)
            + img[y0, x1] * wx * (1 - wy)
            + img[y1, x0] * (1 - wx) * wy
            + img[y1, x1] * wx * wy
        )
        acc[ok] += val
        cnt[ok] += 1
    colors = np.full((n, 3), 0.5)
    seen = cnt > 0
    colors[seen] = acc[seen] / cnt[seen, None]
    return np.clip(colors, 0.0, 1.0)


def init_background_cloud(
    level: int,
    views,
    distance_maps,
    shell: SceneShell,
    mode: str = "random",
    rng: np.random.Generator = None,
    sh_degree: int = 1,
    init_opacity: float = 0.1,
) -> GaussianCloud:
    vertices, faces = icosphere(level)
    positions, radii, _ = radial_placement(
        vertices, views, distance_maps, shell, mode=mode, rng=rng
    )
    colors = ray_average_colors(positions, views)
    spacing = vertex_neighbor_spacing(vertices, faces) * radii
    n = len(positions)
    log_scales = np.log(spacing)[:, None].repeat(3, axis=1)
    rotations = np.zeros((n, 4))
    rotations[:, 0] = 1.0
    opacity = np.full((n, 1), inverse_sigmoid(init_opacity))
    f_dc = rgb_to_sh_dc(colors)[:, None, :]
    return GaussianCloud.from_arrays(
        positions=positions.astype(np.float32),
        rotations=rotations.astype(np.float32),
        log_scales=log_scales.astype(np.float32),
        opacity_logits=opacity.astype(np.float32),
        features_dc=f_dc.astype(np.float32),
        sh_degree=sh_degree,
    )


def init_foreground_cloud(
    positions: np.ndarray,
    colors: np.ndarray,
    sh_degree: int = 1,
    init_opacity: float = 0.1,
) -> GaussianCloud:
    """Standard point-cloud seeding: isotropic scales from mean squared
    distance to the 3 nearest neighbors, identity rotations."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    n = len(positions)
    if n == 0:
        raise ValueError("foreground init needs at least one point")
    if len(colors) != n:
        raise ValueError("positions/colors length mismatch")
    if n > 1:
        k = min(4, n)
        dist, _ = cKDTree(positions).query(positions, k=k)
        mean_sq = (dist[:, 1:] ** 2).mean(axis=1)
    else:
        mean_sq = np.full(1, 1e-4)
    scales = np.sqrt(np.maximum(mean_sq, 1e-14))
    log_scales = np.log(scales)[:, None].repeat(3, axis=1)
    rotations = np.zeros((n, 4))
    rotations[:, 0] = 1.0
    opacity = np.full((n, 1), inverse_sigmoid(init_opacity))
    f_dc = rgb_to_sh_dc(np.clip(colors, 0.0, 1.0))[:, None, :]
    return GaussianCloud.from_arrays(
        positions=positions.astype(np.float32),
        rotations=rotations.astype(np.float32),
        log_scales=log_scales.astype(np.float32),
        opacity_logits=opacity.astype(np.float32),
        features_dc=f_dc.astype(np.float32),
        sh_degree=sh_degree,
    )
