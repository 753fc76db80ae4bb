"""Nearby/background segmentation from per-view distance maps.

Every depth pixel is back-projected to world space and its Euclidean distance to
the scene center recorded. Thresholding that distance at r_inner yields a
background mask per view (True = farther than r_inner = background) and a
foreground subset of the sparse SfM points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import CameraView
from .viridis_data import VIRIDIS_RGB

_VIRIDIS_LUT = np.asarray(VIRIDIS_RGB, dtype=np.float64)


@dataclass
class DistanceMap:
    view_id: str
    values: np.ndarray  # (H,W) float64 distance from the scene center

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("distance map must be 2D")


@dataclass
class SegmentationResult:
    masks: dict  # view_id -> (H,W) bool, True = background
    foreground_point_indices: np.ndarray  # indices into the sparse cloud
    point_distances: np.ndarray  # (M,) distance of every sparse point to center


def distance_map(view: CameraView, center, convention: str = "z") -> DistanceMap:
    """Back-project a depth map and measure distance to `center` per pixel.

    convention "z": depth stores camera-space z of the surface point;
    convention "ray": depth stores Euclidean distance along the pixel ray.
    Non-finite or non-positive depths map to +inf (treated as background).
    """
    if view.depth is None:
        raise ValueError(f"view '{view.view_id}' has no depth map")
    if convention not in ("z", "ray"):
        raise ValueError(f"unknown depth convention '{convention}'")
    center = np.asarray(center, dtype=np.float64).reshape(3)
    d = view.depth.astype(np.float64)
    h, w = d.shape
    u = np.arange(w, dtype=np.float64)[None, :]
    v = np.arange(h, dtype=np.float64)[:, None]
    x = (u - view.cx) / view.fx
    y = (v - view.cy) / view.fy
    ones = np.ones((h, w), dtype=np.float64)
    rays = np.stack(np.broadcast_arrays(x, y, ones), axis=-1)  # (H,W,3) cam dirs (z=1)
    if convention == "ray":
        rays = rays / np.linalg.norm(rays, axis=-1, keepdims=True)
    bad = ~np.isfinite(d) | (d <= 0)
    d = np.where(bad, 1.0, d)  # placeholder; overwritten with +inf below
    pts_cam = rays * d[..., None]
    R = view.rotation()
    pts_world = (pts_cam - view.tvec[None, None, :]) @ R  # == (p - t) @ R == R^T (p - t)
    values = np.linalg.norm(pts_world - center[None, None, :], axis=-1)
    values[bad] = np.inf
    return DistanceMap(view_id=view.view_id, values=values)


def segment(
    distance_maps,
    r_inner: float,
    r_outer: float,
    points=None,
    center=None,
) -> SegmentationResult:
    """Threshold distance maps at r_inner; distance must be strictly greater
    than r_inner to count as background (boundary pixels are foreground)."""
    if not (0.0 < r_inner < r_outer):
        raise ValueError(
            f"r_inner must satisfy 0 < r_inner < r_outer, got {r_inner} vs {r_outer}"
        )
    masks = {}
    for dm in distance_maps:
        masks[dm.view_id] = dm.values > r_inner
    fg_idx = np.zeros(0, dtype=np.int64)
    dists = np.zeros(0, dtype=np.float64)
    if points is not None and len(points) > 0:
        if center is None:
            raise ValueError("segment needs the scene center to filter points")
        center = np.asarray(center, dtype=np.float64).reshape(3)
        dists = np.linalg.norm(points - center[None, :], axis=1)
        fg_idx = np.nonzero(dists <= r_inner)[0]
    return SegmentationResult(
        masks=masks, foreground_point_indices=fg_idx, point_distances=dists
    )


def colorize_distance(values, clip_max: float) -> np.ndarray:
    """Distance values -> (H,W,3) uint8 via the viridis LUT.

    Values are normalized by clip_max; anything at or beyond clip_max takes the
    last LUT entry, so the index is monotone in the distance.
    """
    if not np.isfinite(clip_max) or clip_max <= 0:
        raise ValueError(f"clip_max must be positive and finite, got {clip_max}")
    values = np.asarray(values, dtype=np.float64)
    n = np.clip(values / clip_max, 0.0, 1.0)
    n = np.nan_to_num(n, nan=1.0)
    idx = np.rint(n * 255.0).astype(np.int64)
    rgb = _VIRIDIS_LUT[idx]
    return np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)
