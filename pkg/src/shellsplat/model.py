"""Core scene types: Gaussian cloud container, spherical shell, camera views.

Conventions (shared across the whole package):
  * quaternions are (w, x, y, z) and describe the Gaussian's local->world rotation;
  * scales are stored as log-scales, opacities as logits;
  * SH features are stored as (N, K, 3) with K = (degree+1)^2, DC first;
  * cameras store the world->camera rotation as a quaternion plus a translation,
    i.e. x_cam = R @ x_world + t, with +x right, +y down, +z forward.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

# Real spherical-harmonic basis constants, bands 0..3.
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = [
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
]
SH_C3 = [
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
]


class InvalidGaussianError(ValueError):
    """A Gaussian has non-finite or otherwise unusable parameters."""

    def __init__(self, index: int, message: str):
        self.index = index
        super().__init__(f"gaussian {index}: {message}")


def inverse_sigmoid(x):
    if torch.is_tensor(x):
        return torch.log(x / (1.0 - x))
    return float(np.log(x / (1.0 - x)))


def build_rotation(q: torch.Tensor) -> torch.Tensor:
    """Batch of unit-normalized (w,x,y,z) quaternions -> (N,3,3) rotation matrices."""
    norm = torch.sqrt((q * q).sum(dim=-1, keepdim=True))
    q = q / norm
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = torch.stack(
        [
            1 - 2 * (y * y + z * z),
            2 * (x * y - w * z),
            2 * (x * z + w * y),
            2 * (x * y + w * z),
            1 - 2 * (x * x + z * z),
            2 * (y * z - w * x),
            2 * (x * z - w * y),
            2 * (y * z + w * x),
            1 - 2 * (x * x + y * y),
        ],
        dim=-1,
    )
    return R.reshape(q.shape[:-1] + (3, 3))


def build_scaling_rotation(s: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    """R @ diag(s) for batched scales (N,3) and quaternions (N,4)."""
    R = build_rotation(q)
    return R * s.unsqueeze(-2)


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Single 3x3 rotation matrix -> (w,x,y,z) quaternion (Shepperd's method)."""
    m = np.asarray(R, dtype=np.float64)
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        w = 0.25 * s
        x = (m[2, 1] - m[1, 2]) / s
        y = (m[0, 2] - m[2, 0]) / s
        z = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        w = (m[2, 1] - m[1, 2]) / s
        x = 0.25 * s
        y = (m[0, 1] + m[1, 0]) / s
        z = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        w = (m[0, 2] - m[2, 0]) / s
        x = (m[0, 1] + m[1, 0]) / s
        y = 0.25 * s
        z = (m[1, 2] + m[2, 1]) / s
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        w = (m[1, 0] - m[0, 1]) / s
        x = (m[0, 2] + m[2, 0]) / s
        y = (m[1, 2] + m[2, 1]) / s
        z = 0.25 * s
    q = np.array([w, x, y, z], dtype=np.float64)
    return q / np.linalg.norm(q)


def eval_sh(deg: int, sh: torch.Tensor, dirs: torch.Tensor) -> torch.Tensor:
    """Evaluate real SH up to band `deg` at unit directions.

    sh: (..., K, 3) coefficients with K >= (deg+1)^2; dirs: (..., 3).
    """
    assert deg >= 0 and deg <= 3
    assert sh.shape[-2] >= (deg + 1) ** 2
    result = SH_C0 * sh[..., 0, :]
    if deg > 0:
        x = dirs[..., 0:1]
        y = dirs[..., 1:2]
        z = dirs[..., 2:3]
        result = (
            result
            - SH_C1 * y * sh[..., 1, :]
            + SH_C1 * z * sh[..., 2, :]
            - SH_C1 * x * sh[..., 3, :]
        )
        if deg > 1:
            xx, yy, zz = x * x, y * y, z * z
            xy, yz, xz = x * y, y * z, x * z
            result = (
                result
                + SH_C2[0] * xy * sh[..., 4, :]
                + SH_C2[1] * yz * sh[..., 5, :]
                + SH_C2[2] * (2.0 * zz - xx - yy) * sh[..., 6, :]
                + SH_C2[3] * xz * sh[..., 7, :]
                + SH_C2[4] * (xx - yy) * sh[..., 8, :]
            )
            if deg > 2:
                result = (
                    result
                    + SH_C3[0] * y * (3 * xx - yy) * sh[..., 9, :]
                    + SH_C3[1] * xy * z * sh[..., 10, :]
                    + SH_C3[2] * y * (4 * zz - xx - yy) * sh[..., 11, :]
                    + SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy) * sh[..., 12, :]
                    + SH_C3[4] * x * (4 * zz - xx - yy) * sh[..., 13, :]
                    + SH_C3[5] * z * (xx - yy) * sh[..., 14, :]
                    + SH_C3[6] * x * (3 * xx - yy) * sh[..., 15, :]
                )
    return result


def rgb_to_sh_dc(rgb):
    """Base color in [0,1] -> DC coefficient (inverse of the +0.5 render offset)."""
    return (rgb - 0.5) / SH_C0


def sh_dc_to_rgb(dc):
    return dc * SH_C0 + 0.5


@dataclass
class SceneShell:
    """Spherical shell between r_inner and r_outer around a world-space center."""

    center: np.ndarray
    r_inner: float
    r_outer: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.r_inner = float(self.r_inner)
        self.r_outer = float(self.r_outer)
        if not np.all(np.isfinite(self.center)):
            raise ValueError("shell center must be finite")
        if not (0.0 < self.r_inner < self.r_outer):
            raise ValueError(
                f"shell radii must satisfy 0 < r_inner < r_outer, "
                f"got r_inner={self.r_inner}, r_outer={self.r_outer}"
            )

    def center_tensor(self, dtype=torch.float32) -> torch.Tensor:
        return torch.as_tensor(self.center, dtype=dtype)

    def radii_of(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.linalg.norm(pts - self.center[None, :], axis=1)


_ALLOWED_DEPTH_CONVENTIONS = ("z", "ray")


@dataclass
class CameraView:
    """A posed pinhole camera, optionally carrying its image / depth / mask."""

    view_id: str
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    qvec: np.ndarray  # world->camera rotation, (w,x,y,z)
    tvec: np.ndarray
    image: Optional[np.ndarray] = None  # (H,W,3) float32 in [0,1]
    depth: Optional[np.ndarray] = None  # (H,W) float32/float64
    mask: Optional[np.ndarray] = None  # (H,W) bool, True = background pixel

    def __post_init__(self):
        self.qvec = np.asarray(self.qvec, dtype=np.float64).reshape(4)
        self.tvec = np.asarray(self.tvec, dtype=np.float64).reshape(3)
        n = np.linalg.norm(self.qvec)
        if not np.isfinite(n) or n < 1e-12:
            raise ValueError(f"view {self.view_id}: degenerate quaternion")
        self.qvec = self.qvec / n
        for name in ("fx", "fy"):
            if getattr(self, name) <= 0:
                raise ValueError(f"view {self.view_id}: {name} must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"view {self.view_id}: bad image size")
        self._check_raster("image", self.image, 3)
        self._check_raster("depth", self.depth, None)
        self._check_raster("mask", self.mask, None)

    def _check_raster(self, name, arr, channels):
        if arr is None:
            return
        expect = (self.height, self.width) if channels is None else (self.height, self.width, channels)
        if tuple(arr.shape) != expect:
            raise ValueError(
                f"view {self.view_id}: {name} shape {tuple(arr.shape)} does not match "
                f"camera size {expect}"
            )

    def rotation(self) -> np.ndarray:
        """World->camera rotation matrix."""
        return build_rotation(torch.from_numpy(self.qvec[None])).numpy()[0]

    def camera_center(self) -> np.ndarray:
        R = self.rotation()
        return -R.T @ self.tvec

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        R = self.rotation()
        return np.asarray(points).reshape(-1, 3) @ R.T + self.tvec[None, :]

    def tan_half_fov(self):
        tan_x = 0.5 * self.width / self.fx
        tan_y = 0.5 * self.height / self.fy
        return tan_x, tan_y

    def replace(self, **kwargs) -> "CameraView":
        out = copy.copy(self)
        for k, v in kwargs.items():
            setattr(out, k, v)
        out.__post_init__()
        return out


@dataclass
class ActivatedGaussian:
    mean: torch.Tensor  # (3,)
    covariance: torch.Tensor  # (3,3) world-space
    opacity: torch.Tensor  # scalar in (0,1)
    color_fn: "callable"  # unit direction (3,) -> rgb (3,)


def _as_tensor(a, dtype):
    t = torch.as_tensor(a)
    if dtype is not None:
        t = t.to(dtype)
    return t.contiguous()


class GaussianCloud:
    """Parameter container for a set of anisotropic 3D Gaussians.

    Raw (optimizable) parameters follow the usual splatting parametrization:
    positions, unnormalized quaternions, log-scales, opacity logits and SH
    coefficients split into a DC term and the higher-order rest.
    """

    PARAM_NAMES = ("xyz", "f_dc", "f_rest", "opacity", "scaling", "rotation")

    def __init__(self, sh_degree: int = 1, dtype=torch.float32):
        if sh_degree < 0 or sh_degree > 3:
            raise ValueError("sh_degree must be in [0, 3]")
        self.max_sh_degree = int(sh_degree)
        self.dtype = dtype
        n_rest = (sh_degree + 1) ** 2 - 1
        self._xyz = torch.empty(0, 3, dtype=dtype)
        self._features_dc = torch.empty(0, 1, 3, dtype=dtype)
        self._features_rest = torch.empty(0, n_rest, 3, dtype=dtype)
        self._opacity = torch.empty(0, 1, dtype=dtype)
        self._scaling = torch.empty(0, 3, dtype=dtype)
        self._rotation = torch.empty(0, 4, dtype=dtype)
        self.visibility_count = torch.zeros(0, dtype=torch.long)
        self.frozen = False

    # -- construction -----------------------------------------------------

    @classmethod
    def from_arrays(
        cls,
        positions,
        rotations,
        log_scales,
        opacity_logits,
        features_dc,
        features_rest=None,
        sh_degree: Optional[int] = None,
        requires_grad: bool = True,
        dtype=None,
    ) -> "GaussianCloud":
        xyz = _as_tensor(positions, dtype)
        dtype = xyz.dtype
        rot = _as_tensor(rotations, dtype)
        scal = _as_tensor(log_scales, dtype)
        opac = _as_tensor(opacity_logits, dtype)
        if opac.dim() == 1:
            opac = opac.unsqueeze(1)
        fdc = _as_tensor(features_dc, dtype)
        if fdc.dim() == 2:
            fdc = fdc.unsqueeze(1)
        n = xyz.shape[0]
        if features_rest is None:
            if sh_degree is None:
                sh_degree = 0
            frest = torch.zeros(n, (sh_degree + 1) ** 2 - 1, 3, dtype=dtype)
        else:
            frest = _as_tensor(features_rest, dtype)
            if sh_degree is None:
                k = frest.shape[1] + 1
                sh_degree = int(round(np.sqrt(k))) - 1
        k_expected = (sh_degree + 1) ** 2 - 1
        shapes = {
            "positions": (xyz, (n, 3)),
            "rotations": (rot, (n, 4)),
            "log_scales": (scal, (n, 3)),
            "opacity_logits": (opac, (n, 1)),
            "features_dc": (fdc, (n, 1, 3)),
            "features_rest": (frest, (n, k_expected, 3)),
        }
        for name, (t, expect) in shapes.items():
            if tuple(t.shape) != expect:
                raise ValueError(f"{name}: expected shape {expect}, got {tuple(t.shape)}")
        cloud = cls(sh_degree=sh_degree, dtype=dtype)
        cloud._xyz = xyz.clone().requires_grad_(requires_grad)
        cloud._rotation = rot.clone().requires_grad_(requires_grad)
        cloud._scaling = scal.clone().requires_grad_(requires_grad)
        cloud._opacity = opac.clone().requires_grad_(requires_grad)
        cloud._features_dc = fdc.clone().requires_grad_(requires_grad)
        cloud._features_rest = frest.clone().requires_grad_(requires_grad)
        cloud.visibility_count = torch.zeros(n, dtype=torch.long)
        cloud.check_finite()
        return cloud

    # -- basic accessors ---------------------------------------------------

    def __len__(self) -> int:
        return self._xyz.shape[0]

    @property
    def get_xyz(self) -> torch.Tensor:
        return self._xyz

    @property
    def get_scaling(self) -> torch.Tensor:
        return torch.exp(self._scaling)

    @property
    def get_rotation(self) -> torch.Tensor:
        return F.normalize(self._rotation, dim=1)

    @property
    def get_opacity(self) -> torch.Tensor:
        return torch.sigmoid(self._opacity)

    @property
    def get_features(self) -> torch.Tensor:
        return torch.cat((self._features_dc, self._features_rest), dim=1)

    def named_parameters(self) -> dict:
        return {
            "xyz": self._xyz,
            "f_dc": self._features_dc,
            "f_rest": self._features_rest,
            "opacity": self._opacity,
            "scaling": self._scaling,
            "rotation": self._rotation,
        }

    def set_param(self, name: str, tensor: torch.Tensor):
        attr = {
            "xyz": "_xyz",
            "f_dc": "_features_dc",
            "f_rest": "_features_rest",
            "opacity": "_opacity",
            "scaling": "_scaling",
            "rotation": "_rotation",
        }[name]
        setattr(self, attr, tensor)

    # -- validation & activation -------------------------------------------

    def check_finite(self):
        for name, t in self.named_parameters().items():
            finite = torch.isfinite(t.detach()).reshape(len(self), -1).all(dim=1)
            if not bool(finite.all()):
                idx = int((~finite).nonzero()[0, 0])
                raise InvalidGaussianError(idx, f"non-finite values in {name}")

    def rotation_matrices(self) -> torch.Tensor:
        return build_rotation(self._rotation)

    def get_covariance(self) -> torch.Tensor:
        """World-space 3x3 covariances, (N,3,3)."""
        L = build_scaling_rotation(self.get_scaling, self._rotation)
        return L @ L.transpose(1, 2)

    def shortest_axis_world(self, index: Optional[int] = None) -> torch.Tensor:
        """Unit world-space direction of the smallest principal axis.

        Ties resolve to the lowest axis index (argmin convention).
        """
        R = self.rotation_matrices()
        idx = torch.argmin(self.get_scaling, dim=1)
        cols = R.gather(2, idx[:, None, None].expand(-1, 3, 1)).squeeze(2)
        if index is not None:
            return cols[index]
        return cols

    def activate(self, index: int) -> ActivatedGaussian:
        n = len(self)
        if index < 0 or index >= n:
            raise IndexError(f"gaussian index {index} out of range [0, {n})")
        for name, t in self.named_parameters().items():
            if not bool(torch.isfinite(t.detach()[index]).all()):
                raise InvalidGaussianError(index, f"non-finite values in {name}")
        q = self._rotation[index]
        if float(q.detach().norm()) < 1e-12:
            raise InvalidGaussianError(index, "zero-norm quaternion")
        cov = self.get_covariance()[index]
        opacity = self.get_opacity[index, 0]
        feats = self.get_features[index]
        deg = self.max_sh_degree

        def color_fn(direction):
            d = torch.as_tensor(direction, dtype=self.dtype)
            d = d / d.norm()
            rgb = eval_sh(deg, feats[None], d[None])[0] + 0.5
            return torch.clamp(rgb, min=0.0)

        return ActivatedGaussian(
            mean=self._xyz[index], covariance=cov, opacity=opacity, color_fn=color_fn
        )

    # -- training-time bookkeeping ------------------------------------------

    def renormalize_rotations_(self):
        with torch.no_grad():
            norms = self._rotation.norm(dim=1, keepdim=True)
            if not bool((norms > 1e-12).all()):
                idx = int((norms.squeeze(1) <= 1e-12).nonzero()[0, 0])
                raise InvalidGaussianError(idx, "quaternion collapsed to zero norm")
            self._rotation.div_(norms)

    def add_visibility(self, indices: torch.Tensor):
        if indices.numel():
            self.visibility_count.index_add_(
                0, indices.to(torch.long), torch.ones(indices.numel(), dtype=torch.long)
            )

    def reset_visibility(self):
        self.visibility_count = torch.zeros(len(self), dtype=torch.long)

    # -- freezing / copying ---------------------------------------------------

    def freeze(self) -> "GaussianCloud":
        for t in self.named_parameters().values():
            t.requires_grad_(False)
        self.frozen = True
        return self

    def detached_copy(self, requires_grad: bool = False) -> "GaussianCloud":
        out = GaussianCloud(sh_degree=self.max_sh_degree, dtype=self.dtype)
        for name, t in self.named_parameters().items():
            out.set_param(name, t.detach().clone().requires_grad_(requires_grad))
        out.visibility_count = self.visibility_count.clone()
        out.frozen = self.frozen
        return out

    def state_bytes(self) -> bytes:
        """Raw little-endian bytes of all parameters, for byte-identity checks."""
        parts = []
        for name in self.PARAM_NAMES:
            arr = self.named_parameters()[name].detach().cpu().numpy()
            parts.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
        return b"".join(parts)


def merge_clouds(clouds) -> GaussianCloud:
    """Concatenate clouds into one (parameters detached, no grad)."""
    clouds = list(clouds)
    if not clouds:
        raise ValueError("merge_clouds needs at least one cloud")
    deg = max(c.max_sh_degree for c in clouds)
    dtype = clouds[0].dtype
    k_rest = (deg + 1) ** 2 - 1
    out = GaussianCloud(sh_degree=deg, dtype=dtype)
    parts = {name: [] for name in GaussianCloud.PARAM_NAMES}
    for c in clouds:
        if c.dtype != dtype:
            raise ValueError("merge_clouds requires a common dtype")
        for name, t in c.named_parameters().items():
            t = t.detach()
            if name == "f_rest" and t.shape[1] < k_rest:
                t = torch.cat(
                    [t, torch.zeros(t.shape[0], k_rest - t.shape[1], 3, dtype=dtype)],
                    dim=1,
                )
            parts[name].append(t)
    for name, ts in parts.items():
        out.set_param(name, torch.cat(ts, dim=0))
    out.visibility_count = torch.cat([c.visibility_count for c in clouds])
    return out
