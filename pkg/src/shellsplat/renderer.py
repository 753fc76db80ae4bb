"""Differentiable tile-based rasterizer for anisotropic Gaussians.

Forward pass follows the standard splatting pipeline: EWA projection of 3D
covariances to screen space (with a low-pass floor on the 2D covariance
diagonal), a stable global front-to-back depth sort, and per-tile alpha
compositing with the usual cutoffs:

  * alpha = min(alpha_cap, opacity * exp(power)), contributions below
    alpha_min are skipped without advancing transmittance;
  * a Gaussian whose blend would drop transmittance below
    transmittance_floor is not blended and terminates the pixel.

Gradients come from autograd through this forward pass. Several clouds can be
rendered jointly; they are concatenated before the depth sort, so rendering a
union cloud and rendering the same Gaussians split across clouds are
bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import torch

from .model import CameraView, GaussianCloud, InvalidGaussianError, eval_sh


@dataclass
class RasterSettings:
    tile_size: int = 16
    near_plane: float = 0.01
    footprint_sigmas: float = 3.0  # screen-space extent cutoff, in sigmas
    alpha_min: float = 1.0 / 255.0
    alpha_cap: float = 0.99
    transmittance_floor: float = 1e-4
    contribution_min: float = 1e-6  # blend weight that counts as "visible"
    lowpass: float = 0.3  # added to cov2d diagonal
    jacobian_margin: float = 1.3  # clamp for x/z, y/z in the projection Jacobian

    def __post_init__(self):
        if self.tile_size <= 0:
            raise ValueError("tile_size must be positive")
        if not (0.0 < self.alpha_cap < 1.0):
            raise ValueError("alpha_cap must be in (0,1)")
        if self.transmittance_floor <= 0:
            raise ValueError("transmittance_floor must be positive")


@dataclass
class RenderOutput:
    image: torch.Tensor  # (H,W,3)
    alpha: torch.Tensor  # (H,W)
    means2d: Optional[torch.Tensor]  # (M,2) depth-sorted projected centers
    visible_ids: torch.Tensor  # (M,) global indices into the concatenated clouds
    radii: torch.Tensor  # (M,) int screen-space footprint radius in pixels
    touched: torch.Tensor  # (M,) bool, overlaps at least one tile
    contributed: torch.Tensor  # (M,) bool, max blend weight > contribution_min
    cloud_offsets: list  # global index offset of each input cloud

    def backward(self, image_grad: torch.Tensor):
        """Backpropagate d(loss)/d(image); no-op for all-frozen scenes."""
        if not self.image.requires_grad:
            return
        self.image.backward(gradient=image_grad)


def camera_matrices(view: CameraView, dtype, device=None):
    R = torch.as_tensor(view.rotation(), dtype=dtype, device=device)
    t = torch.as_tensor(view.tvec, dtype=dtype, device=device)
    center = torch.as_tensor(view.camera_center(), dtype=dtype, device=device)
    return R, t, center


def _gather_clouds(clouds):
    """Concatenate raw parameters of several clouds (padding SH to max degree)."""
    if isinstance(clouds, GaussianCloud):
        clouds = [clouds]
    if not clouds:
        raise ValueError("render needs at least one cloud")
    dtype = clouds[0].dtype
    for c in clouds:
        if c.dtype != dtype:
            raise ValueError("all clouds must share a dtype")
    max_deg = max(c.max_sh_degree for c in clouds)
    k_rest = (max_deg + 1) ** 2 - 1
    xyz, rot, scal, opac, feats = [], [], [], [], []
    offsets = []
    n = 0
    for c in clouds:
        offsets.append(n)
        n += len(c)
        xyz.append(c._xyz)
        rot.append(c._rotation)
        scal.append(c._scaling)
        opac.append(c._opacity)
        f = c.get_features
        pad = k_rest + 1 - f.shape[1]
        if pad:
            f = torch.cat([f, torch.zeros(len(c), pad, 3, dtype=dtype)], dim=1)
        feats.append(f)
    return (
        clouds,
        torch.cat(xyz),
        torch.cat(rot),
        torch.cat(scal),
        torch.cat(opac),
        torch.cat(feats),
        max_deg,
        offsets,
    )


def _check_finite(clouds, offsets):
    for c, off in zip(clouds, offsets):
        try:
            c.check_finite()
        except InvalidGaussianError as e:
            raise InvalidGaussianError(e.index + off, f"(cloud offset {off}) {e}") from None


def project_gaussians(xyz, rotation, scaling_log, view: CameraView, settings: RasterSettings):
    """EWA projection of world-space Gaussians into a pinhole view.

    Returns (in_front mask over the input, and per-visible-row tensors:
    uv (M,2), cov2d (M,2,2) after the low-pass floor, depth (M,)).
    """
    from .model import build_rotation

    dtype = xyz.dtype
    R_wc, t, _ = camera_matrices(view, dtype)
    p_cam = xyz @ R_wc.T + t
    z_all = p_cam[:, 2]
    in_front = z_all > settings.near_plane
    idx = in_front.nonzero(as_tuple=False).squeeze(1)
    p = p_cam[idx]
    x, y, z = p[:, 0], p[:, 1], p[:, 2]

    tan_x, tan_y = view.tan_half_fov()
    lim_x = settings.jacobian_margin * tan_x
    lim_y = settings.jacobian_margin * tan_y
    tx = torch.clamp(x / z, min=-lim_x, max=lim_x) * z
    ty = torch.clamp(y / z, min=-lim_y, max=lim_y) * z

    fx, fy = view.fx, view.fy
    zero = torch.zeros_like(z)
    J = torch.stack(
        [
            torch.stack([fx / z, zero, -(fx * tx) / (z * z)], dim=1),
            torch.stack([zero, fy / z, -(fy * ty) / (z * z)], dim=1),
        ],
        dim=1,
    )  # (M,2,3)
    T = J @ R_wc  # (M,2,3)
    Rm = build_rotation(rotation[idx])
    L = Rm * torch.exp(scaling_log[idx]).unsqueeze(-2)
    sigma = L @ L.transpose(1, 2)
    cov2d = T @ sigma @ T.transpose(1, 2)
    lowpass = torch.zeros(2, 2, dtype=dtype)
    lowpass[0, 0] = lowpass[1, 1] = settings.lowpass
    cov2d = cov2d + lowpass

    u = fx * x / z + view.cx
    v = fy * y / z + view.cy
    uv = torch.stack([u, v], dim=1)
    return in_front, idx, uv, cov2d, z


def render(
    clouds,
    view: CameraView,
    bg_color=None,
    settings: Optional[RasterSettings] = None,
    update_visibility: bool = True,
) -> RenderOutput:
    """Render one or more Gaussian clouds into `view`.

    `clouds` may be a single cloud or a list; they are concatenated and
    depth-sorted jointly. Returns the composited image plus the per-Gaussian
    bookkeeping needed by densification (projected centers with retained
    grads, footprint radii, contribution flags).
    """
    settings = settings or RasterSettings()
    clouds, xyz, rot, scal, opac, feats, max_deg, offsets = _gather_clouds(clouds)
    _check_finite(clouds, offsets)
    dtype = xyz.dtype
    H, W = view.height, view.width
    if bg_color is None:
        bg = torch.zeros(3, dtype=dtype)
    else:
        bg = torch.as_tensor(bg_color, dtype=dtype).reshape(3)

    in_front, idx, uv, cov2d, depth = project_gaussians(xyz, rot, scal, view, settings)
    M = idx.numel()
    empty_long = torch.zeros(0, dtype=torch.long)
    if M == 0:
        image = bg[None, None, :].expand(H, W, 3).clone()
        return RenderOutput(
            image=image,
            alpha=torch.zeros(H, W, dtype=dtype),
            means2d=None,
            visible_ids=empty_long,
            radii=empty_long,
            touched=torch.zeros(0, dtype=torch.bool),
            contributed=torch.zeros(0, dtype=torch.bool),
            cloud_offsets=offsets,
        )

    # Depth sort (stable, so equal depths keep concatenation order).
    order = torch.argsort(depth, stable=True)
    idx = idx[order]
    uv = uv[order]
    cov2d = cov2d[order]
    depth = depth[order]
    if uv.requires_grad:
        uv.retain_grad()

    # View-dependent colors, evaluated at the Gaussian centers.
    _, _, cam_center = camera_matrices(view, dtype)
    dirs = xyz[idx] - cam_center[None, :]
    dirs = dirs / dirs.norm(dim=1, keepdim=True)
    colors = torch.clamp(eval_sh(max_deg, feats[idx], dirs) + 0.5, min=0.0)
    opacity = torch.sigmoid(opac[idx, 0])

    # Conic (inverse 2D covariance) and footprint radius.
    c00 = cov2d[:, 0, 0]
    c01 = cov2d[:, 0, 1]
    c11 = cov2d[:, 1, 1]
    det = c00 * c11 - c01 * c01
    if not bool((det > 0).all()):
        bad = int((det <= 0).nonzero()[0, 0])
        raise InvalidGaussianError(int(idx[bad]), "projected covariance is not SPD")
    conic_a = c11 / det
    conic_b = -c01 / det
    conic_c = c00 / det
    mid = 0.5 * (c00 + c11)
    lam_max = mid + torch.sqrt(torch.clamp(mid * mid - det, min=0.1))
    radius = torch.ceil(settings.footprint_sigmas * torch.sqrt(lam_max)).detach()

    ts = settings.tile_size
    n_tx = (W + ts - 1) // ts
    n_ty = (H + ts - 1) // ts
    uv_d = uv.detach()
    r_d = radius
    tx0 = torch.clamp(torch.floor((uv_d[:, 0] - r_d) / ts), min=0, max=n_tx).to(torch.long)
    tx1 = torch.clamp(torch.floor((uv_d[:, 0] + r_d) / ts) + 1, min=0, max=n_tx).to(torch.long)
    ty0 = torch.clamp(torch.floor((uv_d[:, 1] - r_d) / ts), min=0, max=n_ty).to(torch.long)
    ty1 = torch.clamp(torch.floor((uv_d[:, 1] + r_d) / ts) + 1, min=0, max=n_ty).to(torch.long)
    touched = (tx1 > tx0) & (ty1 > ty0)

    contributed = torch.zeros(M, dtype=torch.bool)

    grids = {}
    row_images = []
    row_alphas = []
    for ty in range(n_ty):
        y_lo, y_hi = ty * ts, min((ty + 1) * ts, H)
        tile_images = []
        tile_alphas = []
        for tx in range(n_tx):
            x_lo, x_hi = tx * ts, min((tx + 1) * ts, W)
            th, tw = y_hi - y_lo, x_hi - x_lo
            sel = (
                (tx0 <= tx) & (tx < tx1) & (ty0 <= ty) & (ty < ty1)
            ).nonzero(as_tuple=False).squeeze(1)
            if sel.numel() == 0:
                tile_images.append(bg.expand(th, tw, 3))
                tile_alphas.append(torch.zeros(th, tw, dtype=dtype))
                continue
            key = (th, tw, y_lo, x_lo)
            if key not in grids:
                ys = torch.arange(y_lo, y_hi, dtype=dtype)
                xs = torch.arange(x_lo, x_hi, dtype=dtype)
                gy, gx = torch.meshgrid(ys, xs, indexing="ij")
                grids[key] = (gx.reshape(-1), gy.reshape(-1))
            px, py = grids[key]

            dx = uv[sel, 0:1] - px[None, :]
            dy = uv[sel, 1:2] - py[None, :]
            power = (
                -0.5 * (conic_a[sel, None] * dx * dx + conic_c[sel, None] * dy * dy)
                - conic_b[sel, None] * dx * dy
            )
            alpha = torch.clamp(opacity[sel, None] * torch.exp(power), max=settings.alpha_cap)
            alpha = alpha * (alpha >= settings.alpha_min).to(dtype)
            logs = torch.log1p(-alpha)
            t_inc = torch.exp(torch.cumsum(logs, dim=0))
            keep = (t_inc >= settings.transmittance_floor).to(dtype)
            t_excl = torch.cat(
                [torch.ones(1, px.numel(), dtype=dtype), t_inc[:-1]], dim=0
            )
            w = alpha * keep * t_excl
            t_final = torch.exp((logs * keep).sum(dim=0))
            tile_rgb = torch.einsum("sp,sc->pc", w, colors[sel])
            tile_rgb = tile_rgb + t_final[:, None] * bg[None, :]
            tile_images.append(tile_rgb.reshape(th, tw, 3))
            tile_alphas.append((1.0 - t_final).reshape(th, tw))
            with torch.no_grad():
                contributed[sel] |= w.max(dim=1).values > settings.contribution_min
        row_images.append(torch.cat(tile_images, dim=1))
        row_alphas.append(torch.cat(tile_alphas, dim=1))
    image = torch.cat(row_images, dim=0)
    alpha_map = torch.cat(row_alphas, dim=0)

    global_ids = idx
    if update_visibility:
        with torch.no_grad():
            hit = global_ids[contributed]
            for c, off in zip(clouds, offsets):
                if c.frozen:
                    continue
                local = hit[(hit >= off) & (hit < off + len(c))] - off
                c.add_visibility(local)

    return RenderOutput(
        image=image,
        alpha=alpha_map,
        means2d=uv,
        visible_ids=global_ids,
        radii=radius.to(torch.long),
        touched=touched,
        contributed=contributed,
        cloud_offsets=offsets,
    )


def render_backward(output: RenderOutput, image_grad: torch.Tensor):
    """Convenience wrapper: push d(loss)/d(image) through the stored graph."""
    output.backward(image_grad)
