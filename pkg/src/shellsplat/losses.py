"""Training losses: masked photometric (L1 + DSSIM) and geometric shell terms.

The shell penalty pushes Gaussian centers into the [r_inner, r_outer] band
around the scene center; the planarity penalty asks each Gaussian's shortest
principal axis to align with the radial direction and grows with anisotropy:

  shell     = mean_i (relu(|p_i - O| - r_outer) + relu(r_inner - |p_i - O|))^2
  planarity = mean_i (1 - |rhat_i . a_i|) * s_max_i / (s_min_i + eps)

Both are differentiable almost everywhere; the axis choice (argmin/argmax of
the scales) is treated as fixed within a step.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .model import GaussianCloud, SceneShell, build_rotation

_WINDOW_CACHE = {}


def gaussian_window_1d(size: int = 11, sigma: float = 1.5, dtype=torch.float32):
    key = (size, sigma, dtype)
    if key not in _WINDOW_CACHE:
        xs = torch.arange(size, dtype=dtype) - (size - 1) / 2.0
        w = torch.exp(-(xs * xs) / (2.0 * sigma * sigma))
        _WINDOW_CACHE[key] = w / w.sum()
    return _WINDOW_CACHE[key]


def _blur(img_chw: torch.Tensor, size: int, sigma: float) -> torch.Tensor:
    """Separable Gaussian blur with zero padding; img is (C,H,W)."""
    c = img_chw.shape[0]
    w = gaussian_window_1d(size, sigma, img_chw.dtype)
    row = w.reshape(1, 1, 1, size).expand(c, 1, 1, size)
    col = w.reshape(1, 1, size, 1).expand(c, 1, size, 1)
    x = img_chw.unsqueeze(0)
    x = F.conv2d(x, row, padding=(0, size // 2), groups=c)
    x = F.conv2d(x, col, padding=(size // 2, 0), groups=c)
    return x.squeeze(0)


def ssim_map(
    img1: torch.Tensor,
    img2: torch.Tensor,
    window_size: int = 11,
    sigma: float = 1.5,
    k1: float = 0.01,
    k2: float = 0.03,
) -> torch.Tensor:
    """Per-pixel SSIM (channel mean) for (H,W,3) images in [0,1], zero-padded."""
    if img1.shape != img2.shape:
        raise ValueError(f"image shapes differ: {tuple(img1.shape)} vs {tuple(img2.shape)}")
    a = img1.permute(2, 0, 1)
    b = img2.permute(2, 0, 1)
    c1 = k1 * k1
    c2 = k2 * k2
    mu1 = _blur(a, window_size, sigma)
    mu2 = _blur(b, window_size, sigma)
    mu1_sq = mu1 * mu1
    mu2_sq = mu2 * mu2
    mu12 = mu1 * mu2
    sigma1_sq = _blur(a * a, window_size, sigma) - mu1_sq
    sigma2_sq = _blur(b * b, window_size, sigma) - mu2_sq
    sigma12 = _blur(a * b, window_size, sigma) - mu12
    num = (2 * mu12 + c1) * (2 * sigma12 + c2)
    den = (mu1_sq + mu2_sq + c1) * (sigma1_sq + sigma2_sq + c2)
    return (num / den).mean(dim=0)


def ssim(img1: torch.Tensor, img2: torch.Tensor, **kw) -> torch.Tensor:
    return ssim_map(img1, img2, **kw).mean()


class EmptyMaskError(ValueError):
    pass


def photometric_terms(rendered: torch.Tensor, target: torch.Tensor, mask=None):
    """(L1, DSSIM) between (H,W,3) images, restricted to mask==True pixels.

    Both images are zeroed outside the mask before any windowed statistic, so
    excluded pixels cannot influence the value.
    """
    if rendered.shape != target.shape:
        raise ValueError(
            f"rendered/target shapes differ: {tuple(rendered.shape)} vs {tuple(target.shape)}"
        )
    if mask is None:
        l1 = (rendered - target).abs().mean()
        dssim = (1.0 - ssim(rendered, target)) / 2.0
        return l1, dssim
    mask = torch.as_tensor(mask, dtype=torch.bool)
    if mask.shape != rendered.shape[:2]:
        raise ValueError(
            f"mask shape {tuple(mask.shape)} does not match image {tuple(rendered.shape[:2])}"
        )
    n = int(mask.sum())
    if n == 0:
        raise EmptyMaskError("photometric mask excludes every pixel")
    m = mask.to(rendered.dtype)[..., None]
    rm = rendered * m
    tm = target * m
    l1 = (rm - tm).abs().sum() / (n * rendered.shape[2])
    smap = ssim_map(rm, tm)
    dssim = (1.0 - smap[mask].mean()) / 2.0
    return l1, dssim


def shell_loss(cloud: GaussianCloud, shell: SceneShell) -> torch.Tensor:
    if len(cloud) == 0:
        raise ValueError("shell loss needs at least one Gaussian")
    p = cloud.get_xyz
    center = shell.center_tensor(p.dtype)
    r = torch.norm(p - center[None, :], dim=1)
    excess = F.relu(r - shell.r_outer) + F.relu(shell.r_inner - r)
    return (excess * excess).mean()


def planarity_loss(
    cloud: GaussianCloud, shell: SceneShell, epsilon: float = 1e-8
) -> torch.Tensor:
    if len(cloud) == 0:
        raise ValueError("planarity loss needs at least one Gaussian")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    p = cloud.get_xyz
    center = shell.center_tensor(p.dtype)
    offset = p - center[None, :]
    r = torch.norm(offset, dim=1, keepdim=True)
    if bool((r.detach() < 1e-12).any()):
        raise ValueError("planarity loss undefined for a Gaussian at the shell center")
    rhat = offset / r
    s = cloud.get_scaling
    i_min = torch.argmin(s.detach(), dim=1)
    i_max = torch.argmax(s.detach(), dim=1)
    rows = torch.arange(len(cloud))
    s_min = s[rows, i_min]
    s_max = s[rows, i_max]
    R = build_rotation(cloud._rotation)
    axis = R[rows, :, i_min]  # world direction of the shortest principal axis
    dot = (rhat * axis).sum(dim=1)
    # |dot| can exceed 1 by an ulp for exactly aligned axes; keep the term >= 0
    term = (1.0 - dot.abs().clamp(max=1.0)) * s_max / (s_min + epsilon)
    return term.mean()


@dataclass
class LossBreakdown:
    total: torch.Tensor
    l1: torch.Tensor
    dssim: torch.Tensor
    shell: torch.Tensor
    planarity: torch.Tensor

    def as_floats(self) -> dict:
        return {
            "total": float(self.total.detach()),
            "l1": float(self.l1.detach()),
            "dssim": float(self.dssim.detach()),
            "shell": float(self.shell.detach()),
            "planarity": float(self.planarity.detach()),
        }


def total_loss(
    rendered: torch.Tensor,
    target: torch.Tensor,
    mask,
    cloud: GaussianCloud,
    shell: SceneShell,
    lambda_dssim: float = 0.2,
    lambda_shell: float = 0.0,
    lambda_planarity: float = 0.0,
    epsilon: float = 1e-8,
) -> LossBreakdown:
    """Weighted training loss.

    Geometric terms are evaluated on `cloud` (the trainable one) and skipped
    entirely when their weight is zero.
    """
    for name, lam in (
        ("lambda_dssim", lambda_dssim),
        ("lambda_shell", lambda_shell),
        ("lambda_planarity", lambda_planarity),
    ):
        if lam < 0:
            raise ValueError(f"{name} must be non-negative, got {lam}")
    if lambda_dssim > 1:
        raise ValueError(f"lambda_dssim must be at most 1, got {lambda_dssim}")
    l1, dssim = photometric_terms(rendered, target, mask)
    zero = torch.zeros((), dtype=rendered.dtype)
    sh = shell_loss(cloud, shell) if lambda_shell > 0 else zero
    pl = planarity_loss(cloud, shell, epsilon) if lambda_planarity > 0 else zero
    total = (
        (1.0 - lambda_dssim) * l1
        + lambda_dssim * dssim
        + lambda_shell * sh
        + lambda_planarity * pl
    )
    return LossBreakdown(total=total, l1=l1, dssim=dssim, shell=sh, planarity=pl)
