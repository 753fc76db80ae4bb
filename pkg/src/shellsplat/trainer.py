"""Two-stage optimization of Gaussian clouds.

Stage 1 fits the background shell: masked photometric loss plus the shell and
planarity penalties, with densification (clone/split on screen-space gradient)
and pruning. Size-based pruning is disabled; instead Gaussians that were never
visible since the last prune are removed, together with near-transparent ones.

Stage 2 fits the nearby content over the frozen background: the background
parameters are detached from the computation graph but take part in the joint
depth sort. Stage-2 pruning additionally removes trainable Gaussians whose
center leaves the inner sphere.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .config import StageConfig
from .losses import total_loss
from .model import GaussianCloud, SceneShell, build_rotation
from .ply import save_ply
from .renderer import RasterSettings, RenderOutput, render


class TrainerError(RuntimeError):
    pass


class TrainingDiverged(TrainerError):
    pass


class FrozenCloudMutated(TrainerError):
    pass


@dataclass
class PruneReport:
    removed_opacity: int = 0
    removed_visibility: int = 0
    removed_radius: int = 0
    removed_size: int = 0  # size-based pruning is disabled; stays 0

    @property
    def total(self) -> int:
        return (
            self.removed_opacity
            + self.removed_visibility
            + self.removed_radius
            + self.removed_size
        )

    def merge(self, other: "PruneReport"):
        self.removed_opacity += other.removed_opacity
        self.removed_visibility += other.removed_visibility
        self.removed_radius += other.removed_radius
        self.removed_size += other.removed_size


@dataclass
class StageResult:
    cloud: GaussianCloud
    prune_report: PruneReport
    skipped_steps: int
    iterations: int
    final_loss: float
    loss_log: Optional[Path]


def expon_lr(step: int, lr_init: float, lr_final: float, max_steps: int) -> float:
    if step >= max_steps:
        return lr_final
    t = max(step, 0) / max_steps
    return math.exp(math.log(lr_init) * (1 - t) + math.log(lr_final) * t)


class CloudOptimizer:
    """Adam over the six parameter groups of a cloud, with the pointer surgery
    needed when Gaussians are added or removed mid-training."""

    def __init__(self, cloud: GaussianCloud, config: StageConfig, spatial_scale: float):
        self.cloud = cloud
        self.config = config
        self.spatial_scale = float(spatial_scale)
        self.skipped_steps = 0
        params = cloud.named_parameters()
        groups = [
            {"params": [params["xyz"]], "lr": config.position_lr_init * self.spatial_scale, "name": "xyz"},
            {"params": [params["f_dc"]], "lr": config.feature_lr, "name": "f_dc"},
            {"params": [params["f_rest"]], "lr": config.feature_lr / 20.0, "name": "f_rest"},
            {"params": [params["opacity"]], "lr": config.opacity_lr, "name": "opacity"},
            {"params": [params["scaling"]], "lr": config.scaling_lr, "name": "scaling"},
            {"params": [params["rotation"]], "lr": config.rotation_lr, "name": "rotation"},
        ]
        self.optimizer = torch.optim.Adam(groups, lr=0.0, eps=1e-15)

    def update_learning_rate(self, iteration: int):
        lr = expon_lr(
            iteration,
            self.config.position_lr_init * self.spatial_scale,
            self.config.position_lr_final * self.spatial_scale,
            self.config.iterations,
        )
        for group in self.optimizer.param_groups:
            if group["name"] == "xyz":
                group["lr"] = lr
        return lr

    def step(self):
        """Adam step that skips any group whose gradient is non-finite."""
        for group in self.optimizer.param_groups:
            p = group["params"][0]
            if p.grad is not None and not bool(torch.isfinite(p.grad).all()):
                p.grad = None
                self.skipped_steps += 1
        self.optimizer.step()
        self.optimizer.zero_grad(set_to_none=True)

    # -- pointer surgery (keeps Adam moments aligned with the new tensors) ----

    def cat_to_groups(self, extensions: dict):
        for group in self.optimizer.param_groups:
            name = group["name"]
            if name not in extensions:
                continue
            ext = extensions[name]
            old = group["params"][0]
            stored = self.optimizer.state.pop(old, None)
            new_param = torch.nn.Parameter(
                torch.cat((old.detach(), ext.detach()), dim=0).requires_grad_(True)
            )
            if stored is not None:
                stored["exp_avg"] = torch.cat(
                    (stored["exp_avg"], torch.zeros_like(ext)), dim=0
                )
                stored["exp_avg_sq"] = torch.cat(
                    (stored["exp_avg_sq"], torch.zeros_like(ext)), dim=0
                )
                self.optimizer.state[new_param] = stored
            group["params"][0] = new_param
            self.cloud.set_param(name, new_param)

    def prune_groups(self, keep_mask: torch.Tensor):
        for group in self.optimizer.param_groups:
            old = group["params"][0]
            stored = self.optimizer.state.pop(old, None)
            new_param = torch.nn.Parameter(old.detach()[keep_mask].requires_grad_(True))
            if stored is not None:
                stored["exp_avg"] = stored["exp_avg"][keep_mask]
                stored["exp_avg_sq"] = stored["exp_avg_sq"][keep_mask]
                self.optimizer.state[new_param] = stored
            group["params"][0] = new_param
            self.cloud.set_param(group["name"], new_param)


class StageTrainer:
    """Shared loop machinery for both stages."""

    def __init__(
        self,
        cloud: GaussianCloud,
        views,
        shell: SceneShell,
        config: StageConfig,
        stage: int,
        frozen: Optional[GaussianCloud] = None,
        out_dir=None,
        log_name: str = "loss.csv",
        bg_color=(0.0, 0.0, 0.0),
        raster_settings: Optional[RasterSettings] = None,
        clamp_split_to_shell: Optional[bool] = None,
    ):
        if stage not in (1, 2):
            raise ValueError("stage must be 1 or 2")
        if not views:
            raise TrainerError("no training views")
        for v in views:
            if v.image is None:
                raise TrainerError(f"view '{v.view_id}' has no image")
        # Views whose mask excludes every pixel carry no signal for this stage
        # (e.g. a camera staring straight at the nearby content during stage 1).
        usable = [v for v in views if v.mask is None or bool(np.asarray(v.mask).any())]
        self.skipped_views = len(views) - len(usable)
        if not usable:
            raise TrainerError("every training view is fully masked")
        views = usable
        self.cloud = cloud
        self.views = list(views)
        self.shell = shell
        self.config = config
        self.stage = stage
        self.frozen = frozen
        if frozen is not None and not frozen.frozen:
            raise TrainerError("stage-2 background cloud must be frozen")
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.log_name = log_name
        self.bg_color = torch.tensor(bg_color, dtype=cloud.dtype)
        self.settings = raster_settings or RasterSettings()
        self.clamp_split = (
            clamp_split_to_shell if clamp_split_to_shell is not None else stage == 1
        )
        spatial = shell.r_outer if stage == 1 else shell.r_inner
        self.optim = CloudOptimizer(cloud, config, spatial)
        self.prune_report = PruneReport()
        self.xyz_gradient_accum = torch.zeros(len(cloud), 1, dtype=cloud.dtype)
        self.denom = torch.zeros(len(cloud), 1, dtype=cloud.dtype)
        self.rng = np.random.default_rng(config.seed)
        self.torch_gen = torch.Generator().manual_seed(int(config.seed) + 1)
        self._order = []
        self._frozen_bytes = frozen.state_bytes() if frozen is not None else None
        cloud.reset_visibility()

        # Targets as tensors, once.
        self._targets = [
            torch.as_tensor(v.image, dtype=cloud.dtype) for v in self.views
        ]
        self._masks = [
            torch.as_tensor(v.mask) if v.mask is not None else None for v in self.views
        ]

    # -- densification ------------------------------------------------------

    def _reset_stats(self):
        n = len(self.cloud)
        self.xyz_gradient_accum = torch.zeros(n, 1, dtype=self.cloud.dtype)
        self.denom = torch.zeros(n, 1, dtype=self.cloud.dtype)

    def add_densification_stats(self, out: RenderOutput):
        if out.means2d is None or out.means2d.grad is None:
            return
        offset = out.cloud_offsets[-1] if self.frozen is not None else 0
        ids = out.visible_ids
        sel = out.touched & (ids >= offset)
        if not bool(sel.any()):
            return
        local = ids[sel] - offset
        norms = out.means2d.grad[sel].norm(dim=-1, keepdim=True)
        self.xyz_gradient_accum.index_add_(0, local, norms)
        self.denom.index_add_(
            0, local, torch.ones(local.numel(), 1, dtype=self.cloud.dtype)
        )

    def _postfix_params(self, mask: torch.Tensor) -> dict:
        c = self.cloud
        return {
            "xyz": c._xyz.detach()[mask],
            "f_dc": c._features_dc.detach()[mask],
            "f_rest": c._features_rest.detach()[mask],
            "opacity": c._opacity.detach()[mask],
            "scaling": c._scaling.detach()[mask],
            "rotation": c._rotation.detach()[mask],
        }

    def densify_and_clone(self, grads: torch.Tensor, extent: float):
        cfg = self.config
        mask = (grads.squeeze(1) >= cfg.densify_grad_threshold) & (
            self.cloud.get_scaling.max(dim=1).values <= cfg.percent_dense * extent
        )
        n_new = int(mask.sum())
        if n_new == 0:
            return 0
        self.optim.cat_to_groups(self._postfix_params(mask))
        self.cloud.visibility_count = torch.cat(
            [self.cloud.visibility_count, self.cloud.visibility_count[mask]]
        )
        return n_new

    def densify_and_split(self, grads: torch.Tensor, extent: float, n_children: int = 2):
        cfg = self.config
        n_before = len(self.cloud)
        padded = torch.zeros(n_before, dtype=self.cloud.dtype)
        padded[: grads.shape[0]] = grads.squeeze(1)
        mask = (padded >= cfg.densify_grad_threshold) & (
            self.cloud.get_scaling.max(dim=1).values > cfg.percent_dense * extent
        )
        n_split = int(mask.sum())
        if n_split == 0:
            return 0
        stds = self.cloud.get_scaling.detach()[mask].repeat(n_children, 1)
        samples = torch.normal(
            mean=torch.zeros_like(stds), std=stds, generator=self.torch_gen
        )
        rots = build_rotation(self.cloud._rotation.detach()[mask]).repeat(n_children, 1, 1)
        base = self.cloud._xyz.detach()[mask].repeat(n_children, 1)
        new_xyz = torch.bmm(rots, samples.unsqueeze(-1)).squeeze(-1) + base
        if self.clamp_split:
            center = self.shell.center_tensor(self.cloud.dtype)
            off = new_xyz - center[None, :]
            r = off.norm(dim=1, keepdim=True).clamp_min(1e-12)
            r_clamped = r.clamp(self.shell.r_inner, self.shell.r_outer)
            new_xyz = center[None, :] + off * (r_clamped / r)
        new_scaling = torch.log(
            self.cloud.get_scaling.detach()[mask].repeat(n_children, 1) / (0.8 * n_children)
        )
        ext = {
            "xyz": new_xyz,
            "f_dc": self.cloud._features_dc.detach()[mask].repeat(n_children, 1, 1),
            "f_rest": self.cloud._features_rest.detach()[mask].repeat(n_children, 1, 1),
            "opacity": self.cloud._opacity.detach()[mask].repeat(n_children, 1),
            "scaling": new_scaling,
            "rotation": self.cloud._rotation.detach()[mask].repeat(n_children, 1),
        }
        self.optim.cat_to_groups(ext)
        self.cloud.visibility_count = torch.cat(
            [
                self.cloud.visibility_count,
                self.cloud.visibility_count[mask].repeat(n_children),
            ]
        )
        # Parents of splits are replaced by their children.
        keep = torch.ones(len(self.cloud), dtype=torch.bool)
        keep[:n_before] = ~mask
        self._apply_prune_mask(keep)
        return n_split

    def densify(self, extent: float):
        if len(self.cloud) >= self.config.max_gaussians:
            return
        grads = self.xyz_gradient_accum / self.denom
        grads[self.denom == 0] = 0.0
        self.densify_and_clone(grads, extent)
        self.densify_and_split(grads, extent)
        self._reset_stats()

    # -- pruning -------------------------------------------------------------

    def _apply_prune_mask(self, keep: torch.Tensor):
        if not bool(keep.any()):
            raise TrainerError("pruning would remove every Gaussian")
        self.optim.prune_groups(keep)
        self.cloud.visibility_count = self.cloud.visibility_count[keep]
        if self.xyz_gradient_accum.shape[0] == keep.shape[0]:
            self.xyz_gradient_accum = self.xyz_gradient_accum[keep]
            self.denom = self.denom[keep]
        else:
            self._reset_stats()

    def prune(self) -> PruneReport:
        """Remove transparent, never-visible and (stage 2) escaped Gaussians.

        There is deliberately no size-based rule here; large Gaussians are kept.
        """
        c = self.cloud
        report = PruneReport()
        opacity_mask = (c.get_opacity.detach().squeeze(1) < self.config.opacity_prune_threshold)
        vis_mask = c.visibility_count == 0
        if self.stage == 2:
            center = self.shell.center_tensor(c.dtype)
            dist = (c.get_xyz.detach() - center[None, :]).norm(dim=1)
            radius_mask = dist > self.shell.r_inner
        else:
            radius_mask = torch.zeros(len(c), dtype=torch.bool)
        remove = opacity_mask | vis_mask | radius_mask
        report.removed_opacity = int(opacity_mask.sum())
        report.removed_visibility = int((vis_mask & ~opacity_mask).sum())
        report.removed_radius = int((radius_mask & ~opacity_mask & ~vis_mask).sum())
        if bool(remove.any()):
            self._apply_prune_mask(~remove)
        c.reset_visibility()
        self.prune_report.merge(report)
        return report

    # -- main loop -------------------------------------------------------------

    def _next_view(self) -> int:
        if not self._order:
            self._order = list(self.rng.permutation(len(self.views)))
        return self._order.pop()

    def _check_frozen(self):
        if self.frozen is None:
            return
        if self.frozen.state_bytes() != self._frozen_bytes:
            raise FrozenCloudMutated(
                "frozen background parameters changed during stage-2 training"
            )

    def _dump_state(self, iteration: int, reason: str) -> Optional[Path]:
        if self.out_dir is None:
            return None
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / f"diverged_stage{self.stage}_iter{iteration}.ply"
        try:
            save_ply(self.cloud, path)
        except Exception:
            return None
        return path

    def run(self, progress_every: int = 0) -> StageResult:
        cfg = self.config
        log_path = None
        writer = None
        log_file = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            log_path = self.out_dir / self.log_name
            log_file = open(log_path, "w", newline="")
            writer = csv.writer(log_file)
            writer.writerow(
                ["iteration", "total", "l1", "dssim", "shell", "planarity", "n_gaussians"]
            )
        final_loss = float("nan")
        start = time.time()
        try:
            for it in range(1, cfg.iterations + 1):
                self.optim.update_learning_rate(it)
                vi = self._next_view()
                view = self.views[vi]
                clouds = [self.frozen, self.cloud] if self.frozen is not None else [self.cloud]
                out = render(clouds, view, bg_color=self.bg_color, settings=self.settings)
                lb = total_loss(
                    out.image,
                    self._targets[vi],
                    self._masks[vi],
                    self.cloud,
                    self.shell,
                    lambda_dssim=cfg.lambda_dssim,
                    lambda_shell=cfg.lambda_shell,
                    lambda_planarity=cfg.lambda_planarity,
                    epsilon=cfg.epsilon,
                )
                if not bool(torch.isfinite(lb.total.detach())):
                    dump = self._dump_state(it, "non-finite loss")
                    raise TrainingDiverged(
                        f"stage {self.stage} iteration {it}: non-finite loss "
                        f"{lb.as_floats()}; state dumped to {dump}"
                    )
                lb.total.backward()
                with torch.no_grad():
                    self.add_densification_stats(out)
                self.optim.step()
                self.cloud.renormalize_rotations_()

                if (
                    cfg.densify_from <= it <= cfg.densify_until
                    and it % cfg.densify_interval == 0
                ):
                    extent = self.shell.r_outer if self.stage == 1 else self.shell.r_inner
                    self.densify(extent)
                if it % cfg.prune_interval == 0:
                    self.prune()
                    self._check_frozen()

                final_loss = float(lb.total.detach())
                if writer is not None:
                    row = lb.as_floats()
                    writer.writerow(
                        [
                            it,
                            f"{row['total']:.6f}",
                            f"{row['l1']:.6f}",
                            f"{row['dssim']:.6f}",
                            f"{row['shell']:.6f}",
                            f"{row['planarity']:.6f}",
                            len(self.cloud),
                        ]
                    )
                if progress_every and (it % progress_every == 0 or it == cfg.iterations):
                    el = time.time() - start
                    print(
                        f"[stage {self.stage}] iter {it}/{cfg.iterations} "
                        f"loss {final_loss:.4f} gaussians {len(self.cloud)} "
                        f"({el:.0f}s)",
                        flush=True,
                    )
        finally:
            if log_file is not None:
                log_file.close()
        self._check_frozen()
        return StageResult(
            cloud=self.cloud,
            prune_report=self.prune_report,
            skipped_steps=self.optim.skipped_steps,
            iterations=cfg.iterations,
            final_loss=final_loss,
            loss_log=log_path,
        )


def train_background(
    cloud: GaussianCloud,
    views,
    shell: SceneShell,
    config: StageConfig,
    out_dir=None,
    progress_every: int = 0,
    raster_settings: Optional[RasterSettings] = None,
) -> StageResult:
    """Stage 1: optimize the background shell on masked views."""
    trainer = StageTrainer(
        cloud,
        views,
        shell,
        config,
        stage=1,
        out_dir=out_dir,
        log_name="stage1_loss.csv",
        raster_settings=raster_settings,
    )
    return trainer.run(progress_every=progress_every)


def train_foreground(
    cloud: GaussianCloud,
    background: GaussianCloud,
    views,
    shell: SceneShell,
    config: StageConfig,
    out_dir=None,
    progress_every: int = 0,
    raster_settings: Optional[RasterSettings] = None,
) -> StageResult:
    """Stage 2: optimize nearby content over the frozen background."""
    if config.lambda_shell != 0.0 or config.lambda_planarity != 0.0:
        raise TrainerError("geometric shell terms apply to stage 1 only")
    trainer = StageTrainer(
        cloud,
        views,
        shell,
        config,
        stage=2,
        frozen=background,
        out_dir=out_dir,
        log_name="stage2_loss.csv",
        raster_settings=raster_settings,
    )
    return trainer.run(progress_every=progress_every)


def save_checkpoint(cloud: GaussianCloud, path, meta: dict):
    from .config import write_meta

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_ply(cloud, path)
    write_meta(path.with_suffix(".meta.txt"), meta)
