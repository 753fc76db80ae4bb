"""Command line pipeline.

Subcommands:
  prepare           ingest COLMAP + depth, align scale, pick/confirm r_inner,
                    write masks, distance maps, foreground seed points
  train-background  stage 1: optimize the background shell on masked views
  train-foreground  stage 2: optimize nearby content over the frozen background
  envmap            render cubemap + equirect panorama from the background
  eval              PSNR/SSIM on the held-out test views
  all               run every step (needs --r-inner for headless operation)
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np
from . import __version__
from .config import RunConfig, StageConfig, config_hash, parse_config_file
from .envmap import render_cubemap, save_environment
from .ingest import (
    align_scale,
    apply_scale,
    attach_rasters,
    barycenter,
    default_r_outer,
    load_mask,
    read_colmap_text,
    read_pfm,
    read_scene_params,
    write_pfm,
    write_scene_params,
)
from .metrics import evaluate_views, read_split, split_views, write_split
from .model import SceneShell, merge_clouds
from .ply import load_ply, save_ply
from .segmentation import DistanceMap, distance_map, segment
from .shell_init import init_background_cloud, init_foreground_cloud
from .trainer import save_checkpoint, train_background, train_foreground

STAGE_FIELDS = {f.name for f in dataclasses.fields(StageConfig)}
RUN_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def build_run_config(args) -> RunConfig:
    """Defaults <- config file <- CLI flags."""
    cfg = RunConfig()
    updates = {}
    stage_updates = {1: {}, 2: {}}
    if getattr(args, "config", None):
        for key, value in parse_config_file(args.config).items():
            if key.startswith("stage1."):
                stage_updates[1][key[len("stage1."):]] = value
            elif key.startswith("stage2."):
                stage_updates[2][key[len("stage2."):]] = value
            elif key in RUN_FIELDS:
                updates[key] = value
            else:
                raise ValueError(f"unknown config key '{key}'")
    flag_map = {
        "colmap": "colmap_dir",
        "images": "images_dir",
        "depths": "depths_dir",
        "out": "out_dir",
        "seed": "seed",
        "depth_convention": "depth_convention",
        "level": "icosphere_level",
        "init_mode": "init_mode",
        "r_inner": "r_inner",
        "r_outer": "r_outer",
        "test_fraction": "test_fraction",
        "port": "port",
        "face_res": "face_res",
        "near_cut": "near_cut",
        "ablate": "ablate",
    }
    for flag, field in flag_map.items():
        v = getattr(args, flag, None)
        if v is not None:
            updates[field] = v
    center = getattr(args, "center", None)
    if center is not None:
        updates["center"] = tuple(float(x) for x in center.split(","))
    for argname, stage, field in (
        ("iterations1", 1, "iterations"),
        ("iterations2", 2, "iterations"),
        ("lambda_shell", 1, "lambda_shell"),
        ("lambda_planarity", 1, "lambda_planarity"),
        ("sh_degree", 1, "sh_degree"),
        ("sh_degree", 2, "sh_degree"),
        ("max_gaussians", 1, "max_gaussians"),
        ("max_gaussians", 2, "max_gaussians"),
    ):
        v = getattr(args, argname, None)
        if v is not None:
            stage_updates[stage][field] = v
    for k, v in updates.items():
        setattr(cfg, k, v)
    if stage_updates[1]:
        cfg.stage1 = cfg.stage1.replace(**stage_updates[1])
    if stage_updates[2]:
        cfg.stage2 = cfg.stage2.replace(**stage_updates[2])
    cfg.__post_init__()
    cfg = cfg.apply_ablation()
    return cfg


def _stage_cfg(cfg: RunConfig, stage: int) -> StageConfig:
    base = cfg.stage1 if stage == 1 else cfg.stage2
    return base.replace(seed=cfg.seed + (stage - 1))


def _out(cfg) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_scaled_scene(cfg: RunConfig, params: dict):
    scene = read_colmap_text(cfg.colmap_dir)
    apply_scale(scene, float(params["scale"]))
    return scene


def _train_views(cfg, scene, with_masks):
    out = _out(cfg)
    manifest = read_split(out / "split.txt")
    by_id = {v.view_id: v for v in scene.views}
    missing = [vid for vid in manifest.train_ids if vid not in by_id]
    if missing:
        raise ValueError(f"split references unknown views: {missing}")
    views = [by_id[vid] for vid in manifest.train_ids]
    views = attach_rasters(views, images_dir=cfg.images_dir)
    if with_masks:
        masked = []
        for v in views:
            mask_path = out / "masks" / f"{v.view_id}_bgmask.png"
            if not mask_path.exists():
                raise FileNotFoundError(f"missing mask {mask_path}; run prepare first")
            masked.append(v.replace(mask=load_mask(mask_path)))
        views = masked
    return views, manifest


def _shell_from_params(params) -> SceneShell:
    center = np.array([params["center_x"], params["center_y"], params["center_z"]])
    return SceneShell(center=center, r_inner=params["r_inner"], r_outer=params["r_outer"])


# -- commands -------------------------------------------------------------------


def cmd_prepare(args) -> int:
    cfg = build_run_config(args)
    out = _out(cfg)
    scene = read_colmap_text(cfg.colmap_dir)
    scene.views = attach_rasters(
        scene.views, images_dir=cfg.images_dir, depths_dir=cfg.depths_dir, require_depth=True
    )
    if args.scale is not None:
        scale, n_obs = float(args.scale), 0
    else:
        scale, n_obs = align_scale(scene, scene.views)
    apply_scale(scene, scale)
    print(f"scale alignment: s={scale:.6f} ({n_obs} observations)")

    center = np.asarray(cfg.center, dtype=np.float64) if cfg.center else barycenter(scene.views)
    r_outer = cfg.r_outer if cfg.r_outer is not None else default_r_outer(scene.views)

    dist_dir = out / "distance"
    dist_dir.mkdir(exist_ok=True)
    dmaps = []
    for v in scene.views:
        dm = distance_map(v, center, convention=cfg.depth_convention)
        dmaps.append(dm)
        write_pfm(dist_dir / f"{v.view_id}.pfm", np.nan_to_num(
            dm.values, posinf=np.finfo(np.float32).max).astype(np.float32))

    manifest = split_views([v.view_id for v in scene.views], seed=cfg.seed,
                           test_fraction=cfg.test_fraction)
    write_split(manifest, out / "split.txt")

    r_inner = cfg.r_inner
    if r_inner is None:
        from .service import SegmentationSession, serve_until_confirmed

        session = SegmentationSession(
            {dm.view_id: dm for dm in dmaps}, r_outer=r_outer, seed=cfg.seed
        )
        r_inner = serve_until_confirmed(session, port=cfg.port)
        print(f"confirmed r_inner={r_inner}")
    if not (0.0 < float(r_inner) < float(r_outer)):
        raise ValueError(f"r_inner must be in (0, r_outer={r_outer}), got {r_inner}")

    result = segment(dmaps, float(r_inner), float(r_outer),
                     points=scene.points.positions, center=center)
    masks_dir = out / "masks"
    masks_dir.mkdir(exist_ok=True)
    from .ingest import save_mask_png

    for vid, mask in result.masks.items():
        save_mask_png(masks_dir / f"{vid}_bgmask.png", mask)

    fg_idx = result.foreground_point_indices
    with open(out / "foreground_points.txt", "w") as f:
        for i in fg_idx:
            row = [*scene.points.positions[i], *scene.points.colors[i]]
            f.write(" ".join(repr(float(x)) for x in row) + "\n")

    params = {
        "center_x": float(center[0]),
        "center_y": float(center[1]),
        "center_z": float(center[2]),
        "r_inner": float(r_inner),
        "r_outer": float(r_outer),
        "scale": float(scale),
        "seed": int(cfg.seed),
        "depth_convention": cfg.depth_convention,
        "source_colmap": str(cfg.colmap_dir),
        "created_by": f"shellsplat {__version__}",
        "config_hash": config_hash(cfg),
    }
    write_scene_params(out / "scene_params.txt", params)
    print(
        f"prepared {len(scene.views)} views "
        f"({len(manifest.train_ids)} train / {len(manifest.test_ids)} test), "
        f"{len(fg_idx)} foreground points, masks in {masks_dir}"
    )
    return 0


def cmd_train_background(args) -> int:
    cfg = build_run_config(args)
    out = _out(cfg)
    params = read_scene_params(out / "scene_params.txt")
    shell = _shell_from_params(params)
    scene = _load_scaled_scene(cfg, params)
    views, _ = _train_views(cfg, scene, with_masks=True)
    dmaps = []
    for v in views:
        pfm = out / "distance" / f"{v.view_id}.pfm"
        if not pfm.exists():
            raise FileNotFoundError(f"missing distance map {pfm}; run prepare first")
        dmaps.append(DistanceMap(view_id=v.view_id, values=read_pfm(pfm)))
    stage_cfg = _stage_cfg(cfg, 1)
    rng = np.random.default_rng(cfg.seed)
    cloud = init_background_cloud(
        cfg.icosphere_level, views, dmaps, shell,
        mode=cfg.init_mode, rng=rng, sh_degree=stage_cfg.sh_degree,
    )
    print(f"stage 1: {len(cloud)} shell Gaussians, {len(views)} views, "
          f"{stage_cfg.iterations} iterations")
    result = train_background(
        cloud, views, shell, stage_cfg, out_dir=out,
        progress_every=args.progress_every,
    )
    save_checkpoint(
        result.cloud,
        out / "background.ply",
        {
            "stage": 1,
            "iteration": result.iterations,
            "seed": cfg.seed,
            "config_hash": config_hash(cfg),
            "ablate": cfg.ablate,
            "skipped_steps": result.skipped_steps,
            "pruned_opacity": result.prune_report.removed_opacity,
            "pruned_visibility": result.prune_report.removed_visibility,
            "pruned_radius": result.prune_report.removed_radius,
            "pruned_size": result.prune_report.removed_size,
        },
    )
    print(f"stage 1 done: {len(result.cloud)} Gaussians -> {out / 'background.ply'}")
    return 0


def cmd_train_foreground(args) -> int:
    cfg = build_run_config(args)
    out = _out(cfg)
    params = read_scene_params(out / "scene_params.txt")
    shell = _shell_from_params(params)
    scene = _load_scaled_scene(cfg, params)
    views, _ = _train_views(cfg, scene, with_masks=False)
    background = load_ply(out / "background.ply").freeze()
    pts_file = out / "foreground_points.txt"
    if not pts_file.exists():
        raise FileNotFoundError(f"missing {pts_file}; run prepare first")
    rows = [
        [float(x) for x in line.split()]
        for line in pts_file.read_text().splitlines()
        if line.strip()
    ]
    if not rows:
        raise ValueError(
            "no foreground seed points inside the inner sphere; "
            "check r_inner against the sparse reconstruction"
        )
    arr = np.asarray(rows)
    stage_cfg = _stage_cfg(cfg, 2)
    cloud = init_foreground_cloud(arr[:, :3], arr[:, 3:6], sh_degree=stage_cfg.sh_degree)
    print(f"stage 2: {len(cloud)} seed Gaussians over {len(background)} frozen, "
          f"{stage_cfg.iterations} iterations")
    result = train_foreground(
        cloud, background, views, shell, stage_cfg, out_dir=out,
        progress_every=args.progress_every,
    )
    meta = {
        "stage": 2,
        "iteration": result.iterations,
        "seed": cfg.seed,
        "config_hash": config_hash(cfg),
        "ablate": cfg.ablate,
        "skipped_steps": result.skipped_steps,
        "pruned_opacity": result.prune_report.removed_opacity,
        "pruned_visibility": result.prune_report.removed_visibility,
        "pruned_radius": result.prune_report.removed_radius,
        "pruned_size": result.prune_report.removed_size,
    }
    save_checkpoint(result.cloud, out / "foreground.ply", meta)
    save_ply(merge_clouds([background, result.cloud]), out / "combined.ply")
    print(f"stage 2 done: {len(result.cloud)} Gaussians -> {out / 'foreground.ply'} "
          f"(+ combined.ply)")
    return 0


def cmd_envmap(args) -> int:
    cfg = build_run_config(args)
    out = _out(cfg)
    params = read_scene_params(out / "scene_params.txt")
    shell = _shell_from_params(params)
    background = load_ply(out / "background.ply")
    near_cut = cfg.near_cut if cfg.near_cut is not None else float(params["r_inner"])
    center = np.asarray(cfg.center, dtype=np.float64) if cfg.center else None
    cube = render_cubemap(
        background, shell, center=center, face_res=cfg.face_res, near_cut=near_cut
    )
    save_environment(cube, out / "envmap")
    print(
        f"environment maps in {out / 'envmap'} "
        f"(face_res={cfg.face_res}, near_cut={near_cut}, "
        f"hole fraction {cube.hole_fraction():.4f})"
    )
    return 0


def cmd_eval(args) -> int:
    cfg = build_run_config(args)
    out = _out(cfg)
    params = read_scene_params(out / "scene_params.txt")
    scene = _load_scaled_scene(cfg, params)
    manifest = read_split(out / "split.txt")
    by_id = {v.view_id: v for v in scene.views}
    views = attach_rasters(
        [by_id[vid] for vid in manifest.test_ids], images_dir=cfg.images_dir
    )
    clouds = [load_ply(out / "background.ply")]
    fg_path = out / "foreground.ply"
    if fg_path.exists():
        clouds.append(load_ply(fg_path))
    rows, summary = evaluate_views(clouds, views, out_dir=out / "eval", save_renders=True)
    for r in rows:
        print(f"  {r['view_id']}: psnr {r['psnr']:.3f}  ssim {r['ssim']:.4f}")
    print(f"mean over {len(rows)} test views: psnr {summary['psnr']:.3f}  "
          f"ssim {summary['ssim']:.4f}")
    return 0


def cmd_all(args) -> int:
    if args.r_inner is None:
        raise SystemExit("'all' runs headless; pass --r-inner explicitly")
    for fn in (cmd_prepare, cmd_train_background, cmd_train_foreground, cmd_envmap, cmd_eval):
        rc = fn(args)
        if rc:
            return rc
    return 0


# -- argument parsing -------------------------------------------------------------


def _add_common(p):
    p.add_argument("--out", required=True, help="output/working directory")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--ablate", choices=["none", "no-shell", "no-planarity", "distance-init"],
                   default=None, help="ablation mode recorded in artifacts")
    p.add_argument("--progress-every", type=int, default=500, dest="progress_every")


def _add_dataset(p, depths=True):
    p.add_argument("--colmap", required=True, help="COLMAP text model directory")
    p.add_argument("--images", required=True, help="directory of input images")
    if depths:
        p.add_argument("--depths", required=True, help="directory of per-view .pfm depth")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shellsplat",
        description="Two-stage Gaussian splatting with a spherical background shell",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="ingest, align, segment")
    _add_dataset(p)
    _add_common(p)
    p.add_argument("--r-inner", type=float, default=None, dest="r_inner",
                   help="inner radius; omit to pick interactively over HTTP")
    p.add_argument("--r-outer", type=float, default=None, dest="r_outer")
    p.add_argument("--center", default=None, help="scene center as 'x,y,z'")
    p.add_argument("--scale", type=float, default=None,
                   help="skip alignment and use this SfM->depth scale")
    p.add_argument("--depth-convention", choices=["z", "ray"], default=None,
                   dest="depth_convention")
    p.add_argument("--test-fraction", type=float, default=None, dest="test_fraction")
    p.add_argument("--port", type=int, default=None)

    p = sub.add_parser("train-background", help="stage 1 shell optimization")
    _add_dataset(p, depths=False)
    _add_common(p)
    p.add_argument("--level", type=int, default=None, help="icosphere subdivision level")
    p.add_argument("--init-mode", choices=["random", "distance"], default=None,
                   dest="init_mode")
    p.add_argument("--iterations", type=int, default=None, dest="iterations1")
    p.add_argument("--lambda-shell", type=float, default=None, dest="lambda_shell")
    p.add_argument("--lambda-planarity", type=float, default=None, dest="lambda_planarity")
    p.add_argument("--sh-degree", type=int, default=None, dest="sh_degree")
    p.add_argument("--max-gaussians", type=int, default=None, dest="max_gaussians")

    p = sub.add_parser("train-foreground", help="stage 2 over frozen background")
    _add_dataset(p, depths=False)
    _add_common(p)
    p.add_argument("--iterations", type=int, default=None, dest="iterations2")
    p.add_argument("--sh-degree", type=int, default=None, dest="sh_degree")
    p.add_argument("--max-gaussians", type=int, default=None, dest="max_gaussians")

    p = sub.add_parser("envmap", help="extract environment maps")
    _add_common(p)
    p.add_argument("--face-res", type=int, default=None, dest="face_res")
    p.add_argument("--near-cut", type=float, default=None, dest="near_cut")
    p.add_argument("--center", default=None, help="viewpoint as 'x,y,z'")

    p = sub.add_parser("eval", help="metrics on the held-out split")
    _add_dataset(p, depths=False)
    _add_common(p)

    p = sub.add_parser("all", help="prepare + both stages + envmap + eval")
    _add_dataset(p)
    _add_common(p)
    p.add_argument("--r-inner", type=float, default=None, dest="r_inner")
    p.add_argument("--r-outer", type=float, default=None, dest="r_outer")
    p.add_argument("--center", default=None, help="scene center as 'x,y,z'")
    p.add_argument("--scale", type=float, default=None)
    p.add_argument("--depth-convention", choices=["z", "ray"], default=None,
                   dest="depth_convention")
    p.add_argument("--test-fraction", type=float, default=None, dest="test_fraction")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--level", type=int, default=None)
    p.add_argument("--init-mode", choices=["random", "distance"], default=None,
                   dest="init_mode")
    p.add_argument("--iterations1", type=int, default=None)
    p.add_argument("--iterations2", type=int, default=None)
    p.add_argument("--lambda-shell", type=float, default=None, dest="lambda_shell")
    p.add_argument("--lambda-planarity", type=float, default=None, dest="lambda_planarity")
    p.add_argument("--sh-degree", type=int, default=None, dest="sh_degree")
    p.add_argument("--max-gaussians", type=int, default=None, dest="max_gaussians")
    p.add_argument("--face-res", type=int, default=None, dest="face_res")
    p.add_argument("--near-cut", type=float, default=None, dest="near_cut")

    return parser


COMMANDS = {
    "prepare": cmd_prepare,
    "train-background": cmd_train_background,
    "train-foreground": cmd_train_foreground,
    "envmap": cmd_envmap,
    "eval": cmd_eval,
    "all": cmd_all,
}


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
