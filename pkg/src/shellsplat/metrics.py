"""Image quality metrics, train/test splitting, and evaluation reports."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .losses import ssim as _ssim
from .ingest import save_image_png
from .renderer import RasterSettings, render


def radial_misalignment(cloud, shell) -> float:
    """Mean (1 - |rhat . shortest_axis|) over a cloud; 0 = perfectly tangential
    pancakes, 1 = shortest axes orthogonal to the radial direction."""
    if len(cloud) == 0:
        raise ValueError("misalignment needs at least one Gaussian")
    with torch.no_grad():
        p = cloud.get_xyz
        center = torch.as_tensor(shell.center, dtype=p.dtype)
        offset = p - center[None, :]
        rhat = offset / offset.norm(dim=1, keepdim=True)
        axis = cloud.shortest_axis_world()
        dots = (rhat * axis).sum(dim=1).abs()
    return float((1.0 - dots).mean())


def psnr(img1, img2) -> float:
    """Peak signal-to-noise ratio for images in [0,1]; +inf for identical."""
    a = torch.as_tensor(img1, dtype=torch.float64)
    b = torch.as_tensor(img2, dtype=torch.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return float("inf")
    return 10.0 * float(np.log10(1.0 / mse))


def ssim(img1, img2) -> float:
    """Mean SSIM (11x11 Gaussian window, sigma 1.5) for (H,W,3) images."""
    a = torch.as_tensor(img1, dtype=torch.float64)
    b = torch.as_tensor(img2, dtype=torch.float64)
    return float(_ssim(a, b))


@dataclass
class SplitManifest:
    seed: int
    train_ids: list
    test_ids: list


def split_views(view_ids, seed: int, test_fraction: float = 0.2) -> SplitManifest:
    """Deterministic shuffle split; test size = round(test_fraction * N) >= 1."""
    ids = list(view_ids)
    if len(ids) != len(set(ids)):
        raise ValueError("duplicate view ids in split input")
    if len(ids) < 5:
        raise ValueError(f"need at least 5 views to split, got {len(ids)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    n_test = max(1, int(round(test_fraction * len(ids))))
    if n_test >= len(ids):
        raise ValueError("test fraction leaves no training views")
    test = sorted(ids[i] for i in order[:n_test])
    train = sorted(ids[i] for i in order[n_test:])
    return SplitManifest(seed=seed, train_ids=train, test_ids=test)


def write_split(manifest: SplitManifest, path):
    lines = [f"seed={manifest.seed}"]
    lines += [f"train {vid}" for vid in manifest.train_ids]
    lines += [f"test {vid}" for vid in manifest.test_ids]
    Path(path).write_text("\n".join(lines) + "\n")


def read_split(path) -> SplitManifest:
    seed = 0
    train, test = [], []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("seed="):
            seed = int(line.split("=", 1)[1])
        elif line.startswith("train "):
            train.append(line.split(" ", 1)[1])
        elif line.startswith("test "):
            test.append(line.split(" ", 1)[1])
        else:
            raise ValueError(f"split manifest: malformed line '{line}'")
    if not train or not test:
        raise ValueError("split manifest missing train or test entries")
    return SplitManifest(seed=seed, train_ids=train, test_ids=test)


def evaluate_views(
    clouds,
    views,
    out_dir=None,
    save_renders: bool = False,
    settings: RasterSettings = None,
):
    """Render `views` from `clouds` and compare against their stored images.

    Returns a list of {view_id, psnr, ssim} rows (plus a `summary` row with
    means); optionally writes metrics.csv and the rendered images.
    """
    rows = []
    renders_dir = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if save_renders:
            renders_dir = out_dir / "renders"
            renders_dir.mkdir(exist_ok=True)
    for view in views:
        if view.image is None:
            raise ValueError(f"view '{view.view_id}' has no reference image")
        with torch.no_grad():
            out = render(clouds, view, settings=settings, update_visibility=False)
        rendered = out.image.detach()
        target = torch.as_tensor(view.image, dtype=rendered.dtype)
        rows.append(
            {
                "view_id": view.view_id,
                "psnr": psnr(rendered, target),
                "ssim": ssim(rendered, target),
            }
        )
        if renders_dir is not None:
            save_image_png(
                renders_dir / f"{view.view_id}.png",
                np.clip(rendered.cpu().numpy(), 0, 1),
            )
    mean_psnr = float(np.mean([r["psnr"] for r in rows]))
    mean_ssim = float(np.mean([r["ssim"] for r in rows]))
    summary = {"view_id": "mean", "psnr": mean_psnr, "ssim": mean_ssim}
    if out_dir is not None:
        with open(out_dir / "metrics.csv", "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=["view_id", "psnr", "ssim"])
            writer.writeheader()
            for r in rows + [summary]:
                writer.writerow(
                    {
                        "view_id": r["view_id"],
                        "psnr": f"{r['psnr']:.4f}",
                        "ssim": f"{r['ssim']:.4f}",
                    }
                )
    return rows, summary
