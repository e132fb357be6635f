"""Static comparison figures: patch mosaics, alignment overlays, camera plots."""

from __future__ import annotations

import numpy as np

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from l2greg import lie
from l2greg.autodiff import Tensor
from l2greg.datagen import SceneBundle, normalized_to_pixels

__all__ = [
    "save_patch_mosaic",
    "save_corner_overlay",
    "save_pose_plot",
    "save_view_grid",
]

FRAME_COLORS = ("tab:red", "tab:orange", "tab:green", "tab:blue", "tab:purple",
                "tab:brown", "tab:pink", "tab:olive", "tab:cyan", "tab:gray")


def save_patch_mosaic(path, bundle: SceneBundle, initial, final) -> None:
    """Rows: target patches, initial reconstructions, final reconstructions."""
    m = len(bundle.images)
    fig, axes = plt.subplots(3, m, figsize=(1.6 * m, 5.0))
    for i in range(m):
        for row, (img, label) in enumerate(
                [(bundle.images[i], "target"), (initial[i], "initial"),
                 (final[i], "optimized")]):
            ax = axes[row, i] if m > 1 else axes[row]
            ax.imshow(img.data)
            ax.set_xticks([])
            ax.set_yticks([])
            if i == 0:
                ax.set_ylabel(label)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def _corner_loop(points: np.ndarray) -> np.ndarray:
    return np.concatenate([points, points[:1]], axis=0)


def save_corner_overlay(path, bundle: SceneBundle, estimated) -> None:
    """Source image with ground-truth (solid) and estimated (dashed) patch
    outlines, one color per frame."""
    h, w = bundle.source.data.shape[:2]
    canonical = bundle.canonical_corners()
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.imshow(bundle.source.data)
    for i, transform in enumerate(estimated):
        color = FRAME_COLORS[i % len(FRAME_COLORS)]
        gt = _corner_loop(bundle.corners[i])
        ax.plot(gt[:, 0], gt[:, 1], "-", color=color, linewidth=1.6)
        est = lie.act(transform, Tensor(canonical)).numpy()
        est = _corner_loop(normalized_to_pixels(est, w, h))
        ax.plot(est[:, 0], est[:, 1], "--", color=color, linewidth=1.4)
    ax.set_xlim(0, w - 1)
    ax.set_ylim(h - 1, 0)
    ax.set_title("ground truth (solid) vs estimated (dashed)")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def _frustum_segments(matrix: np.ndarray, scale: float = 0.35) -> np.ndarray:
    """Line segments of a small camera pyramid in world coordinates."""
    tip = np.zeros(3)
    base = np.array([
        [-0.5, -0.4, 1.0], [0.5, -0.4, 1.0], [0.5, 0.4, 1.0], [-0.5, 0.4, 1.0],
    ]) * scale
    pts = np.concatenate([tip[None], base], axis=0)
    world = pts @ matrix[:3, :3].T + matrix[:3, 3]
    order = [0, 1, 2, 0, 3, 2, 0, 4, 3, 4, 1]
    return world[order]


def save_pose_plot(path, gt, initial, estimated) -> None:
    """3D view of camera frusta: ground truth, initial, and optimized."""
    fig = plt.figure(figsize=(7, 6))
    ax = fig.add_subplot(projection="3d")
    groups = [(gt, "black", "ground truth"), (initial, "tab:red", "initial"),
              (estimated, "tab:blue", "optimized")]
    for poses, color, label in groups:
        first = True
        for pose in poses:
            seg = _frustum_segments(pose.matrix.numpy())
            ax.plot(seg[:, 0], seg[:, 1], seg[:, 2], color=color,
                    linewidth=1.0, label=label if first else None)
            first = False
    ax.legend(loc="upper right")
    ax.set_box_aspect((1, 1, 0.7))
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_view_grid(path, targets, renders, depths) -> None:
    """Rows: target view, rendered view, expected-depth map."""
    m = len(targets)
    fig, axes = plt.subplots(3, m, figsize=(1.6 * m, 5.0))
    for i in range(m):
        rows = [(targets[i].data, "target"), (renders[i].data, "render")]
        depth = depths[i]
        lo, hi = depth.min(), depth.max()
        rows.append(((depth - lo) / (hi - lo) if hi > lo else depth * 0.0, "depth"))
        for row, (img, label) in enumerate(rows):
            ax = axes[row, i] if m > 1 else axes[row]
            if img.ndim == 2:
                ax.imshow(img, cmap="magma")
            else:
                ax.imshow(img)
            ax.set_xticks([])
            ax.set_yticks([])
            if i == 0:
                ax.set_ylabel(label)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
