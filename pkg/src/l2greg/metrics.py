"""Evaluation metrics and their on-disk report format.

Pose errors are gauge-free: a 7-DoF similarity (scale, rotation,
translation) is fitted between estimated and ground-truth camera centers
and applied to the estimates before per-camera errors are measured.
Translation errors are reported scaled by 100, matching the convention of
the tables this tooling prints.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from l2greg import lie
from l2greg.datagen import SceneBundle, normalized_to_pixels
from l2greg.rendering import ImageGrid

__all__ = [
    "MetricsReport",
    "corner_error",
    "pose_error",
    "psnr",
    "fit_similarity",
]

REPORT_HEADER = "l2greg-metrics 1"


def corner_error(estimated, bundle: SceneBundle) -> np.ndarray:
    """Mean L2 distance (source pixels) between ground-truth patch corners
    and the corners mapped by each estimated transform."""
    if bundle.corners is None:
        raise ValueError("bundle has no corner annotations (not a 2D task)")
    h, w = bundle.source.data.shape[:2]
    canonical = bundle.canonical_corners()
    errors = []
    for i, transform in enumerate(estimated):
        mapped = lie.act(transform, _tensor(canonical)).numpy()
        mapped_px = normalized_to_pixels(mapped, w, h)
        errors.append(
            float(np.mean(np.linalg.norm(mapped_px - bundle.corners[i], axis=1))))
    return np.asarray(errors)


def _tensor(arr):
    from l2greg.autodiff import Tensor
    return Tensor(arr)


def fit_similarity(source: np.ndarray, target: np.ndarray):
    """Least-squares similarity target ~ s R source + t (scale-extended
    orthogonal Procrustes)."""
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    n, d = source.shape
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    cs = source - mu_s
    ct = target - mu_t
    cov = ct.T @ cs / n
    u, s, vh = np.linalg.svd(cov)
    fix = np.ones(d)
    if np.linalg.det(u @ vh) < 0:
        fix[-1] = -1.0
    rot = u @ np.diag(fix) @ vh
    var_s = (cs ** 2).sum() / n
    scale = float((s * fix).sum() / var_s) if var_s > 0 else 1.0
    trans = mu_t - scale * rot @ mu_s
    return scale, rot, trans


def pose_error(estimated, gt) -> tuple[np.ndarray, np.ndarray]:
    """Rotation error (degrees) and translation error (x100) per camera,
    after aligning the estimated cameras to the ground truth with a global
    similarity."""
    if len(estimated) < 3:
        raise ValueError("pose error needs at least 3 poses for alignment")
    est_centers = np.stack([t.matrix.numpy()[:3, 3] for t in estimated])
    gt_centers = np.stack([t.matrix.numpy()[:3, 3] for t in gt])
    scale, rot_align, trans_align = fit_similarity(est_centers, gt_centers)

    rot_errors = []
    trans_errors = []
    for est, ref in zip(estimated, gt):
        m_est = est.matrix.numpy()
        m_gt = ref.matrix.numpy()
        center = scale * rot_align @ m_est[:3, 3] + trans_align
        trans_errors.append(float(np.linalg.norm(center - m_gt[:3, 3])) * 100.0)
        aligned = rot_align @ m_est[:3, :3]
        # geodesic angle via atan2 of the chordal norms: exact, and unlike
        # arccos of the trace it has no sqrt(eps) noise floor at 0
        diff = np.linalg.norm(aligned - m_gt[:3, :3])
        total = np.linalg.norm(aligned + m_gt[:3, :3])
        angle = 2.0 * np.arctan2(diff / (2.0 * np.sqrt(2.0)), total / 4.0)
        rot_errors.append(float(np.degrees(angle)))
    return np.asarray(rot_errors), np.asarray(trans_errors)


def psnr(rendered, target) -> float:
    """10 log10(1 / MSE) for unit-range images; +inf when identical."""
    a = rendered.data if isinstance(rendered, ImageGrid) else np.asarray(rendered)
    b = target.data if isinstance(target, ImageGrid) else np.asarray(target)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    """Per-run metrics; means are arithmetic means of the per-frame entries."""

    task: str
    mode: str
    config_hash: str = ""
    runtime_seconds: float = 0.0
    corner_errors: list = dc_field(default_factory=list)
    psnrs: list = dc_field(default_factory=list)
    rotation_errors: list = dc_field(default_factory=list)
    translation_errors: list = dc_field(default_factory=list)

    @property
    def mean_corner_error(self) -> float:
        return float(np.mean(self.corner_errors)) if self.corner_errors else float("nan")

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnrs)) if self.psnrs else float("nan")

    @property
    def mean_rotation_error(self) -> float:
        return float(np.mean(self.rotation_errors)) if self.rotation_errors else float("nan")

    @property
    def mean_translation_error(self) -> float:
        return (float(np.mean(self.translation_errors))
                if self.translation_errors else float("nan"))

    def to_text(self) -> str:
        lines = [REPORT_HEADER,
                 f"task {self.task}",
                 f"mode {self.mode}",
                 f"config_hash {self.config_hash or '-'}",
                 f"runtime_seconds {self.runtime_seconds!r}"]
        for name in ("corner_errors", "psnrs", "rotation_errors", "translation_errors"):
            values = getattr(self, name)
            if values:
                lines.append(f"{name} " + " ".join(repr(float(v)) for v in values))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        lines = [l for l in text.splitlines() if l.strip()]
        if not lines or lines[0] != REPORT_HEADER:
            raise ValueError(f"metrics report must start with '{REPORT_HEADER}'")
        report = cls(task="", mode="")
        for line in lines[1:]:
            key, _, rest = line.partition(" ")
            if key == "task":
                report.task = rest
            elif key == "mode":
                report.mode = rest
            elif key == "config_hash":
                report.config_hash = "" if rest == "-" else rest
            elif key == "runtime_seconds":
                report.runtime_seconds = float(rest)
            elif key in ("corner_errors", "psnrs", "rotation_errors",
                         "translation_errors"):
                setattr(report, key, [float(v) for v in rest.split()])
            else:
                raise ValueError(f"unknown metrics key '{key}'")
        return report

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "MetricsReport":
        return cls.from_text(Path(path).read_text())
