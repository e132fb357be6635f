"""Imaging: bilinear image sampling, volume compositing, ray rendering.

Conventions:
  * images are (H, W, 3) float64 arrays with values in [0, 1]; the point
    (x, y) = (0, 0) is the center of the top-left texel, x runs along
    columns and y along rows;
  * cameras look down +z; a pixel (u, v) back-projects to the direction
    ((u - cx)/fx, (v - cy)/fy, 1), so "depth" is the z coordinate;
  * densities are softplus-activated, colors sigmoid-activated, and rays
    composite over a black background.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from l2greg import autodiff as ad
from l2greg.autodiff import Tensor, constant
from l2greg.lie import LieTransform

__all__ = [
    "ImageGrid",
    "CameraIntrinsics",
    "sample_image",
    "composite",
    "sample_depths",
    "render_rays",
    "render_image",
    "read_png",
    "write_png",
    "write_depth",
]


@dataclass
class ImageGrid:
    """RGB raster with unit-range values."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError(f"expected an (H, W, 3) image, got {self.data.shape}")
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")


def _image_array(img) -> np.ndarray:
    return img.data if isinstance(img, ImageGrid) else np.asarray(img, dtype=np.float64)


def sample_image(img, points: Tensor) -> Tensor:
    """Bilinear lookup of (x, y) points; out-of-bounds coordinates clamp to
    the edge (the clamped region contributes zero gradient)."""
    data = _image_array(img)
    h, w = data.shape[:2]
    points = constant(points)
    x = points[..., 0]
    y = points[..., 1]

    xc = ad.where(x.numpy() < 0.0, Tensor(np.zeros(x.shape)), x)
    xc = ad.where(xc.numpy() > w - 1.0, Tensor(np.full(x.shape, w - 1.0)), xc)
    yc = ad.where(y.numpy() < 0.0, Tensor(np.zeros(y.shape)), y)
    yc = ad.where(yc.numpy() > h - 1.0, Tensor(np.full(y.shape, h - 1.0)), yc)

    x0 = np.clip(np.floor(xc.numpy()), 0, w - 2).astype(np.intp)
    y0 = np.clip(np.floor(yc.numpy()), 0, h - 2).astype(np.intp)
    fx = (xc - Tensor(x0.astype(np.float64)))[..., None]
    fy = (yc - Tensor(y0.astype(np.float64)))[..., None]

    c00 = Tensor(data[y0, x0])
    c10 = Tensor(data[y0, x0 + 1])
    c01 = Tensor(data[y0 + 1, x0])
    c11 = Tensor(data[y0 + 1, x0 + 1])

    top = c00 + (c10 - c00) * fx
    bottom = c01 + (c11 - c01) * fx
    return top + (bottom - top) * fy


def composite(densities: Tensor, colors: Tensor, depths: Tensor,
              z_far: float) -> tuple[Tensor, Tensor, Tensor]:
    """Quadrature compositing along each ray.

    densities (..., K) must already be activated (non-negative), colors
    (..., K, 3) in [0, 1], depths (..., K) strictly increasing. Returns
    (rgb (..., 3), expected_depth (...,), weights (..., K)); the expected
    depth's denominator is guarded for display purposes only.
    """
    densities = constant(densities)
    colors = constant(colors)
    depths = constant(depths)
    z = depths.numpy()
    if np.any(np.diff(z, axis=-1) <= 0):
        raise ValueError("depth samples must be strictly increasing along each ray")

    deltas = np.concatenate(
        [np.diff(z, axis=-1), np.maximum(z_far - z[..., -1:], 0.0)], axis=-1)
    tau = densities * Tensor(deltas)
    accumulated = ad.cumsum(tau, axis=-1)
    trans = ad.exp(-(accumulated - tau))  # exclusive prefix: T_k
    weights = trans * (1.0 - ad.exp(-tau))

    rgb = (weights[..., None] * colors).sum(axis=-2)
    acc = weights.sum(axis=-1)
    denom = ad.where(acc.numpy() < 1e-10, Tensor(np.full(acc.shape, 1e-10)), acc)
    expected_depth = (weights * depths).sum(axis=-1) / denom
    return rgb, expected_depth, weights


def sample_depths(n_rays: int, k: int, z_near: float, z_far: float,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """K stratified depths per ray: one uniform jitter per bin when `rng` is
    given (training), bin centers otherwise (deterministic evaluation)."""
    if z_near >= z_far:
        raise ValueError("z_near must be below z_far")
    edges = np.linspace(z_near, z_far, k + 1)
    lower = edges[:-1]
    width = edges[1] - edges[0]
    if rng is None:
        offsets = np.full((n_rays, k), 0.5)
    else:
        offsets = rng.uniform(0.0, 1.0, (n_rays, k))
    return lower[None, :] + offsets * width


def pixel_directions(pixels: np.ndarray, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Camera-space ray directions (unit z) for (u, v) pixel coordinates."""
    pixels = np.asarray(pixels, dtype=np.float64)
    dirs = np.empty(pixels.shape[:-1] + (3,))
    dirs[..., 0] = (pixels[..., 0] - intrinsics.cx) / intrinsics.fx
    dirs[..., 1] = (pixels[..., 1] - intrinsics.cy) / intrinsics.fy
    dirs[..., 2] = 1.0
    return dirs


def camera_points(pixels: np.ndarray, depths: np.ndarray,
                  intrinsics: CameraIntrinsics) -> np.ndarray:
    """Camera-space sample points: depth * direction, shape (B, K, 3)."""
    dirs = pixel_directions(pixels, intrinsics)
    return depths[..., None] * dirs[..., None, :]


def transform_points(pose: LieTransform, points: Tensor) -> Tensor:
    """Apply (batched) rigid camera-to-world transforms to (..., K, 3) points."""
    m = pose.matrix
    rot = m[..., :3, :3]
    trans = m[..., :3, 3]
    points = constant(points)
    return points @ ad.swapaxes(rot, -1, -2) + trans[..., None, :]


def render_rays(field_fn, pose: LieTransform, pixels: np.ndarray,
                intrinsics: CameraIntrinsics, depths: np.ndarray,
                z_far: float, field_outputs: str = "raw"):
    """Render a batch of rays through a color+density field.

    `field_fn` maps (P, 3) world points to (P, 4) values, color first.
    With field_outputs="raw" a sigmoid is applied to color and a softplus
    to density; "activated" uses the values as-is. The pose may be a single
    transform or one per ray; gradients flow into the pose matrices and the
    field parameters.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    b, k = depths.shape
    cam_pts = camera_points(pixels, depths, intrinsics)
    world = transform_points(pose, Tensor(cam_pts))
    raw = field_fn(world.reshape((b * k, 3)))
    if field_outputs == "raw":
        rgb_samples = ad.sigmoid(raw[:, 0:3])
        sigma = ad.softplus(raw[:, 3])
    elif field_outputs == "activated":
        rgb_samples = raw[:, 0:3]
        sigma = raw[:, 3]
    else:
        raise ValueError(f"unknown field_outputs mode '{field_outputs}'")
    rgb, depth, weights = composite(
        sigma.reshape((b, k)), rgb_samples.reshape((b, k, 3)),
        Tensor(depths), z_far)
    return rgb, depth, weights, world


def render_image(field_fn, pose: LieTransform, intrinsics: CameraIntrinsics,
                 height: int, width: int, k: int, z_near: float, z_far: float,
                 field_outputs: str = "raw", chunk: int = 4096):
    """Full-frame deterministic render (bin-center depths, no jitter)."""
    us, vs = np.meshgrid(np.arange(width), np.arange(height))
    pixels = np.stack([us.ravel(), vs.ravel()], axis=1).astype(np.float64)
    rgb_rows = []
    depth_rows = []
    for start in range(0, pixels.shape[0], chunk):
        batch = pixels[start:start + chunk]
        depths = sample_depths(batch.shape[0], k, z_near, z_far, rng=None)
        rgb, depth, _, _ = render_rays(
            field_fn, pose, batch, intrinsics, depths, z_far, field_outputs)
        rgb_rows.append(rgb.numpy())
        depth_rows.append(depth.numpy())
    rgb = np.concatenate(rgb_rows).reshape(height, width, 3)
    depth = np.concatenate(depth_rows).reshape(height, width)
    return ImageGrid(np.clip(rgb, 0.0, 1.0)), depth


# ---------------------------------------------------------------------------
# PNG / depth IO
# ---------------------------------------------------------------------------

def write_png(path, img) -> None:
    data = _image_array(img)
    quantized = np.rint(np.clip(data, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(quantized, mode="RGB").save(path, format="PNG")


def read_png(path) -> ImageGrid:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return ImageGrid(arr)


def write_depth(path_png, depth: np.ndarray) -> None:
    """Min-max normalized PNG for display plus a raw float64 .npy sidecar."""
    depth = np.asarray(depth, dtype=np.float64)
    lo, hi = float(depth.min()), float(depth.max())
    scaled = (depth - lo) / (hi - lo) if hi > lo else np.zeros_like(depth)
    gray = np.rint(scaled * 255.0).astype(np.uint8)
    Image.fromarray(gray, mode="L").save(path_png, format="PNG")
    sidecar = str(path_png)
    sidecar = sidecar[:-4] + ".npy" if sidecar.endswith(".png") else sidecar + ".npy"
    np.save(sidecar, depth)
