"""Experiment data: perturbed image patches and a synthetic 3D scene.

2D geometry lives in a normalized source frame: the source image spans
[-1, 1] on each axis and the canonical patch is the centered square of
half-extent `patch_extent`. Ground-truth transforms map canonical patch
coordinates into the source frame; corner positions are reported in source
pixels. Frame 0 is always the unperturbed crop (anchoring).

The 3D scene is a handful of colored opaque spheres in the unit box,
viewed from a camera ring; ground-truth images are rendered analytically
and initial poses come from right-multiplicative pose noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from l2greg import lie, rendering, solvers
from l2greg.autodiff import Tensor
from l2greg.rendering import CameraIntrinsics, ImageGrid

__all__ = [
    "SceneBundle",
    "PerturbationSpec",
    "make_test_image",
    "gen_patches",
    "gen_toy_scene",
    "perturb_poses",
    "ring_poses",
    "sphere_scene_field",
    "save_bundle",
    "load_bundle",
]

BUNDLE_HEADER = "l2greg-bundle 1"


@dataclass
class PerturbationSpec:
    """Right-multiplicative pose noise: rotation/translation stds per axis."""

    noise_rotation: float
    noise_translation: float


@dataclass
class SceneBundle:
    """Everything one experiment consumes: frames, transforms, calibration."""

    task: str
    images: list                      # M ImageGrids
    gt_transforms: list               # M LieTransforms
    init_transforms: list             # M LieTransforms
    corners: np.ndarray | None = None     # (M, 4, 2) GT corners, source pixels (2D)
    source: ImageGrid | None = None        # 2D only
    patch_extent: float | None = None      # canonical patch half-extent (2D)
    intrinsics: CameraIntrinsics | None = None  # 3D only
    z_near: float | None = None
    z_far: float | None = None

    def patch_grid(self) -> np.ndarray:
        """Canonical patch coordinates, shape (P, P, 2); row -> y, column -> x."""
        p = self.images[0].data.shape[0]
        s = self.patch_extent
        axis = np.linspace(-s, s, p)
        xs, ys = np.meshgrid(axis, axis)
        return np.stack([xs, ys], axis=-1)

    def canonical_corners(self) -> np.ndarray:
        s = self.patch_extent
        return np.array([[-s, -s], [s, -s], [s, s], [-s, s]])


def normalized_to_pixels(points: np.ndarray, width: int, height: int) -> np.ndarray:
    """Map [-1, 1] source coordinates to pixel coordinates (texel centers)."""
    points = np.asarray(points, dtype=np.float64)
    out = np.empty_like(points)
    out[..., 0] = (points[..., 0] + 1.0) / 2.0 * (width - 1)
    out[..., 1] = (points[..., 1] + 1.0) / 2.0 * (height - 1)
    return out


# ---------------------------------------------------------------------------
# procedural test image
# ---------------------------------------------------------------------------

def make_test_image(size: int = 256, seed: int = 0) -> ImageGrid:
    """Multi-scale color pattern: random plane waves with a gently falling
    amplitude spectrum, squashed through a sigmoid. Low frequencies give
    coarse-to-fine alignment something to latch onto; the dense mid/high
    bands (periods down to a few pixels) keep direct photometric descent
    from sliding into the basin by accident."""
    rng = np.random.default_rng(seed)
    axis = np.linspace(-1.0, 1.0, size)
    xs, ys = np.meshgrid(axis, axis)
    channels = np.zeros((3, size, size))
    n_waves = 128
    for _ in range(n_waves):
        freq = 2.0 ** rng.uniform(0.0, 5.5)
        angle = rng.uniform(0.0, 2.0 * np.pi)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        wave = np.sin(freq * np.pi * (np.cos(angle) * xs + np.sin(angle) * ys) + phase)
        mix = rng.normal(0.0, 1.0, 3) / freq ** 0.25
        channels += mix[:, None, None] * wave[None]
    img = 1.0 / (1.0 + np.exp(-0.8 * channels))
    return ImageGrid(np.moveaxis(img, 0, -1))


# ---------------------------------------------------------------------------
# 2D patch bundles
# ---------------------------------------------------------------------------

def _sample_rigid_2d(rng, magnitude: float, patch_extent: float) -> lie.LieTransform:
    rot = rng.normal(0.0, 0.26 * magnitude)
    trans = rng.normal(0.0, 0.2 * (2.0 * patch_extent) * magnitude, 2)
    return lie.exp(lie.AlgebraCoords("se2", Tensor([rot, trans[0], trans[1]])))


def _sample_homography_2d(rng, magnitude: float, patch_extent: float,
                          corners: np.ndarray) -> lie.LieTransform:
    jitter = rng.normal(0.0, 0.15 * (2.0 * patch_extent) * magnitude, (4, 2))
    return solvers.solve_homography(solvers.CorrespondenceSet(
        Tensor(corners), Tensor(corners + jitter)))


def gen_patches(source: ImageGrid, num_frames: int, kind: str, magnitude: float,
                seed: int, patch_size: int = 64,
                patch_extent: float = 0.38, max_tries: int = 100) -> SceneBundle:
    """Crop `num_frames` perturbed patches out of a source image.

    kind is "rigid" (SE2 perturbations) or "homography" (corner jitter
    fitted exactly by the DLT solver). Each perturbation is resampled until
    the mapped patch fits inside the source; frame 0 is the identity crop.
    """
    if kind not in ("rigid", "homography"):
        raise ValueError(f"unknown perturbation kind '{kind}'")
    rng = np.random.default_rng(seed)
    h, w = source.data.shape[:2]
    task = "image_rigid" if kind == "rigid" else "image_homography"
    corners = np.array([[-patch_extent, -patch_extent], [patch_extent, -patch_extent],
                        [patch_extent, patch_extent], [-patch_extent, patch_extent]])
    axis = np.linspace(-patch_extent, patch_extent, patch_size)
    xs, ys = np.meshgrid(axis, axis)
    grid = np.stack([xs, ys], axis=-1).reshape(-1, 2)

    identity_kind = "SE2" if kind == "rigid" else "SL3"
    transforms = []
    images = []
    corner_list = []
    for i in range(num_frames):
        if i == 0:
            transform = lie.identity(identity_kind)
            mapped_corners = corners
        else:
            for attempt in range(max_tries):
                if kind == "rigid":
                    transform = _sample_rigid_2d(rng, magnitude, patch_extent)
                else:
                    transform = _sample_homography_2d(rng, magnitude, patch_extent, corners)
                mapped_corners = lie.act(transform, Tensor(corners)).numpy()
                if np.max(np.abs(mapped_corners)) < 0.98:
                    break
            else:
                raise ValueError(
                    "perturbation magnitude too large for source: no in-bounds "
                    f"placement after {max_tries} tries (frame {i})")
        mapped_grid = lie.act(transform, Tensor(grid)).numpy()
        pixels = normalized_to_pixels(mapped_grid, w, h)
        colors = rendering.sample_image(source, Tensor(pixels)).numpy()
        images.append(ImageGrid(
            np.clip(colors, 0.0, 1.0).reshape(patch_size, patch_size, 3)))
        transforms.append(transform)
        corner_list.append(normalized_to_pixels(mapped_corners, w, h))

    init = [lie.identity(identity_kind) for _ in range(num_frames)]
    return SceneBundle(
        task=task, images=images, gt_transforms=transforms, init_transforms=init,
        corners=np.stack(corner_list), source=source, patch_extent=patch_extent)


# ---------------------------------------------------------------------------
# 3D toy scene
# ---------------------------------------------------------------------------

SPHERES = (
    # center, radius, color
    ((0.45, 0.0, 0.1), 0.42, (0.85, 0.15, 0.10)),
    ((-0.40, 0.35, -0.10), 0.35, (0.10, 0.75, 0.20)),
    ((-0.10, -0.50, 0.25), 0.30, (0.15, 0.25, 0.85)),
    ((0.00, 0.15, 0.55), 0.25, (0.90, 0.85, 0.10)),
)


def sphere_scene_field(points) -> Tensor:
    """Activated color+density of the analytic sphere arrangement."""
    p = points.numpy() if isinstance(points, Tensor) else np.asarray(points)
    sigma = np.zeros(p.shape[:-1])
    rgb_acc = np.zeros(p.shape[:-1] + (3,))
    for center, radius, color in SPHERES:
        dist = np.linalg.norm(p - np.asarray(center), axis=-1)
        contribution = 45.0 / (1.0 + np.exp(60.0 * (dist - radius)))
        sigma += contribution
        rgb_acc += contribution[..., None] * np.asarray(color)
    rgb = rgb_acc / np.maximum(sigma, 1e-12)[..., None]
    rgb = np.clip(rgb, 0.0, 1.0)
    return Tensor(np.concatenate([rgb, sigma[..., None]], axis=-1))


def _look_at(center: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Camera-to-world matrix: +z forward toward target, image up = world +z."""
    forward = target - center
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, np.array([0.0, 0.0, 1.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    m = np.eye(4)
    m[:3, 0] = right
    m[:3, 1] = down
    m[:3, 2] = forward
    m[:3, 3] = center
    return m


def ring_poses(num_frames: int, radius: float = 4.0, height: float = 1.1) -> list:
    """Cameras on a ring, all facing the origin."""
    poses = []
    for i in range(num_frames):
        angle = 2.0 * np.pi * i / num_frames
        center = np.array([radius * np.cos(angle), radius * np.sin(angle), height])
        poses.append(lie.LieTransform("SE3", Tensor(_look_at(center, np.zeros(3)))))
    return poses


def perturb_poses(gt_poses, spec: PerturbationSpec, seed: int) -> list:
    """T_init = T_gt * P with P = [exp(r) | t], r ~ N(0, n_r I), t ~ N(0, n_t I).

    Right multiplication moves each camera around itself, perturbing both
    the viewing direction and the distance to the scene; deterministic for
    a fixed seed.
    """
    rng = np.random.default_rng(seed)
    out = []
    for pose in gt_poses:
        r = rng.normal(0.0, spec.noise_rotation, 3)
        t = rng.normal(0.0, spec.noise_translation, 3)
        rot = lie.exp(lie.AlgebraCoords(
            "se3", Tensor(np.concatenate([r, np.zeros(3)]))))
        noise = rot.matrix.numpy().copy()
        noise[:3, 3] = t
        out.append(lie.LieTransform("SE3", Tensor(pose.matrix.numpy() @ noise)))
    return out


def gen_toy_scene(num_frames: int, resolution: int, spec: PerturbationSpec,
                  seed: int, samples_per_ray: int = 64) -> SceneBundle:
    """Render the analytic sphere scene from a camera ring and perturb poses."""
    intrinsics = CameraIntrinsics(
        fx=1.2 * resolution, fy=1.2 * resolution,
        cx=(resolution - 1) / 2.0, cy=(resolution - 1) / 2.0)
    z_near, z_far = 2.0, 6.5
    gt_poses = ring_poses(num_frames)
    images = []
    for pose in gt_poses:
        img, _ = rendering.render_image(
            sphere_scene_field, pose, intrinsics, resolution, resolution,
            samples_per_ray, z_near, z_far, field_outputs="activated")
        images.append(img)
    init = perturb_poses(gt_poses, spec, seed)
    return SceneBundle(
        task="nerf_synthetic", images=images, gt_transforms=gt_poses,
        init_transforms=init, intrinsics=intrinsics, z_near=z_near, z_far=z_far)


# ---------------------------------------------------------------------------
# bundle (de)serialization: PNG frames + a structured text file
# ---------------------------------------------------------------------------

def _format_matrix(m: np.ndarray) -> list[str]:
    return [" ".join(repr(float(x)) for x in row) for row in m]


def save_bundle(directory, bundle: SceneBundle) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(bundle.images):
        rendering.write_png(directory / f"frame_{i:03d}.png", img)
    if bundle.source is not None:
        rendering.write_png(directory / "source.png", bundle.source)

    kind = bundle.gt_transforms[0].kind
    lines = [BUNDLE_HEADER, f"task {bundle.task}",
             f"frames {len(bundle.images)}", f"kind {kind}"]
    if bundle.patch_extent is not None:
        lines.append(f"patch_extent {bundle.patch_extent!r}")
    if bundle.intrinsics is not None:
        intr = bundle.intrinsics
        lines.append(f"intrinsics {intr.fx!r} {intr.fy!r} {intr.cx!r} {intr.cy!r}")
    if bundle.z_near is not None:
        lines.append(f"depth_range {bundle.z_near!r} {bundle.z_far!r}")
    for i, t in enumerate(bundle.gt_transforms):
        lines.append(f"gt {i}")
        lines.extend(_format_matrix(t.matrix.numpy()))
    for i, t in enumerate(bundle.init_transforms):
        lines.append(f"init {i}")
        lines.extend(_format_matrix(t.matrix.numpy()))
    if bundle.corners is not None:
        for i in range(bundle.corners.shape[0]):
            lines.append(f"corners {i}")
            lines.extend(_format_matrix(bundle.corners[i]))
    (directory / "bundle.txt").write_text("\n".join(lines) + "\n")


def load_bundle(directory) -> SceneBundle:
    directory = Path(directory)
    text = (directory / "bundle.txt").read_text().splitlines()
    if not text or text[0] != BUNDLE_HEADER:
        raise ValueError(f"{directory}/bundle.txt: missing '{BUNDLE_HEADER}' header")

    task = None
    frames = None
    kind = None
    patch_extent = None
    intrinsics = None
    z_near = z_far = None
    blocks: dict[tuple[str, int], list[list[float]]] = {}
    current = None
    for line in text[1:]:
        if not line.strip():
            continue
        parts = line.split()
        if parts[0] == "task":
            task = parts[1]
        elif parts[0] == "frames":
            frames = int(parts[1])
        elif parts[0] == "kind":
            kind = parts[1]
        elif parts[0] == "patch_extent":
            patch_extent = float(parts[1])
        elif parts[0] == "intrinsics":
            intrinsics = CameraIntrinsics(*[float(v) for v in parts[1:5]])
        elif parts[0] == "depth_range":
            z_near, z_far = float(parts[1]), float(parts[2])
        elif parts[0] in ("gt", "init", "corners"):
            current = (parts[0], int(parts[1]))
            blocks[current] = []
        else:
            blocks[current].append([float(v) for v in parts])

    if task is None or frames is None or kind is None:
        raise ValueError(f"{directory}/bundle.txt: incomplete header")

    images = [rendering.read_png(directory / f"frame_{i:03d}.png")
              for i in range(frames)]
    source = None
    if (directory / "source.png").exists():
        source = rendering.read_png(directory / "source.png")

    def to_transforms(tag):
        return [lie.LieTransform(kind, Tensor(np.asarray(blocks[(tag, i)])))
                for i in range(frames)]

    corners = None
    if ("corners", 0) in blocks:
        corners = np.stack(
            [np.asarray(blocks[("corners", i)]) for i in range(frames)])

    return SceneBundle(
        task=task, images=images, gt_transforms=to_transforms("gt"),
        init_transforms=to_transforms("init"), corners=corners, source=source,
        patch_extent=patch_extent, intrinsics=intrinsics,
        z_near=z_near, z_far=z_far)
