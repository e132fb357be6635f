"""Objective assembly and the training loop.

Three families of run modes share one loop:

  * ``naive``        one transform per frame, optimized directly, full
                     positional encoding from the start;
  * ``global_c2f``   same parametrization with coarse-to-fine annealing;
  * ``l2g``          per-pixel warp field; a closed-form solver recovers a
                     per-frame consensus transform every iteration and the
                     objective adds a weighted pull toward it.
                     ``l2g_detached`` keeps the solver out of the gradient
                     path (ablation of the solver's backward contribution).

Frame 0 is hard-anchored: its warp (or pose correction) is forced to the
identity, which pins the gauge of the joint reconstruction/registration
problem.

Everything is deterministic given the config: one RNG drives batch
selection and depth jitter, reductions are fixed-order, and checkpoints
carry optimizer state plus the RNG state so runs resume bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, asdict, field as dc_field
from pathlib import Path

import numpy as np
import yaml

from l2greg import autodiff as ad
from l2greg import fields, lie, rendering, solvers
from l2greg.autodiff import Tape, Tensor
from l2greg.datagen import (PerturbationSpec, SceneBundle, load_bundle,
                            perturb_poses)
from l2greg.solvers import CorrespondenceSet

__all__ = [
    "ExperimentConfig",
    "PerturbationSpec",
    "LossBreakdown",
    "TrainingDiverged",
    "TrainedState",
    "perturb_poses",
    "train",
    "testtime_pose_opt",
    "load_config",
    "save_config",
    "load_state",
    "estimate_frame_transforms",
]

MODES = ("naive", "global_c2f", "l2g", "l2g_detached")
TASKS = ("image_rigid", "image_homography", "nerf_synthetic")


@dataclass
class ExperimentConfig:
    """Full declarative description of one run; see config.yaml schema in README."""

    mode: str = "l2g"
    task: str = "image_rigid"
    data_dir: str = ""
    output_dir: str = ""
    lambda_global: float = 100.0          # weight of the consensus term ("lambda")
    iterations: int = 5000
    seed: int = 0
    batch_size: int = 128                 # pixels/rays per frame per iteration
    lr_field_start: float = 2e-3
    lr_field_end: float = 2e-4
    lr_warp_start: float = 2e-3
    lr_warp_end: float = 1e-5
    anneal_fraction: float = 0.5          # alpha ramps to L over this run fraction
    field_hidden: int = 256
    field_depth: int = 8
    field_frequencies: int = 8
    warp_hidden: int = 256
    warp_depth: int = 6
    embed_dim: int = 128
    solver_points: int = 1024             # correspondence subset per frame
    samples_per_ray: int = 64             # K (3D)
    noise_rotation: float = 0.0           # n_r (3D data generation bookkeeping)
    noise_translation: float = 0.0        # n_t
    magnitude: float = 1.0                # 2D perturbation scale bookkeeping
    log_every: int = 1
    checkpoint_every: int = 0             # 0: only final

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode '{self.mode}' (expected one of {MODES})")
        if self.task not in TASKS:
            raise ValueError(f"unknown task '{self.task}' (expected one of {TASKS})")
        if self.lambda_global < 0:
            raise ValueError("lambda must be non-negative")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        for name in ("lr_field_start", "lr_field_end", "lr_warp_start", "lr_warp_end"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def algebra_kind(self) -> str:
        return {"image_rigid": "se2", "image_homography": "sl3",
                "nerf_synthetic": "se3"}[self.task]

    @property
    def uses_warp_field(self) -> bool:
        return self.mode in ("l2g", "l2g_detached")


_CONFIG_KEY_MAP = {"lambda": "lambda_global"}
_CONFIG_KEY_UNMAP = {v: k for k, v in _CONFIG_KEY_MAP.items()}


def save_config(path, config: ExperimentConfig) -> None:
    data = {}
    for key, value in asdict(config).items():
        data[_CONFIG_KEY_UNMAP.get(key, key)] = value
    with open(path, "w") as fh:
        yaml.safe_dump(data, fh, sort_keys=True)


def config_hash(config: ExperimentConfig) -> str:
    payload = json.dumps(asdict(config), sort_keys=True).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()[:12]


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"config file {path} must contain a mapping")
    known = set(ExperimentConfig.__dataclass_fields__)
    kwargs = {}
    for key, value in raw.items():
        attr = _CONFIG_KEY_MAP.get(key, key)
        if attr not in known:
            raise ValueError(f"unknown config key '{key}' in {path}")
        kwargs[attr] = value
    return ExperimentConfig(**kwargs)


@dataclass
class LossBreakdown:
    photometric: float
    global_alignment: float
    total: float

    def __post_init__(self):
        for value in (self.photometric, self.global_alignment, self.total):
            if not np.isfinite(value):
                raise TrainingDiverged(-1, self)


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, breakdown):
        self.iteration = iteration
        self.breakdown = breakdown
        super().__init__(
            f"non-finite loss at iteration {iteration}: {breakdown}")


# ---------------------------------------------------------------------------
# optimizer and schedules
# ---------------------------------------------------------------------------

class Adam:
    """Adam with bias correction; state arrays are checkpointable."""

    def __init__(self, params: list[Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray], lrs: list[float]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v, lr in zip(self.params, grads, self.m, self.v, lrs):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"adam.t": np.array(float(self.t))}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"adam.m{i}"] = m
            out[f"adam.v{i}"] = v
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays["adam.t"])
        for i in range(len(self.params)):
            self.m[i] = arrays[f"adam.m{i}"].copy()
            self.v[i] = arrays[f"adam.v{i}"].copy()


def exponential_lr(start: float, end: float, iteration: int, total: int) -> float:
    if total <= 1:
        return start
    frac = iteration / (total - 1)
    return start * (end / start) ** frac


def anneal_alpha(num_frequencies: int, iteration: int, total: int,
                 fraction: float) -> float:
    if fraction <= 0 or total <= 0:
        return float(num_frequencies)
    ramp = min(1.0, iteration / (fraction * total))
    return float(num_frequencies) * ramp


# ---------------------------------------------------------------------------
# trained state
# ---------------------------------------------------------------------------

@dataclass
class TrainedState:
    config: ExperimentConfig
    bundle: SceneBundle
    field: fields.NeuralField
    warp: fields.WarpField | None
    pose_params: Tensor | None
    optimizer: Adam
    rng: np.random.Generator
    iteration: int = 0
    runtime_seconds: float = 0.0
    last_log: tuple = (0.0, 0.0, 0.0)

    @property
    def num_frames(self) -> int:
        return len(self.bundle.images)

    def field_parameters(self) -> list[Tensor]:
        return fields.parameters(self.field)

    def warp_parameters(self) -> list[Tensor]:
        if self.warp is not None:
            return fields.parameters(self.warp)
        return [self.pose_params]


def _init_state(config: ExperimentConfig, bundle: SceneBundle) -> TrainedState:
    rng = np.random.default_rng(config.seed)
    m = len(bundle.images)
    kind = config.algebra_kind

    if config.task == "nerf_synthetic":
        field = fields.make_volume_field(
            seed=config.seed + 1, hidden=config.field_hidden,
            depth=config.field_depth, num_frequencies=config.field_frequencies)
        h, w = bundle.images[0].data.shape[:2]
        offset = ((w - 1) / 2.0, (h - 1) / 2.0)
        scale = ((w - 1) / 2.0, (h - 1) / 2.0)
    else:
        field = fields.make_image_field(
            seed=config.seed + 1, hidden=config.field_hidden,
            depth=config.field_depth, num_frequencies=config.field_frequencies)
        offset = (0.0, 0.0)
        scale = (bundle.patch_extent, bundle.patch_extent)

    warp = None
    pose_params = None
    if config.uses_warp_field:
        warp = fields.make_warp_field(
            m, kind, seed=config.seed + 2, hidden=config.warp_hidden,
            depth=config.warp_depth, embed_dim=config.embed_dim,
            input_offset=offset, input_scale=scale)
    else:
        pose_params = Tensor(np.zeros((m, lie.ALGEBRA_DIM[kind])), requires_grad=True)

    params = fields.parameters(field) + (
        fields.parameters(warp) if warp is not None else [pose_params])
    return TrainedState(config, bundle, field, warp, pose_params, Adam(params), rng)


def _anchor_mask(num_frames: int) -> np.ndarray:
    mask = np.ones((num_frames, 1))
    mask[0, 0] = 0.0
    return mask


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------

def _global_alignment_term(kind: str, source_pts: Tensor, warped: Tensor,
                           frame_slices, solver_subset, detach: bool):
    """Mean squared gap between warped points and the per-frame consensus
    transform recovered by the closed-form solver."""
    solve = solvers.solve_homography if kind == "sl3" else solvers.solve_rigid
    total = None
    count = 0
    consensus_transforms = []
    for i, rows in enumerate(frame_slices):
        src = source_pts[rows]
        tgt = warped[rows]
        if solver_subset is not None and solver_subset[i] is not None:
            src = src[solver_subset[i]]
            tgt = tgt[solver_subset[i]]
        try:
            fit = solve(CorrespondenceSet(src.detach(), tgt))
        except solvers.DegenerateError as err:
            raise solvers.DegenerateError(f"frame {i}: {err}") from err
        consensus_transforms.append(fit)
        if detach:
            fit = lie.LieTransform(fit.kind, fit.matrix.detach())
        residual = tgt - lie.act(fit, src.detach())
        term = ad.sumsq(residual)
        total = term if total is None else total + term
        count += src.shape[0]
    return total * (1.0 / count), consensus_transforms


def loss_l2g(state: TrainedState, batch: dict, alpha: float,
             detach_global: bool | None = None) -> tuple[Tensor, LossBreakdown, list]:
    """Photometric term plus weighted consensus term (warp-field modes)."""
    config = state.config
    state.field.encoding.alpha = alpha
    detach = config.mode == "l2g_detached" if detach_global is None else detach_global

    if config.task == "nerf_synthetic":
        rgb, world, cam_pts = _render_batch_warp(state, batch)
        photo = ad.sumsq(rgb - Tensor(batch["targets"])) * (1.0 / batch["count"])
        b, k = batch["depths"].shape
        src = Tensor(cam_pts.reshape(b * k, 3))
        warped_flat = world.reshape((b * k, 3))
        rows_per_frame = batch["rays_per_frame"] * k
        frame_slices = [slice(i * rows_per_frame, (i + 1) * rows_per_frame)
                        for i in range(state.num_frames)]
        subset = batch.get("solver_subset")
        gterm, consensus = _global_alignment_term(
            "se3", src, warped_flat, frame_slices, subset, detach)
    else:
        pixels = Tensor(batch["coords"])
        transforms = fields.eval_warp(
            state.warp, pixels, batch["frames"], anchor_frame=0)
        warped = lie.act(transforms, pixels)
        rgb = fields.eval_field(state.field, warped)
        photo = ad.sumsq(rgb - Tensor(batch["targets"])) * (1.0 / batch["count"])
        per_frame = batch["pixels_per_frame"]
        frame_slices = [slice(i * per_frame, (i + 1) * per_frame)
                        for i in range(state.num_frames)]
        gterm, consensus = _global_alignment_term(
            config.algebra_kind, pixels, warped, frame_slices,
            batch.get("solver_subset"), detach)

    lam = config.lambda_global
    if lam > 0.0:
        total = photo + lam * gterm
    else:
        total = photo  # keep the zero-weight graph identical to the ablation
    breakdown = LossBreakdown(photo.item(), gterm.item(), total.item())
    return total, breakdown, consensus


def loss_global(state: TrainedState, batch: dict, alpha: float) -> tuple[Tensor, LossBreakdown]:
    """Photometric-only objective over per-frame transforms (naive / global_c2f)."""
    config = state.config
    state.field.encoding.alpha = alpha
    mask = Tensor(_anchor_mask(state.num_frames))
    coords = state.pose_params * mask

    if config.task == "nerf_synthetic":
        corrections = lie.exp(lie.AlgebraCoords("se3", coords))
        per_ray = corrections.matrix[batch["frames"]]
        init = Tensor(batch["init_matrices"][batch["frames"]])
        pose = lie.LieTransform("SE3", init @ per_ray)
        rgb, _, _, _ = rendering.render_rays(
            lambda pts: fields.eval_field(state.field, pts), pose,
            batch["pixels"], state.bundle.intrinsics, batch["depths"],
            state.bundle.z_far)
    else:
        transforms = lie.exp(lie.AlgebraCoords(config.algebra_kind, coords))
        per_pixel = lie.LieTransform(
            transforms.kind, transforms.matrix[batch["frames"]])
        warped = lie.act(per_pixel, Tensor(batch["coords"]))
        rgb = fields.eval_field(state.field, warped)

    photo = ad.sumsq(rgb - Tensor(batch["targets"])) * (1.0 / batch["count"])
    breakdown = LossBreakdown(photo.item(), 0.0, photo.item())
    return photo, breakdown


def _render_batch_warp(state: TrainedState, batch: dict):
    """Render rays with per-pixel warped poses (l2g modes, 3D task)."""
    corrections = fields.eval_warp(
        state.warp, Tensor(batch["pixels"]), batch["frames"], anchor_frame=0)
    init = Tensor(batch["init_matrices"][batch["frames"]])
    pose = lie.LieTransform("SE3", init @ corrections.matrix)
    rgb, _, _, world = rendering.render_rays(
        lambda pts: fields.eval_field(state.field, pts), pose,
        batch["pixels"], state.bundle.intrinsics, batch["depths"],
        state.bundle.z_far)
    cam_pts = rendering.camera_points(
        batch["pixels"], batch["depths"], state.bundle.intrinsics)
    return rgb, world, cam_pts


# ---------------------------------------------------------------------------
# batch construction
# ---------------------------------------------------------------------------

def _sample_batch_2d(state: TrainedState, rng: np.random.Generator,
                     full: bool = False) -> dict:
    bundle = state.bundle
    m = state.num_frames
    p = bundle.images[0].data.shape[0]
    grid = bundle.patch_grid()
    if full:
        idx = np.tile(np.arange(p * p), (m, 1))
    else:
        idx = rng.integers(0, p * p, (m, state.config.batch_size))
    b = idx.shape[1]
    coords = grid.reshape(-1, 2)[idx.reshape(-1)]
    frames = np.repeat(np.arange(m), b)
    targets = np.concatenate(
        [bundle.images[i].data.reshape(-1, 3)[idx[i]] for i in range(m)])
    subset = None
    if b > state.config.solver_points:
        subset = [rng.choice(b, state.config.solver_points, replace=False)
                  for _ in range(m)]
    return {"coords": coords, "frames": frames, "targets": targets,
            "count": m * b, "pixels_per_frame": b, "solver_subset": subset}


def _sample_batch_3d(state: TrainedState, rng: np.random.Generator) -> dict:
    bundle = state.bundle
    config = state.config
    m = state.num_frames
    h, w = bundle.images[0].data.shape[:2]
    rays = config.batch_size
    idx = rng.integers(0, h * w, (m, rays))
    us = (idx % w).astype(np.float64)
    vs = (idx // w).astype(np.float64)
    pixels = np.stack([us.reshape(-1), vs.reshape(-1)], axis=1)
    frames = np.repeat(np.arange(m), rays)
    targets = np.concatenate(
        [bundle.images[i].data.reshape(-1, 3)[idx[i]] for i in range(m)])
    k = config.samples_per_ray
    depths = rendering.sample_depths(m * rays, k, bundle.z_near, bundle.z_far, rng=rng)
    points_per_frame = rays * k
    subset = None
    if points_per_frame > config.solver_points:
        subset = [rng.choice(points_per_frame, config.solver_points, replace=False)
                  for _ in range(m)]
    init_matrices = np.stack([t.matrix.numpy() for t in bundle.init_transforms])
    return {"pixels": pixels, "frames": frames, "targets": targets,
            "depths": depths, "count": m * rays, "rays_per_frame": rays,
            "solver_subset": subset, "init_matrices": init_matrices}


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def _loss_csv_header() -> str:
    return "iteration,photometric,global_alignment,total,alpha,lr_field,lr_warp"


def _loss_csv_row(i, breakdown, alpha, lr_field, lr_warp) -> str:
    return ",".join([
        str(i), repr(breakdown.photometric), repr(breakdown.global_alignment),
        repr(breakdown.total), repr(alpha), repr(lr_field), repr(lr_warp)])


def train_step(state: TrainedState, iteration: int) -> LossBreakdown:
    """One optimization step; returns the loss breakdown for logging."""
    config = state.config
    total_iters = config.iterations
    alpha = (float(config.field_frequencies) if config.mode == "naive"
             else anneal_alpha(config.field_frequencies, iteration,
                               total_iters, config.anneal_fraction))
    lr_field = exponential_lr(
        config.lr_field_start, config.lr_field_end, iteration, total_iters)
    lr_warp = exponential_lr(
        config.lr_warp_start, config.lr_warp_end, iteration, total_iters)

    if config.task == "nerf_synthetic":
        batch = _sample_batch_3d(state, state.rng)
    else:
        batch = _sample_batch_2d(state, state.rng)

    field_params = state.field_parameters()
    warp_params = state.warp_parameters()
    with Tape() as tape:
        if config.uses_warp_field:
            total, breakdown, _ = loss_l2g(state, batch, alpha)
        else:
            total, breakdown = loss_global(state, batch, alpha)
        if not np.isfinite(total.item()):
            raise TrainingDiverged(iteration, breakdown)
        grad_map = tape.backward(total)

    grads = []
    lrs = []
    for p in field_params:
        grads.append(_grad_or_zeros(grad_map, p))
        lrs.append(lr_field)
    for p in warp_params:
        grads.append(_grad_or_zeros(grad_map, p))
        lrs.append(lr_warp)
    state.optimizer.step(grads, lrs)
    state.iteration = iteration + 1
    state.last_log = (alpha, lr_field, lr_warp)
    return breakdown


def _grad_or_zeros(grad_map, p: Tensor) -> np.ndarray:
    if p.node_id is not None and p.node_id in grad_map:
        return grad_map[p.node_id].numpy()
    return np.zeros(p.shape)


def train(config: ExperimentConfig, bundle: SceneBundle | None = None,
          resume_from=None) -> TrainedState:
    """Run the configured experiment; writes loss.csv and checkpoints when
    `config.output_dir` is set."""
    if bundle is None:
        bundle = load_bundle(config.data_dir)
    state = _init_state(config, bundle)
    if resume_from is not None:
        _restore_training_state(state, resume_from)

    out_dir = Path(config.output_dir) if config.output_dir else None
    rows = []
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_config(out_dir / "config.yaml", config)
        csv_path = out_dir / "loss.csv"
        if state.iteration == 0 or not csv_path.exists():
            csv_path.write_text(_loss_csv_header() + "\n")

    start_time = time.perf_counter()
    for i in range(state.iteration, config.iterations):
        try:
            breakdown = train_step(state, i)
        except TrainingDiverged as err:
            err.iteration = i
            raise
        if i % config.log_every == 0 or i == config.iterations - 1:
            alpha, lr_field, lr_warp = state.last_log
            rows.append(_loss_csv_row(i, breakdown, alpha, lr_field, lr_warp))
        if (out_dir is not None and config.checkpoint_every > 0
                and (i + 1) % config.checkpoint_every == 0):
            save_checkpoint(out_dir / f"checkpoint_{i + 1:07d}.npz", state)
        if rows and len(rows) >= 200:
            _flush_rows(out_dir, rows)

    state.runtime_seconds += time.perf_counter() - start_time
    if out_dir is not None:
        _flush_rows(out_dir, rows)
        save_checkpoint(out_dir / "checkpoint.npz", state)
        # wall time lives outside the checkpoint so reruns stay bit-identical
        (out_dir / "runtime.txt").write_text(repr(state.runtime_seconds) + "\n")
    return state


def _flush_rows(out_dir, rows: list) -> None:
    if out_dir is None or not rows:
        rows.clear()
        return
    with open(out_dir / "loss.csv", "a") as fh:
        for row in rows:
            fh.write(row + "\n")
    rows.clear()


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def save_checkpoint(path, state: TrainedState) -> None:
    arrays = fields.field_arrays("field", state.field)
    meta = {
        "version": 1,
        "iteration": state.iteration,
        "config": {_CONFIG_KEY_UNMAP.get(k, k): v
                   for k, v in asdict(state.config).items()},
        "field": fields.field_meta(state.field),
        "rng": json.dumps(state.rng.bit_generator.state),
    }
    if state.warp is not None:
        arrays.update(fields.field_arrays("warp", state.warp))
        meta["warp"] = fields.field_meta(state.warp)
    if state.pose_params is not None:
        arrays["pose_params"] = state.pose_params.numpy()
    arrays.update(state.optimizer.state_arrays())
    fields.save_arrays(path, arrays, meta)


def _restore_training_state(state: TrainedState, path) -> None:
    arrays, meta = fields.load_arrays(path)
    restored = fields.restore_field("field", arrays, meta["field"])
    state.field.layers = restored.layers
    state.field.encoding = restored.encoding
    if "warp" in meta:
        state.warp = fields.restore_warp("warp", arrays, meta["warp"])
    if "pose_params" in arrays:
        state.pose_params = Tensor(arrays["pose_params"], requires_grad=True)
    params = fields.parameters(state.field) + (
        fields.parameters(state.warp) if state.warp is not None
        else [state.pose_params])
    state.optimizer = Adam(params)
    state.optimizer.load_state(arrays)
    state.rng.bit_generator.state = json.loads(meta["rng"])
    state.iteration = int(meta["iteration"])


def load_state(run_dir, bundle: SceneBundle | None = None,
               checkpoint: str = "checkpoint.npz") -> TrainedState:
    """Rebuild a TrainedState from a run directory (config.yaml + checkpoint)."""
    run_dir = Path(run_dir)
    config = load_config(run_dir / "config.yaml")
    if bundle is None:
        bundle = load_bundle(config.data_dir)
    state = _init_state(config, bundle)
    _restore_training_state(state, run_dir / checkpoint)
    runtime_file = run_dir / "runtime.txt"
    if runtime_file.exists():
        state.runtime_seconds = float(runtime_file.read_text())
    return state


# ---------------------------------------------------------------------------
# frame-transform extraction and test-time refinement
# ---------------------------------------------------------------------------

def estimate_frame_transforms(state: TrainedState) -> list[lie.LieTransform]:
    """One transform per frame from the trained state.

    Direct modes exponentiate their per-frame parameters. Warp modes run the
    solver on a dense deterministic correspondence set, mirroring how the
    consensus is built during training.
    """
    config = state.config
    m = state.num_frames
    if not config.uses_warp_field:
        mask = _anchor_mask(m)
        coords = state.pose_params.numpy() * mask
        out = []
        for i in range(m):
            c = lie.exp(lie.AlgebraCoords(config.algebra_kind, Tensor(coords[i])))
            if config.task == "nerf_synthetic":
                out.append(lie.compose(state.bundle.init_transforms[i], c))
            else:
                out.append(c)
        return out

    solve = (solvers.solve_homography if config.algebra_kind == "sl3"
             else solvers.solve_rigid)
    out = []
    if config.task == "nerf_synthetic":
        h, w = state.bundle.images[0].data.shape[:2]
        step = max(1, int(np.sqrt(h * w / 128)))
        us, vs = np.meshgrid(np.arange(0, w, step, dtype=np.float64),
                             np.arange(0, h, step, dtype=np.float64))
        pixels = np.stack([us.ravel(), vs.ravel()], axis=1)
        depths = rendering.sample_depths(
            pixels.shape[0], 8, state.bundle.z_near, state.bundle.z_far, rng=None)
        cam_pts = rendering.camera_points(
            pixels, depths, state.bundle.intrinsics).reshape(-1, 3)
        for i in range(m):
            corr = fields.eval_warp(
                state.warp, Tensor(pixels), np.full(pixels.shape[0], i, dtype=np.intp),
                anchor_frame=0)
            pose = lie.LieTransform(
                "SE3", Tensor(state.bundle.init_transforms[i].matrix.numpy())
                @ corr.matrix)
            world = rendering.transform_points(
                pose, Tensor(cam_pts.reshape(pixels.shape[0], -1, 3))).numpy()
            fit = solve(CorrespondenceSet(
                Tensor(cam_pts), Tensor(world.reshape(-1, 3))))
            out.append(fit)
    else:
        grid = state.bundle.patch_grid()
        step = max(1, grid.shape[0] // 24)
        pts = grid[::step, ::step].reshape(-1, 2)
        for i in range(m):
            transforms = fields.eval_warp(
                state.warp, Tensor(pts), np.full(pts.shape[0], i, dtype=np.intp),
                anchor_frame=0)
            warped = lie.act(transforms, Tensor(pts)).numpy()
            fit = solve(CorrespondenceSet(Tensor(pts), Tensor(warped)))
            out.append(fit)
    return out


def testtime_pose_opt(field: fields.NeuralField, init_pose: lie.LieTransform,
                      target: rendering.ImageGrid,
                      intrinsics: rendering.CameraIntrinsics,
                      z_near: float, z_far: float, k: int = 64,
                      iterations: int = 100, batch_size: int = 256,
                      lr: float = 1e-3, seed: int = 0) -> lie.LieTransform:
    """Refine one camera pose photometrically against a frozen field."""
    frozen = fields.NeuralField(
        [(w.detach(), b.detach()) for w, b in field.layers],
        field.encoding, field.in_dim, field.out_dim, field.output_activation)
    rng = np.random.default_rng(seed)
    h, w = target.data.shape[:2]
    correction = Tensor(np.zeros(6), requires_grad=True)
    init_matrix = init_pose.matrix.numpy()
    adam = Adam([correction])

    for it in range(iterations):
        idx = rng.integers(0, h * w, batch_size)
        pixels = np.stack([(idx % w).astype(np.float64),
                           (idx // w).astype(np.float64)], axis=1)
        targets = target.data.reshape(-1, 3)[idx]
        # evaluation-time quadrature: deterministic bin centers, so the
        # refined pose is not biased against targets rendered the same way
        depths = rendering.sample_depths(batch_size, k, z_near, z_far, rng=None)
        with Tape() as tape:
            pose = lie.LieTransform(
                "SE3", Tensor(init_matrix)
                @ lie.exp(lie.AlgebraCoords("se3", correction)).matrix)
            rgb, _, _, _ = rendering.render_rays(
                lambda pts: fields.eval_field(frozen, pts), pose, pixels,
                intrinsics, depths, z_far)
            loss = ad.sumsq(rgb - Tensor(targets)) * (1.0 / batch_size)
            grads = tape.backward(loss)
        adam.step([_grad_or_zeros(grads, correction)], [lr])

    final = init_matrix @ lie.exp(
        lie.AlgebraCoords("se3", correction)).matrix.numpy()
    return lie.LieTransform("SE3", Tensor(final))
