"""Command-line interface.

Subcommands:
  gen2d    write a bundle of perturbed patches from a (or the built-in) image
  gen3d    write a synthetic multi-view bundle with perturbed camera poses
  train    run an experiment from a bundle directory
  eval     metrics + comparison images for a finished run
  render   novel views / reconstructions from a checkpoint
  report   aggregate several runs into one table

The environment variable L2G_OUT_DIR provides the default output root for
commands that take --out.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from l2greg import datagen, evaluate, fields, lie, pipeline, rendering
from l2greg.autodiff import Tensor
from l2greg.metrics import MetricsReport


def _default_out(name: str) -> str:
    root = os.environ.get("L2G_OUT_DIR")
    return str(Path(root) / name) if root else name


def _add_gen2d(sub):
    p = sub.add_parser("gen2d", help="generate perturbed 2D patches")
    p.add_argument("--out", default=None, help="bundle output directory")
    p.add_argument("--mode", choices=("rigid", "homography"), default="rigid",
                   help="perturbation family")
    p.add_argument("--frames", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--magnitude", type=float, default=1.0)
    p.add_argument("--image", default=None,
                   help="source PNG (default: built-in procedural image)")
    p.add_argument("--size", type=int, default=256,
                   help="procedural source size in pixels")
    p.add_argument("--patch-size", type=int, default=64)
    p.add_argument("--patch-extent", type=float, default=0.38)


def _add_gen3d(sub):
    p = sub.add_parser("gen3d", help="generate the synthetic 3D scene")
    p.add_argument("--out", default=None)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--resolution", type=int, default=48)
    p.add_argument("--nr", type=float, default=0.04, help="rotation noise std")
    p.add_argument("--nt", type=float, default=0.4, help="translation noise std")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=64, help="depth samples per ray")


def _add_train(sub):
    p = sub.add_parser("train", help="train a model on a bundle")
    p.add_argument("--data", required=True, help="bundle directory")
    p.add_argument("--out", default=None, help="run output directory")
    p.add_argument("--config", default=None, help="YAML config to start from")
    p.add_argument("--mode", choices=pipeline.MODES, default=None)
    p.add_argument("--lambda", dest="lambda_global", type=float, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--detach-global", action="store_true",
                   help="ablation: keep the solver out of the gradient path")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")


def _add_eval(sub):
    p = sub.add_parser("eval", help="evaluate a finished run")
    p.add_argument("--run", required=True, help="run directory (train output)")
    p.add_argument("--out", default=None, help="default: <run>/eval")
    p.add_argument("--testtime-opt", action="store_true",
                   help="refine poses photometrically before view synthesis (3D)")


def _add_render(sub):
    p = sub.add_parser("render", help="render from a checkpoint")
    p.add_argument("--run", required=True)
    p.add_argument("--out", default=None, help="default: <run>/renders")
    p.add_argument("--orbit", type=int, default=0,
                   help="3D: render this many novel ring views")
    p.add_argument("--frames", type=int, nargs="*", default=None,
                   help="3D: frame indices to render at estimated poses")
    p.add_argument("--grid", type=int, default=256,
                   help="2D: resolution of the full neural-image render")


def _add_report(sub):
    p = sub.add_parser("report", help="tabulate several runs")
    p.add_argument("runs", nargs="+", help="run or eval directories")
    p.add_argument("--out", default=None, help="write table here (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="l2greg",
        description="local-to-global registration of neural fields")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_gen2d(sub)
    _add_gen3d(sub)
    _add_train(sub)
    _add_eval(sub)
    _add_render(sub)
    _add_report(sub)
    return parser


def cmd_gen2d(args) -> int:
    out = args.out or _default_out(f"data2d_{args.mode}")
    if args.image is not None:
        source = rendering.read_png(args.image)
    else:
        source = datagen.make_test_image(size=args.size, seed=args.seed + 1000)
    bundle = datagen.gen_patches(
        source, args.frames, args.mode, args.magnitude, args.seed,
        patch_size=args.patch_size, patch_extent=args.patch_extent)
    datagen.save_bundle(out, bundle)
    print(f"wrote {args.frames}-frame {args.mode} bundle to {out}")
    return 0


def cmd_gen3d(args) -> int:
    out = args.out or _default_out("data3d")
    spec = datagen.PerturbationSpec(args.nr, args.nt)
    bundle = datagen.gen_toy_scene(
        args.frames, args.resolution, spec, args.seed,
        samples_per_ray=args.samples)
    datagen.save_bundle(out, bundle)
    print(f"wrote {args.frames}-view synthetic bundle to {out}")
    return 0


_TASK_DEFAULTS = {
    "image_rigid": dict(batch_size=96, iterations=5000, anneal_fraction=0.5,
                        field_hidden=256, field_depth=8, field_frequencies=8,
                        lr_field_start=2e-3, lr_field_end=2e-4,
                        lr_warp_start=2e-3, lr_warp_end=1e-5),
    "image_homography": dict(batch_size=96, iterations=5000, anneal_fraction=0.5,
                             field_hidden=256, field_depth=8, field_frequencies=8,
                             lr_field_start=2e-3, lr_field_end=2e-4,
                             lr_warp_start=2e-3, lr_warp_end=1e-5),
    "nerf_synthetic": dict(batch_size=8, iterations=20000, anneal_fraction=0.7,
                           field_hidden=128, field_depth=6, field_frequencies=6,
                           lr_field_start=5e-4, lr_field_end=1e-4,
                           lr_warp_start=1e-3, lr_warp_end=1e-8),
}


def make_config(data_dir: str, task: str, config_path=None,
                **overrides) -> pipeline.ExperimentConfig:
    """Task defaults -> optional YAML -> explicit overrides, in that order."""
    if config_path is not None:
        config = pipeline.load_config(config_path)
        base = {k: getattr(config, k)
                for k in pipeline.ExperimentConfig.__dataclass_fields__}
    else:
        base = dict(_TASK_DEFAULTS[task])
    base["task"] = task
    base["data_dir"] = data_dir
    for key, value in overrides.items():
        if value is not None:
            base[key] = value
    return pipeline.ExperimentConfig(**base)


def cmd_train(args) -> int:
    bundle = datagen.load_bundle(args.data)
    mode = args.mode
    if args.detach_global:
        mode = "l2g_detached"
    out = args.out or _default_out(f"run_{bundle.task}_{mode or 'l2g'}")
    config = make_config(
        args.data, bundle.task, config_path=args.config, mode=mode,
        lambda_global=args.lambda_global, iterations=args.iters,
        batch_size=args.batch, seed=args.seed, output_dir=out)
    state = pipeline.train(config, bundle=bundle, resume_from=args.resume)
    print(f"trained {config.mode} for {config.iterations} iterations "
          f"({state.runtime_seconds:.1f}s); run directory: {out}")
    return 0


def cmd_eval(args) -> int:
    state = pipeline.load_state(args.run)
    out = args.out or str(Path(args.run) / "eval")
    report = evaluate.evaluate(state, out_dir=out, testtime_opt=args.testtime_opt)
    if report.corner_errors:
        print(f"mean corner error: {report.mean_corner_error:.3f} px")
    if report.rotation_errors:
        print(f"mean rotation error: {report.mean_rotation_error:.3f} deg, "
              f"mean translation error (x100): {report.mean_translation_error:.3f}")
    if report.psnrs:
        print(f"mean PSNR: {report.mean_psnr:.2f} dB")
    print(f"wrote metrics and figures to {out}")
    return 0


def cmd_render(args) -> int:
    state = pipeline.load_state(args.run)
    out = Path(args.out or (Path(args.run) / "renders"))
    out.mkdir(parents=True, exist_ok=True)
    if state.config.task == "nerf_synthetic":
        poses = []
        names = []
        if args.orbit:
            poses = datagen.ring_poses(args.orbit)
            names = [f"orbit_{i:03d}" for i in range(args.orbit)]
        else:
            estimated = pipeline.estimate_frame_transforms(state)
            idx = args.frames if args.frames else range(len(estimated))
            poses = [estimated[i] for i in idx]
            names = [f"frame_{i:03d}" for i in idx]
        images, depths = evaluate.render_views(state, poses)
        for name, img, depth in zip(names, images, depths):
            rendering.write_png(out / f"{name}.png", img)
            rendering.write_depth(out / f"{name}_depth.png", depth)
    else:
        res = args.grid
        axis = np.linspace(-1.0, 1.0, res)
        xs, ys = np.meshgrid(axis, axis)
        pts = np.stack([xs.ravel(), ys.ravel()], axis=1)
        rgb = fields.eval_field(state.field, Tensor(pts)).numpy()
        img = rendering.ImageGrid(np.clip(rgb.reshape(res, res, 3), 0.0, 1.0))
        rendering.write_png(out / "neural_image.png", img)
    print(f"wrote renders to {out}")
    return 0


def _fmt(value: float, width: int = 10) -> str:
    if value != value:  # nan: metric not applicable
        return "-".rjust(width)
    return f"{value:.2f}".rjust(width)


def cmd_report(args) -> int:
    reports = []
    for run in args.runs:
        path = Path(run)
        candidates = [path / "metrics.txt", path / "eval" / "metrics.txt"]
        found = next((c for c in candidates if c.exists()), None)
        if found is None:
            print(f"error: no metrics.txt under {run}", file=sys.stderr)
            return 1
        reports.append(MetricsReport.load(found))

    lines = []
    by_task: dict[str, list[MetricsReport]] = {}
    for r in reports:
        by_task.setdefault(r.task, []).append(r)

    if "image_rigid" in by_task or "image_homography" in by_task:
        lines.append("2D neural image alignment")
        header = f"{'method':<16}" \
                 f"{'rigid corner px':>16}{'rigid PSNR':>12}" \
                 f"{'homog corner px':>17}{'homog PSNR':>12}"
        lines.append(header)
        modes = []
        for r in reports:
            if r.task.startswith("image") and r.mode not in modes:
                modes.append(r.mode)
        for mode in modes:
            rigid = next((r for r in by_task.get("image_rigid", [])
                          if r.mode == mode), None)
            homog = next((r for r in by_task.get("image_homography", [])
                          if r.mode == mode), None)
            lines.append(
                f"{mode:<16}"
                + _fmt(rigid.mean_corner_error if rigid else float("nan"), 16)
                + _fmt(rigid.mean_psnr if rigid else float("nan"), 12)
                + _fmt(homog.mean_corner_error if homog else float("nan"), 17)
                + _fmt(homog.mean_psnr if homog else float("nan"), 12))
        lines.append("")

    if "nerf_synthetic" in by_task:
        lines.append("3D synthetic scene (translation x100)")
        lines.append(f"{'method':<16}{'rotation deg':>14}{'translation':>13}{'PSNR':>10}")
        for r in by_task["nerf_synthetic"]:
            lines.append(
                f"{r.mode:<16}" + _fmt(r.mean_rotation_error, 14)
                + _fmt(r.mean_translation_error, 13) + _fmt(r.mean_psnr, 10))

    table = "\n".join(lines)
    if args.out:
        Path(args.out).write_text(table + "\n")
    else:
        print(table)
    return 0


COMMANDS = {
    "gen2d": cmd_gen2d,
    "gen3d": cmd_gen3d,
    "train": cmd_train,
    "eval": cmd_eval,
    "render": cmd_render,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as err:
        print(f"error: missing file: {err.filename or err}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
