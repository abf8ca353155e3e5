"""Command-line surface: dataset generation, pipeline runs, spline fitting,
trajectory evaluation, and SVG plots.

Exit codes: 0 success, 1 validation error (bad arguments, files, config),
2 numerical failure inside optimization.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __name__ as _pkg
from .dataset import (
    default_intrinsics,
    generate_dataset,
    load_frames,
    load_gt,
    load_manifest,
    scene_from_manifest,
    slam_world_bounds,
)
from .evaluation import TimedTrajectory, evaluate_trajectories, smoothness_report
from .fitting import fit_residuals, fit_trajectory
from .io import (
    ConfigError,
    TrajectoryFormatError,
    build_configs,
    load_config,
    load_control_trajectory,
    load_trajectory,
    resolve_config,
    save_control_trajectory,
    save_loss_log,
    save_run_summary,
    save_svg_plot,
    save_trajectory,
)
from .rendering import NumericalError
from .scene import AnalyticScene
from .pipeline import run_sequence
from .spline import DomainError
from .voxelmap import VoxelMap


def _cmd_gen(args) -> int:
    scene = None
    if args.scene:
        scene = AnalyticScene.from_spec(json.loads(Path(args.scene).read_text()))
    manifest = generate_dataset(
        args.out, scene=scene, n_frames=args.frames, fps=args.fps,
        intrinsics=default_intrinsics(args.width, args.height), seed=args.seed,
        depth_sigma=args.depth_noise, pose_jitter_trans=args.pose_jitter_trans,
        pose_jitter_rot=args.pose_jitter_rot, gt_dt=args.gt_dt)
    print(f"wrote {manifest.frame_count} frames to {manifest.root}")
    return 0


def _cmd_run(args) -> int:
    manifest = load_manifest(args.dataset)
    user_cfg = json.loads(Path(args.config).read_text()) if args.config else {}
    cfg = resolve_config(user_cfg)
    cfg["pipeline"]["fps"] = manifest.fps
    if args.mode:
        cfg["pipeline"]["mode"] = args.mode
    if args.seed is not None:
        cfg["optim"]["seed"] = args.seed
    if args.deterministic:
        cfg["pipeline"]["deterministic"] = True
    # dataset-declared tracking jitter applies unless the config overrides it
    if cfg["pipeline"]["pose_jitter_trans"] == 0.0:
        cfg["pipeline"]["pose_jitter_trans"] = manifest.noise.get(
            "pose_jitter_trans", 0.0)
    if cfg["pipeline"]["pose_jitter_rot"] == 0.0:
        cfg["pipeline"]["pose_jitter_rot"] = manifest.noise.get(
            "pose_jitter_rot", 0.0)

    scene = scene_from_manifest(manifest)
    pipeline, render, optim, dynamics = build_configs(cfg, scene.diameter)
    cfg["renderer"]["far"] = render.far
    lo, hi = slam_world_bounds(manifest)
    voxel_map = VoxelMap.for_bounds(
        lo, hi, cell_size=cfg["map"]["cell_size"],
        truncation=render.truncation, margin=cfg["map"]["margin"],
        background_color=scene.background_color)

    frames = load_frames(manifest)
    started = time.time()
    result = run_sequence(frames, voxel_map, pipeline, render, optim, dynamics)
    elapsed = time.time() - started

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    est = TimedTrajectory(result.times, result.poses)
    save_trajectory(out / "trajectory.txt", est,
                    comment=f"estimated trajectory ({pipeline.mode} mode)")
    save_trajectory(out / "tracked.txt",
                    TimedTrajectory(result.times, result.discrete_poses),
                    comment="raw tracked poses")
    if result.control_trajectory is not None:
        save_control_trajectory(out / "controls.txt", result.control_trajectory)
    save_loss_log(out / "losses.csv", result.loss_log)
    summary = {
        "dataset": str(Path(args.dataset).resolve()),
        "config": cfg,
        "mode": pipeline.mode,
        "frames": len(frames),
        "elapsed_seconds": elapsed,
        "tracking_failures": int(sum(1 for ok in result.flags if not ok)),
    }
    if result.control_trajectory is not None:
        summary["smoothness"] = smoothness_report(result.control_trajectory)
    save_run_summary(out / "summary.json", summary)
    print(f"processed {len(frames)} frames in {elapsed:.1f}s -> {out}")
    return 0


def _cmd_fit(args) -> int:
    timed = load_trajectory(args.traj)
    t0 = float(timed.times[0]) - args.dt
    span = float(timed.times[-1]) - float(timed.times[0])
    count = int(np.ceil(span / args.dt)) + 4
    fitted = fit_trajectory(timed.times, list(timed.poses), t0, args.dt, count,
                            iters=args.iters)
    save_control_trajectory(args.out, fitted)
    rot_res, trans_res = fit_residuals(fitted, timed.times, list(timed.poses))
    print(f"fit {count} control points (dt={args.dt}s) to {len(timed)} poses")
    print(f"residuals: rot max {rot_res.max():.3e} rad, "
          f"trans max {trans_res.max():.3e} m -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    est = load_trajectory(args.est)
    gt = load_trajectory(args.gt)
    controls = None
    if args.controls:
        controls = load_control_trajectory(args.controls)
    report = evaluate_trajectories(est, gt, interval=args.rpe_interval,
                                   max_dt=args.max_dt, control_traj=controls)
    print(report.table())
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
        print(f"report -> {args.out}")
    return 0


def _cmd_plot(args) -> int:
    est = load_trajectory(args.est)
    tracks = {}
    if args.gt:
        gt = load_trajectory(args.gt)
        from .evaluation import horn_align
        align = horn_align(est, gt, max_dt=args.max_dt)
        tracks["ground truth"] = gt.translations()
        tracks["estimate (aligned)"] = est.translations() @ align.rotation.T \
            + align.translation
    else:
        tracks["estimate"] = est.translations()
    save_svg_plot(args.out, tracks, axes=tuple(args.axes))
    print(f"plot -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splineslam",
        description="Continuous-time RGB-D SLAM on cubic B-spline trajectories")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic RGB-D dataset")
    gen.add_argument("--out", required=True)
    gen.add_argument("--frames", type=int, default=150)
    gen.add_argument("--fps", type=float, default=30.0)
    gen.add_argument("--width", type=int, default=64)
    gen.add_argument("--height", type=int, default=48)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--depth-noise", type=float, default=0.0,
                     help="per-pixel Gaussian depth noise sigma, meters")
    gen.add_argument("--pose-jitter-trans", type=float, default=0.0,
                     help="tracking stress jitter recorded in the manifest, m")
    gen.add_argument("--pose-jitter-rot", type=float, default=0.0,
                     help="tracking stress jitter recorded in the manifest, rad")
    gen.add_argument("--gt-dt", type=float, default=0.3,
                     help="knot spacing of the generated ground-truth spline")
    gen.add_argument("--scene", help="JSON scene spec (default: built-in room)")
    gen.set_defaults(func=_cmd_gen)

    run = sub.add_parser("run", help="run the tracking/mapping pipeline")
    run.add_argument("--dataset", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--config", help="JSON config overriding the defaults")
    run.add_argument("--mode", choices=["spline", "baseline"])
    run.add_argument("--seed", type=int)
    run.add_argument("--deterministic", action="store_true",
                     help="serialize tracking and mapping for reproducibility")
    run.set_defaults(func=_cmd_run)

    fit = sub.add_parser("fit", help="fit a control-point spline to a trajectory file")
    fit.add_argument("--traj", required=True, help="TUM trajectory file")
    fit.add_argument("--out", required=True, help="output control file path")
    fit.add_argument("--dt", type=float, default=0.3)
    fit.add_argument("--iters", type=int, default=30)
    fit.set_defaults(func=_cmd_fit)

    ev = sub.add_parser("eval", help="ATE/RPE/smoothness report")
    ev.add_argument("--est", required=True)
    ev.add_argument("--gt", required=True)
    ev.add_argument("--rpe-interval", type=int, default=1)
    ev.add_argument("--max-dt", type=float, default=1.0 / 60.0,
                    help="association tolerance, seconds (default half a frame)")
    ev.add_argument("--controls", help="control file for kinematic statistics")
    ev.add_argument("--out", help="write the report as JSON")
    ev.set_defaults(func=_cmd_eval)

    plot = sub.add_parser("plot", help="SVG plot of aligned trajectories")
    plot.add_argument("--est", required=True)
    plot.add_argument("--gt")
    plot.add_argument("--out", required=True)
    plot.add_argument("--max-dt", type=float, default=1.0 / 60.0)
    plot.add_argument("--axes", type=int, nargs=2, default=(0, 1),
                      help="translation axes to plot (default x y)")
    plot.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, TrajectoryFormatError, DomainError, ValueError,
            FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
