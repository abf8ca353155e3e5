"""Synthetic RGB-D sequence generation from analytic scenes.

Ground-truth trajectories are smooth orbital splines whose sampled
acceleration stays under a configurable bound; frames are rendered with the
same volume-rendering equations the pipeline optimizes against (exact traced
depth centers the surface samples), then optional Gaussian depth noise is
added. Generation is byte-deterministic for a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .evaluation import TimedTrajectory, smoothness_report
from .io import load_pfm, load_ppm, load_trajectory, save_control_trajectory, save_pfm, save_ppm, save_trajectory
from .rendering import CameraIntrinsics, RenderConfig, RgbdFrame, look_at_pose, render_frame
from .scene import AnalyticScene, default_scene

from .spline import ControlTrajectory, eval_pose

MANIFEST_NAME = "manifest.json"
CAMERA_MARGIN = 0.25   # minimum camera clearance from any surface, meters


@dataclass
class DatasetManifest:
    """Everything needed to reload and re-render a generated sequence."""

    root: Path
    scene_spec: dict
    intrinsics: CameraIntrinsics
    fps: float
    frame_count: int
    gt_trajectory: str
    gt_controls: str
    noise: dict
    render: dict
    seed: int

    def to_dict(self) -> dict:
        return {
            "format": "splineslam-dataset-v1",
            "scene": self.scene_spec,
            "intrinsics": self.intrinsics.to_spec(),
            "fps": self.fps,
            "frame_count": self.frame_count,
            "gt_trajectory": self.gt_trajectory,
            "gt_controls": self.gt_controls,
            "noise": self.noise,
            "render": self.render,
            "seed": self.seed,
            "color_dir": "color",
            "depth_dir": "depth",
        }


def generate_gt_spline(scene: AnalyticScene, duration: float, dt: float,
                       rng: np.random.Generator, accel_bound: float = 2.5,
                       max_tries: int = 6) -> ControlTrajectory:
    """Random smooth orbit inside the scene with bounded sampled kinematics."""
    lo, hi = scene.bounds
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    count = int(np.ceil(duration / dt)) + 4
    direction = 1.0 if rng.uniform() < 0.5 else -1.0
    # cap the angular rate (not the total sweep) so short sequences stay slow
    omega0 = direction * rng.uniform(0.12, 0.2)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    radius = rng.uniform(0.55, 0.65) * min(half[0], half[1])
    height = center[2] + rng.uniform(-0.05, 0.25)
    bob = rng.uniform(0.0, 0.08)
    bob_rate = rng.uniform(1.5, 2.5)
    target = np.array([center[0], center[1], 0.55 * center[2]]) \
        + rng.uniform(-0.1, 0.1, size=3)

    ramp = min(1.0, duration / 3.0)

    def swept_angle(t: float, omega: float) -> float:
        # velocity ease-in: smoothstep ramp over [0, ramp], rest before t=0
        if t <= 0.0:
            return 0.0
        if t >= ramp:
            return omega * (0.5 * ramp + (t - ramp))
        u = t / ramp
        return omega * ramp * (u ** 3 - 0.5 * u ** 4)

    omega = omega0
    for attempt in range(max_tries):
        poses = []
        ok = True
        for k in range(count):
            t = -dt + k * dt
            ang = phase + swept_angle(t, omega)
            eye = np.array([
                center[0] + radius * np.cos(ang),
                center[1] + radius * np.sin(ang),
                height + bob * np.sin(bob_rate * ang),
            ])
            if not scene.contains(eye, margin=CAMERA_MARGIN):
                ok = False
                break
            poses.append(look_at_pose(eye, target))
        if ok:
            traj = ControlTrajectory.from_poses(-dt, dt, poses)
            rep = smoothness_report(traj, samples=300)
            if (rep["max_acceleration"] <= accel_bound
                    and rep["max_angular_acceleration"] <= accel_bound):
                return traj
        # too fast or too wide: slow down and shrink
        omega *= 0.7
        radius *= 0.9
    raise ValueError("could not generate a feasible ground-truth trajectory; "
                     "shrink the orbit or relax the bounds")


def default_intrinsics(width: int = 64, height: int = 48) -> CameraIntrinsics:
    return CameraIntrinsics(fx=0.625 * width, fy=0.625 * width,
                            cx=width / 2.0, cy=height / 2.0,
                            width=width, height=height)


def generate_dataset(out_dir, scene: AnalyticScene | None = None,
                     n_frames: int = 150, fps: float = 30.0,
                     intrinsics: CameraIntrinsics | None = None,
                     seed: int = 0, depth_sigma: float = 0.0,
                     pose_jitter_trans: float = 0.0,
                     pose_jitter_rot: float = 0.0,
                     gt_dt: float = 0.3,
                     render: RenderConfig | None = None) -> DatasetManifest:
    """Render a synthetic RGB-D sequence; returns the written manifest."""
    if n_frames < 2 or fps <= 0.0:
        raise ValueError("need at least 2 frames and a positive fps")
    out = Path(out_dir)
    (out / "color").mkdir(parents=True, exist_ok=True)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    scene = scene or default_scene()
    intrinsics = intrinsics or default_intrinsics()
    config = render or RenderConfig(truncation=scene.truncation, jitter=0.0)
    config = config.with_far(scene.diameter)
    rng = np.random.default_rng([seed, 0xDA7A])

    duration = n_frames / fps
    gt_controls = generate_gt_spline(scene, duration, gt_dt, rng)
    times = np.arange(n_frames) / fps
    gt_poses = [eval_pose(gt_controls, t) for t in times]

    h, w = intrinsics.height, intrinsics.width
    rows, cols = np.mgrid[0:h, 0:w]
    uv = np.stack([cols.ravel() + 0.5, rows.ravel() + 0.5], axis=1)
    dirs_cam = intrinsics.backproject(uv)
    for k, pose in enumerate(gt_poses):
        if not scene.contains(pose.translation, margin=CAMERA_MARGIN):
            raise ValueError(f"frame {k}: camera exits the scene bounds")
        # depth measurement: exact z-depth of the first surface along each
        # Eq.-style unnormalized ray (the sigmoid-blended depth estimate is a
        # rendering-side quantity; the sensor sees the surface itself)
        traced = scene.trace_depth(pose.translation, dirs_cam @ pose.rotation.T,
                                   2.0 * config.far).reshape(h, w)
        color, _, valid = render_frame(scene, pose, intrinsics, config,
                                       surface_depth=traced)
        depth = np.where(valid & (traced > 0.0), traced, 0.0)
        if depth_sigma > 0.0:
            noise = depth_sigma * rng.standard_normal(depth.shape)
            depth = np.where(depth > 0.0, np.maximum(depth + noise, 0.0), 0.0)
        save_ppm(out / "color" / f"frame_{k:04d}.ppm", np.clip(color, 0.0, 1.0))
        save_pfm(out / "depth" / f"frame_{k:04d}.pfm", depth)

    save_trajectory(out / "groundtruth.txt",
                    TimedTrajectory(times, gt_poses),
                    comment="ground truth (spline-sampled)")
    save_control_trajectory(out / "gt_controls.txt", gt_controls)

    manifest = DatasetManifest(
        root=out,
        scene_spec=scene.to_spec(),
        intrinsics=intrinsics,
        fps=fps,
        frame_count=n_frames,
        gt_trajectory="groundtruth.txt",
        gt_controls="gt_controls.txt",
        noise={"depth_sigma": depth_sigma,
               "pose_jitter_trans": pose_jitter_trans,
               "pose_jitter_rot": pose_jitter_rot},
        render={"truncation": config.truncation, "n_uniform": config.n_uniform,
                "n_surface": config.n_surface, "near": config.near,
                "far": config.far},
        seed=seed,
    )
    (out / MANIFEST_NAME).write_text(
        json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    return manifest


def load_manifest(dataset_dir) -> DatasetManifest:
    root = Path(dataset_dir)
    path = root / MANIFEST_NAME
    if not path.exists():
        raise ValueError(f"{path}: dataset manifest not found")
    raw = json.loads(path.read_text())
    if raw.get("format") != "splineslam-dataset-v1":
        raise ValueError(f"{path}: unknown dataset format {raw.get('format')!r}")
    manifest = DatasetManifest(
        root=root,
        scene_spec=raw["scene"],
        intrinsics=CameraIntrinsics.from_spec(raw["intrinsics"]),
        fps=float(raw["fps"]),
        frame_count=int(raw["frame_count"]),
        gt_trajectory=raw["gt_trajectory"],
        gt_controls=raw["gt_controls"],
        noise=raw["noise"],
        render=raw["render"],
        seed=int(raw["seed"]),
    )
    if manifest.fps <= 0.0:
        raise ValueError(f"{path}: fps must be positive")
    for k in range(manifest.frame_count):
        for rel in (f"color/frame_{k:04d}.ppm", f"depth/frame_{k:04d}.pfm"):
            if not (root / rel).exists():
                raise ValueError(f"{path}: missing referenced file {rel}")
    if not (root / manifest.gt_trajectory).exists():
        raise ValueError(f"{path}: missing {manifest.gt_trajectory}")
    return manifest


def load_frames(manifest: DatasetManifest) -> list[RgbdFrame]:
    frames = []
    for k in range(manifest.frame_count):
        color = load_ppm(manifest.root / "color" / f"frame_{k:04d}.ppm")
        depth = load_pfm(manifest.root / "depth" / f"frame_{k:04d}.pfm")
        frames.append(RgbdFrame(timestamp=k / manifest.fps, color=color,
                                depth=depth, intrinsics=manifest.intrinsics))
    return frames


def load_gt(manifest: DatasetManifest) -> TimedTrajectory:
    return load_trajectory(manifest.root / manifest.gt_trajectory)


def scene_from_manifest(manifest: DatasetManifest) -> AnalyticScene:
    return AnalyticScene.from_spec(manifest.scene_spec)


def slam_world_bounds(manifest: DatasetManifest) -> tuple[np.ndarray, np.ndarray]:
    """Scene bounding box expressed in the pipeline's world frame.

    The pipeline anchors its world at frame 0 = identity, so the scene box
    must be carried through the inverse of the first ground-truth pose. This
    uses one oracle pose purely to size the voxel grid (the dataset's
    equivalent of a scene-bounds config entry), never for estimation.
    """
    scene = scene_from_manifest(manifest)
    lo, hi = scene.bounds
    corners = np.array([[x, y, z] for x in (lo[0], hi[0])
                        for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    g0 = load_gt(manifest).poses[0]
    moved = g0.inverse().apply(corners)
    return moved.min(axis=0), moved.max(axis=0)
