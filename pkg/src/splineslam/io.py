"""File formats and run configuration.

Formats are chosen to be implementable with no third-party codecs:
  * trajectories: TUM text, one line "timestamp tx ty tz qx qy qz qw",
    '#'-comments allowed, quaternion canonicalized to qw >= 0,
  * color images: binary PPM (P6, 8-bit),
  * depth images: PFM (Pf, float32, negative scale = little-endian,
    bottom-to-top row order per the PFM convention), meters, 0 = invalid,
  * configuration and reports: JSON with strict key checking.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .se3 import Pose, quat_to_rotmat, rotmat_to_quat
from .evaluation import TimedTrajectory
from .spline import ControlTrajectory, KnotGrid


class TrajectoryFormatError(ValueError):
    """Malformed trajectory file; message carries the line number."""


def _format_value(x: float) -> str:
    # shortest decimal that round-trips the float exactly
    return np.format_float_positional(float(x), unique=True, trim="-")


def save_trajectory(path, traj: TimedTrajectory, comment: str | None = None):
    lines = []
    if comment:
        lines.append(f"# {comment}")
    lines.append("# timestamp tx ty tz qx qy qz qw")
    for t, pose in zip(traj.times, traj.poses):
        q = rotmat_to_quat(pose.rotation)
        fields = [f"{t:.9f}"] + [_format_value(v) for v in pose.translation] \
            + [_format_value(v) for v in q]
        lines.append(" ".join(fields))
    Path(path).write_text("\n".join(lines) + "\n")


def load_trajectory(path) -> TimedTrajectory:
    times = []
    poses = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 8:
            raise TrajectoryFormatError(
                f"{path}:{lineno}: expected 8 fields, got {len(fields)}")
        try:
            values = [float(f) for f in fields]
        except ValueError as exc:
            raise TrajectoryFormatError(f"{path}:{lineno}: {exc}") from exc
        if not all(np.isfinite(v) for v in values):
            raise TrajectoryFormatError(f"{path}:{lineno}: non-finite value")
        times.append(values[0])
        poses.append(Pose(quat_to_rotmat(np.array(values[4:8])),
                          np.array(values[1:4])))
    if not times:
        raise TrajectoryFormatError(f"{path}: no pose lines found")
    try:
        return TimedTrajectory(np.array(times), poses)
    except ValueError as exc:
        raise TrajectoryFormatError(f"{path}: {exc}") from exc


def save_control_trajectory(path, traj: ControlTrajectory):
    """Control points as TUM lines (timestamp = knot time) + JSON sidecar."""
    times = [traj.grid.knot_time(k) for k in range(traj.grid.count)]
    timed = TimedTrajectory(np.array(times),
                            [traj.control_pose(k) for k in range(traj.grid.count)])
    save_trajectory(path, timed, comment="control points")
    sidecar = {"t0": traj.grid.t0, "dt": traj.grid.dt, "count": traj.grid.count}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_control_trajectory(path) -> ControlTrajectory:
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    grid = KnotGrid(float(sidecar["t0"]), float(sidecar["dt"]), int(sidecar["count"]))
    timed = load_trajectory(path)
    if len(timed) != grid.count:
        raise TrajectoryFormatError(
            f"{path}: {len(timed)} control lines but sidecar says {grid.count}")
    rots = np.stack([p.rotation for p in timed.poses])
    trans = np.stack([p.translation for p in timed.poses])
    return ControlTrajectory(grid, rots, trans)


# --- images ---------------------------------------------------------------------


def save_ppm(path, image: np.ndarray):
    """8-bit binary PPM from a float image in [0, 1], shape (H, W, 3)."""
    image = np.asarray(image, dtype=float)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {image.shape}")
    h, w = image.shape[:2]
    data = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def load_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P6":
            raise ValueError(f"{path}: not a binary PPM (P6) file")
        fields = []
        while len(fields) < 3:
            line = fh.readline()
            if not line:
                raise ValueError(f"{path}: truncated PPM header")
            text = line.split(b"#")[0]
            fields.extend(text.split())
        w, h, maxval = (int(f) for f in fields)
        if maxval != 255:
            raise ValueError(f"{path}: only 8-bit PPM supported")
        data = np.frombuffer(fh.read(w * h * 3), dtype=np.uint8)
    return data.reshape(h, w, 3).astype(float) / 255.0


def save_pfm(path, image: np.ndarray):
    """Grayscale PFM: float32, little-endian (scale -1), bottom-to-top rows."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 2:
        raise ValueError(f"expected (H, W) image, got {image.shape}")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(image[::-1].astype("<f4").tobytes())


def load_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"Pf":
            raise ValueError(f"{path}: not a grayscale PFM file")
        w, h = (int(f) for f in fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(w * h * 4), dtype=dtype)
    return np.asarray(data.reshape(h, w)[::-1], dtype=float)


# --- run configuration ------------------------------------------------------------

DEFAULT_CONFIG = {
    "pipeline": {
        "dt": 0.3,
        "window": 5,
        "fps": 30.0,
        "keyframe_every": 5,
        "mode": "spline",
        "deterministic": False,
        "pixels_tracking": 768,
        "pixels_lba": 384,
        "pixels_gba": 512,
        "pose_jitter_trans": 0.0,
        "pose_jitter_rot": 0.0,
        "velocity_damping": 0.7,
    },
    "renderer": {
        "truncation": 0.1,
        "n_uniform": 10,
        "n_surface": 10,
        "near": 0.05,
        "far": None,          # null = scene diameter from the dataset manifest
        "jitter": 1.0,
        "w_rgb": 0.05,
        "w_depth": 0.01,
        "w_sdf": 5e5,
        "w_free_space": 1e3,
    },
    "dynamics": {
        "enabled": True,
        "lambda1": 0.1,
        "lambda2": 0.1,
        "a_max": 5.0,
        "w_dot_max": 5.0,
        "K": 16,
    },
    "optim": {
        "lr_pose": 2e-3,
        "lr_tracking": 5e-3,
        "lr_map": 1e-2,
        "iters_tracking": 30,
        "iters_lba_init": 20,
        "iters_lba_joint": 20,
        "iters_gba": 10,
        "iters_first_map": 400,
        "seed": 0,
    },
    "map": {
        "cell_size": 0.1,
        "margin": 0.2,
    },
}


def build_configs(cfg: dict, scene_diameter: float | None = None):
    """Typed config objects from a resolved config dict.

    Imported lazily to keep io importable without the pipeline stack.
    """
    from .dynamics import DynamicsParams
    from .pipeline import OptimSettings, PipelineConfig
    from .rendering import RenderConfig

    r = dict(cfg["renderer"])
    if r.get("far") is None:
        if scene_diameter is None:
            raise ConfigError("renderer.far is null and no scene diameter is known")
        r["far"] = float(scene_diameter)
    render = RenderConfig(**r)
    p = dict(cfg["pipeline"])
    d = dict(cfg["dynamics"])
    dynamics_enabled = bool(d.pop("enabled"))
    pipeline = PipelineConfig(**p, dynamics_enabled=dynamics_enabled)
    optim = OptimSettings(**cfg["optim"])
    dynamics = DynamicsParams(**d)
    return pipeline, render, optim, dynamics


class ConfigError(ValueError):
    """Unknown or ill-typed configuration key; message carries the key path."""


def resolve_config(user: dict | None) -> dict:
    """Merge a user config over the defaults, rejecting unknown keys."""

    def merge(defaults: dict, overrides: dict, prefix: str) -> dict:
        out = {}
        for key, default in defaults.items():
            if key in overrides:
                value = overrides[key]
                if isinstance(default, dict):
                    if not isinstance(value, dict):
                        raise ConfigError(f"{prefix}{key}: expected an object")
                    out[key] = merge(default, value, f"{prefix}{key}.")
                else:
                    out[key] = value
            else:
                out[key] = dict(default) if isinstance(default, dict) else default
        unknown = set(overrides) - set(defaults)
        if unknown:
            raise ConfigError(
                f"unknown config key(s): "
                f"{', '.join(prefix + k for k in sorted(unknown))}")
        return out

    return merge(DEFAULT_CONFIG, user or {}, "")


def load_config(path) -> dict:
    try:
        user = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return resolve_config(user)


def save_loss_log(path, rows: list[dict]):
    header = ["cycle", "stage", "rgb", "depth", "sdf", "free_space",
              "dynamics", "total"]
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            str(row[k]) if k in ("cycle", "stage") else f"{row[k]:.10g}"
            for k in header))
    Path(path).write_text("\n".join(lines) + "\n")


def save_run_summary(path, summary: dict):
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


# --- SVG plotting -------------------------------------------------------------------


def _polyline(points: np.ndarray, color: str, width: float = 1.5) -> str:
    coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
    return (f'<polyline points="{coords}" fill="none" stroke="{color}" '
            f'stroke-width="{width}"/>')


def save_svg_plot(path, tracks: dict, size: int = 640, margin: int = 40,
                  axes=(0, 1)):
    """Top-down line plot of named trajectories (translation components).

    tracks maps a label to an (N, 3) translation array; the first two chosen
    axes are plotted with a shared scale.
    """
    colors = ["#000000", "#d62728", "#1f77b4", "#2ca02c", "#9467bd"]
    all_pts = np.concatenate([np.asarray(t)[:, list(axes)] for t in tracks.values()])
    lo = all_pts.min(axis=0)
    hi = all_pts.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    scale = (size - 2 * margin) / span.max()

    def to_px(pts):
        xy = (np.asarray(pts)[:, list(axes)] - lo) * scale + margin
        xy[:, 1] = size - xy[:, 1]   # flip y so "up" is up
        return xy

    body = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" '
            f'height="{size}" viewBox="0 0 {size} {size}">',
            f'<rect width="{size}" height="{size}" fill="white"/>']
    for idx, (label, pts) in enumerate(tracks.items()):
        color = colors[idx % len(colors)]
        body.append(_polyline(to_px(pts), color))
        body.append(f'<text x="{margin}" y="{20 + 16 * idx}" fill="{color}" '
                    f'font-family="monospace" font-size="14">{label}</text>')
    body.append("</svg>")
    Path(path).write_text("\n".join(body) + "\n")
