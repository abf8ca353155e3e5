"""Tracking / mapping orchestration: constant-velocity tracking against a
frozen map, per-interval mapping cycles (curve approximation, sliding-window
local BA, global BA over keyframes), and trajectory output.

Concurrency model: at most two logical tasks. Tracking runs on the caller's
thread and only reads published snapshots of the map and trajectory; mapping
cycles own the master copies and publish fresh snapshots when they finish.
With deterministic=True (or TSSLAM_THREADS=1) the cycles run inline in the
documented order and the whole run is reproducible byte-for-byte.
"""

from __future__ import annotations

import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dynamics import DynamicsParams, dynamics_regularizer_and_grads
from .fitting import extrapolate_control, fit_controls
from .optim import AdamOptimizer, ArrayBlock, PoseBlock
from .rendering import (
    NumericalError,
    RenderConfig,
    RgbdFrame,
    bundle_from_frames,
    draw_pixel_batch,
    total_loss,
    volume_loss_and_grads,
)
from .se3 import Pose, exp_so3, log_so3
from .spline import (
    ControlTrajectory,
    append_control_point,
    eval_pose,
    pose_control_jacobians,
)
from .voxelmap import VoxelMap


@dataclass(frozen=True)
class OptimSettings:
    """Learning rates and per-phase iteration counts.

    Tracking gets its own pose rate: per-frame motion at video rate exceeds
    what iters_tracking adaptive steps of lr_pose can cover, while bundle
    adjustment wants the gentler rate for stability.
    """

    lr_pose: float = 2e-3
    lr_tracking: float = 5e-3
    lr_map: float = 1e-2
    iters_tracking: int = 30
    iters_lba_init: int = 20
    iters_lba_joint: int = 20
    iters_gba: int = 10
    iters_first_map: int = 400
    seed: int = 0


@dataclass(frozen=True)
class PipelineConfig:
    """Pipeline-level knobs; see OptimSettings / RenderConfig for the rest."""

    dt: float = 0.3
    window: int = 5
    fps: float = 30.0
    keyframe_every: int = 5
    mode: str = "spline"              # or "baseline" (per-frame poses only)
    deterministic: bool = True
    pixels_tracking: int = 768
    pixels_lba: int = 384
    pixels_gba: int = 512
    pose_jitter_trans: float = 0.0    # injected after tracking, meters
    pose_jitter_rot: float = 0.0      # radians
    dynamics_enabled: bool = True
    velocity_damping: float = 0.7     # fraction of the last relative motion
                                      # extrapolated by the motion model; < 1
                                      # keeps tracking-noise doubling bounded

    def __post_init__(self):
        if self.mode not in ("spline", "baseline"):
            raise ValueError(f"mode must be 'spline' or 'baseline', got {self.mode!r}")
        if not self.dt > 1.0 / self.fps:
            raise ValueError(f"dt={self.dt} must exceed the frame period "
                             f"{1.0 / self.fps}")
        if self.window < 4:
            raise ValueError("sliding window needs at least 4 control points")


# rng purpose codes, combined with the run seed and call-site indices
_RNG_TRACK, _RNG_LBA, _RNG_JOINT, _RNG_GBA, _RNG_JITTER, _RNG_FIRST, _RNG_KF = range(7)
_STAGE_CODE = {"lba_refine": _RNG_LBA, "lba_joint": _RNG_JOINT, "gba": _RNG_GBA}


def control_gradients_from_pose_grads(traj: ControlTrajectory, times,
                                      pose_grads: np.ndarray) -> np.ndarray:
    """Chain per-pose right-tangent gradients back to all control tangents."""
    out = np.zeros((traj.grid.count, 6))
    for t, g in zip(times, pose_grads):
        first, lam, j_rot = pose_control_jacobians(traj, t)
        for k in range(4):
            out[first + k, :3] += j_rot[k].T @ g[:3]
            out[first + k, 3:] += lam[k] * g[3:]
    return out


class KeyframeCache:
    """Deterministic full-coverage pixel cache: a fixed permutation of the
    image, served in rotating chunks."""

    def __init__(self, height: int, width: int, rng: np.random.Generator):
        flat = rng.permutation(height * width)
        self.pixels = np.stack([flat // width, flat % width], axis=1)

    def take(self, count: int, salt: int) -> np.ndarray:
        n = len(self.pixels)
        count = min(count, n)
        start = (salt * count) % n
        idx = (start + np.arange(count)) % n
        return self.pixels[idx]


@dataclass
class RunResult:
    times: np.ndarray
    poses: list
    control_trajectory: ControlTrajectory | None
    map: VoxelMap
    discrete_poses: list
    loss_log: list
    flags: list


class SlamSystem:
    """Incremental tracking + mapping over an RGB-D stream."""

    def __init__(self, voxel_map: VoxelMap, pipeline: PipelineConfig,
                 render: RenderConfig, optim: OptimSettings,
                 dynamics: DynamicsParams):
        self.cfg = pipeline
        self.render_cfg = render
        self.optim_cfg = optim
        self.dynamics = dynamics
        self.seed = optim.seed

        self._map = voxel_map                    # master, owned by mapping
        self._published_map = voxel_map.copy()
        self._traj: ControlTrajectory | None = None
        self._published_traj: ControlTrajectory | None = None
        self._lock = threading.Lock()

        self.frames: list[RgbdFrame] = []
        self.tracked: list[Pose] = []
        self.flags: list[bool] = []
        self.keyframes: list[int] = []
        self._kf_cache: dict[int, KeyframeCache] = {}
        self.loss_log: list[dict] = []
        self._next_cycle = 0

        threads = int(os.environ.get("TSSLAM_THREADS", "2"))
        self._inline = pipeline.deterministic or threads <= 1
        self._executor = None if self._inline else ThreadPoolExecutor(max_workers=1)
        self._pending = []

    def _rng(self, purpose: int, a: int = 0, b: int = 0) -> np.random.Generator:
        return np.random.default_rng([self.seed, purpose, a, b])

    # -- snapshot exchange between the two logical tasks ----------------------

    def _publish(self):
        with self._lock:
            self._published_map = self._map.copy()
            self._published_traj = self._traj

    def _snapshot(self):
        with self._lock:
            return self._published_map, self._published_traj

    # -- frame intake ----------------------------------------------------------

    def _interval_of(self, t: float) -> int:
        return int(np.floor(t / self.cfg.dt + 1e-9))

    def process_frame(self, frame: RgbdFrame) -> Pose:
        idx = len(self.frames)
        self.frames.append(frame)
        if idx == 0:
            pose = Pose.identity()   # anchors the world frame
            self._train_first_map(frame)
            ok = True
        else:
            pose, ok = self._track(idx, frame)
        pose = self._apply_jitter(pose, idx)
        with self._lock:
            self.tracked.append(pose)
            self.flags.append(ok)
        if idx % self.cfg.keyframe_every == 0:
            self.keyframes.append(idx)
            self._kf_cache[idx] = KeyframeCache(
                frame.intrinsics.height, frame.intrinsics.width,
                self._rng(_RNG_KF, idx))
        interval = self._interval_of(frame.timestamp)
        while self._next_cycle < interval:
            self._schedule_cycle(self._next_cycle)
            self._next_cycle += 1
        return pose

    def finalize(self) -> RunResult:
        if self.frames:
            last = self._interval_of(self.frames[-1].timestamp)
            while self._next_cycle <= last:
                self._schedule_cycle(self._next_cycle)
                self._next_cycle += 1
        self._drain()
        if self._executor is not None:
            self._executor.shutdown(wait=True)
        self._final_refinement()
        times = np.array([f.timestamp for f in self.frames])
        if self.cfg.mode == "spline" and self._traj is not None:
            poses = [eval_pose(self._traj, t) for t in times]
        else:
            poses = list(self.tracked)
        return RunResult(times=times, poses=poses,
                         control_trajectory=self._traj, map=self._map,
                         discrete_poses=list(self.tracked),
                         loss_log=self.loss_log, flags=list(self.flags))

    def _final_refinement(self):
        """One extra local-BA pass over the closing window.

        The last interval's controls have seen a single refinement pass when
        the stream ends; consolidating them once more removes the fit noise
        spike that otherwise sits at the trajectory tail."""
        if not self.frames:
            return
        m = self._interval_of(self.frames[-1].timestamp)
        window_lo = max(0, m - self.cfg.window + 1)
        window_ids = self._frames_in_intervals(window_lo, m)
        if self.cfg.mode == "spline" and self._traj is not None and window_ids:
            window_interval = self._clip_to_domain(
                window_lo * self.cfg.dt, (m + 1) * self.cfg.dt)
            self._local_ba(m + 1000, window_ids, window_interval)
        elif self.cfg.mode == "baseline" and window_ids:
            self._local_ba(m + 1000, window_ids, None)
        self._publish()

    def _schedule_cycle(self, m: int):
        if self._inline:
            self._mapping_cycle(m)
        else:
            self._pending.append(self._executor.submit(self._mapping_cycle, m))

    def _drain(self):
        for fut in self._pending:
            fut.result()
        self._pending = []

    # -- tracking ----------------------------------------------------------------

    def _motion_model(self, idx: int) -> Pose:
        """Constant-velocity initialization for frame idx.

        Velocity comes from the raw tracked chain (internally consistent);
        the absolute base is re-anchored on the latest published spline
        correction so mapping-cycle corrections feed back into tracking
        without mutating history or mixing representations in the velocity
        difference.
        """
        with self._lock:
            raw = list(self.tracked[:idx])
        if idx == 1:
            prev = raw[0]
            velocity = Pose.identity()
        else:
            prev, prev2 = raw[idx - 1], raw[idx - 2]
            rel = prev2.inverse().compose(prev)
            beta = self.cfg.velocity_damping
            velocity = Pose(exp_so3(beta * log_so3(rel.rotation)),
                            beta * rel.translation)
        _, traj = self._snapshot()
        base = prev
        if traj is not None and self.cfg.mode == "spline":
            lo, hi = traj.grid.domain
            anchor = None
            for j in range(idx - 1, -1, -1):
                t_j = self.frames[j].timestamp
                if lo <= t_j < hi:
                    anchor = j
                    break
            if anchor is not None:
                # corrected pose at the anchor, raw relative chain after it
                base = eval_pose(traj, self.frames[anchor].timestamp).compose(
                    raw[anchor].inverse().compose(prev))
        return base.compose(velocity)

    def _apply_jitter(self, pose: Pose, idx: int) -> Pose:
        st, sr = self.cfg.pose_jitter_trans, self.cfg.pose_jitter_rot
        if st <= 0.0 and sr <= 0.0:
            return pose
        rng = self._rng(_RNG_JITTER, idx)
        delta = np.concatenate([sr * rng.standard_normal(3),
                                st * rng.standard_normal(3)])
        return pose.retract(delta)

    def _track(self, idx: int, frame: RgbdFrame) -> tuple[Pose, bool]:
        init = self._motion_model(idx)
        map_snapshot, _ = self._snapshot()
        block = PoseBlock(init.rotation[None], init.translation[None],
                          self.optim_cfg.lr_tracking)
        opt = AdamOptimizer({"pose": block})
        h, w = frame.intrinsics.height, frame.intrinsics.width
        best = (np.inf, init)
        try:
            for it in range(self.optim_cfg.iters_tracking):
                rng = self._rng(_RNG_TRACK, idx, it)
                batch = draw_pixel_batch(h, w, self.cfg.pixels_tracking, rng)
                bundle = bundle_from_frames([frame], [batch])
                parts, grads = volume_loss_and_grads(
                    map_snapshot, block.rotations, block.translations, bundle,
                    self.render_cfg, rng=rng, want_pose_grads=True)
                loss = total_loss(parts, self.render_cfg).total
                if loss < best[0]:
                    best = (loss, Pose(block.rotations[0], block.translations[0]))
                opt.step({"pose": grads["pose"]})
        except NumericalError:
            with self._lock:
                return self.tracked[idx - 1], False
        return best[1], True

    def _train_first_map(self, frame: RgbdFrame):
        map_blocks = self._map_blocks()
        opt = AdamOptimizer(map_blocks)
        h, w = frame.intrinsics.height, frame.intrinsics.width
        pose = Pose.identity()
        for it in range(self.optim_cfg.iters_first_map):
            rng = self._rng(_RNG_FIRST, it)
            batch = draw_pixel_batch(h, w, self.cfg.pixels_lba, rng)
            bundle = bundle_from_frames([frame], [batch])
            _, grads = volume_loss_and_grads(
                self._map, pose.rotation[None], pose.translation[None], bundle,
                self.render_cfg, rng=rng, want_map_grads=True)
            opt.step({"sdf": grads["map_sdf"], "rgb": grads["map_rgb"]})
        self._publish()

    # -- mapping -------------------------------------------------------------------

    def _frames_in_intervals(self, lo: int, hi: int) -> list[int]:
        return [i for i, f in enumerate(self.frames)
                if lo <= self._interval_of(f.timestamp) <= hi]

    def _batches_for(self, frame_ids, n_pixels, rng, use_kf_cache, salt):
        if use_kf_cache:
            return [self._kf_cache[i].take(n_pixels, salt) for i in frame_ids]
        return [draw_pixel_batch(self.frames[i].intrinsics.height,
                                 self.frames[i].intrinsics.width,
                                 n_pixels, rng) for i in frame_ids]

    def _map_blocks(self) -> dict:
        """Wrap the master map's arrays as optimizer blocks (aliased in place)."""
        sdf_block = ArrayBlock(self._map.sdf, self.optim_cfg.lr_map)
        rgb_block = ArrayBlock(self._map.rgb, self.optim_cfg.lr_map)
        self._map.sdf = sdf_block.values
        self._map.rgb = rgb_block.values
        return {"sdf": sdf_block, "rgb": rgb_block}

    def _log(self, cycle: int, stage: str, parts: dict, dynamics: float):
        loss = total_loss(parts, self.render_cfg, dynamics)
        self.loss_log.append({
            "cycle": cycle, "stage": stage, "rgb": loss.rgb,
            "depth": loss.depth, "sdf": loss.sdf, "free_space": loss.free_space,
            "dynamics": loss.dynamics, "total": loss.total,
        })

    def _log_aborted(self, cycle: int, stage: str):
        self.loss_log.append({"cycle": cycle, "stage": stage + "_aborted",
                              "rgb": np.nan, "depth": np.nan, "sdf": np.nan,
                              "free_space": np.nan, "dynamics": np.nan,
                              "total": np.nan})

    def _mapping_cycle(self, m: int):
        frame_ids = self._frames_in_intervals(m, m)
        if self.cfg.mode == "spline":
            self._init_controls(m, frame_ids)
        window_lo = max(0, m - self.cfg.window + 1)
        window_ids = self._frames_in_intervals(window_lo, m)
        if window_ids:
            window_interval = self._clip_to_domain(
                window_lo * self.cfg.dt, (m + 1) * self.cfg.dt)
            self._local_ba(m, window_ids, window_interval)
            self._global_ba(m, window_lo)
        self._publish()

    def _clip_to_domain(self, t_a: float, t_b: float):
        """Clip an interval to the spline domain (rounding can overshoot 1 ulp)."""
        if self._traj is None:
            return None
        lo, hi = self._traj.grid.domain
        t_a, t_b = max(t_a, lo), min(t_b, hi)
        return (t_a, t_b) if t_a < t_b else None

    def _init_controls(self, m: int, frame_ids: list[int]):
        """Curve approximation: initialize the newly added control point (all
        four on the first cycle) from tracked discrete poses.

        The newest control is only weakly observed by its own interval (its
        basis weight there peaks at 1/6), so fitting it alone lets each new
        control compensate the previous edge errors and the extrapolation
        degrades geometrically. The fit therefore re-estimates the trailing
        three controls against the last three intervals' tracked poses, which
        observe them strongly."""
        iters = self.optim_cfg.iters_lba_init
        if self._traj is None:
            with self._lock:
                times = [self.frames[i].timestamp for i in frame_ids]
                poses = [self.tracked[i] for i in frame_ids]
            knots = -self.cfg.dt + self.cfg.dt * np.arange(4)
            init = []
            for tk in knots:
                nearest = int(np.argmin(np.abs(np.array(times) - tk))) if times else 0
                init.append(poses[nearest] if poses else Pose.identity())
            traj = ControlTrajectory.from_poses(-self.cfg.dt, self.cfg.dt, init)
            if times:
                traj = fit_controls(traj, times, poses, range(4), iters=iters,
                                    prior_weight=1.0)
            self._traj = traj
            return
        traj = append_control_point(self._traj, extrapolate_control(self._traj))
        fit_ids = self._frames_in_intervals(max(0, m - 2), m)
        with self._lock:
            times = [self.frames[i].timestamp for i in fit_ids]
            poses = [self.tracked[i] for i in fit_ids]
        if times:
            count = traj.grid.count
            opt = [c for c in range(max(1, count - 3), count)]
            traj = fit_controls(traj, times, poses, opt,
                                iters=iters, prior_weight=1.0)
        # no tracked poses at all: keep the extrapolated control
        self._traj = traj

    def _local_ba(self, m: int, window_ids: list[int], window_interval):
        kf_ids = [i for i in window_ids if i in self.keyframes]
        if self.cfg.mode == "spline":
            count = self._traj.grid.count
            # control 0 stays fixed: it pins the world gauge (frame 0 =
            # identity); otherwise joint map+control steps can float the
            # whole reconstruction rigidly
            opt_indices = list(range(max(1, count - self.cfg.window), count))
            self._spline_stage(m, "lba_refine", opt_indices, window_ids,
                               self.cfg.pixels_lba, window_interval,
                               self.optim_cfg.iters_lba_joint, joint=False)
            if kf_ids:
                self._spline_stage(m, "lba_joint", opt_indices, kf_ids,
                                   self.cfg.pixels_lba, window_interval,
                                   self.optim_cfg.iters_lba_joint, joint=True)
        else:
            self._baseline_stage(m, "lba_refine", window_ids, self.cfg.pixels_lba,
                                 self.optim_cfg.iters_lba_joint, joint=False)
            if kf_ids:
                self._baseline_stage(m, "lba_joint", kf_ids, self.cfg.pixels_lba,
                                     self.optim_cfg.iters_lba_joint, joint=True)

    def _control_support(self, c: int) -> tuple[float, float]:
        knot = self._traj.grid.knot_time(c)
        return knot - 2 * self.cfg.dt, knot + 2 * self.cfg.dt

    def _gba_control_indices(self, window_start: float, outside_kfs) -> list[int]:
        """Controls whose support covers an outside keyframe but stays clear
        of the window's time range (in-window poses must not move)."""
        out = []
        for c in range(1, self._traj.grid.count):   # control 0 pins the gauge
            lo, hi = self._control_support(c)
            if hi > window_start:
                continue
            if any(lo <= self.frames[i].timestamp < hi for i in outside_kfs):
                out.append(c)
        return out

    def _global_ba(self, m: int, window_lo: int):
        window_start = window_lo * self.cfg.dt
        outside_kfs = [i for i in self.keyframes
                       if self.frames[i].timestamp < window_start]
        if not outside_kfs:
            return
        if self.cfg.mode == "spline":
            opt_indices = self._gba_control_indices(window_start, outside_kfs)
            dr_interval = None
            if self.cfg.dynamics_enabled:
                dr_interval = self._clip_to_domain(
                    self._traj.grid.domain[0], window_start)
            self._spline_stage(m, "gba", opt_indices, outside_kfs,
                               self.cfg.pixels_gba, dr_interval,
                               self.optim_cfg.iters_gba, joint=True,
                               use_kf_cache=True)
        else:
            self._baseline_stage(m, "gba", outside_kfs, self.cfg.pixels_gba,
                                 self.optim_cfg.iters_gba, joint=True,
                                 use_kf_cache=True)

    def _spline_stage(self, m: int, stage: str, opt_indices, frame_ids,
                      n_pixels, dr_interval, iters, joint: bool,
                      use_kf_cache: bool = False):
        if not frame_ids or iters <= 0:
            return
        opt_indices = list(opt_indices)
        traj_backup = self._traj
        map_backup = (self._map.sdf.copy(), self._map.rgb.copy())
        try:
            blocks = {}
            map_blocks = self._map_blocks() if joint else None
            if map_blocks:
                blocks.update(map_blocks)
            ctrl_block = None
            if opt_indices:
                ctrl_block = PoseBlock(self._traj.rotations[opt_indices],
                                       self._traj.translations[opt_indices],
                                       self.optim_cfg.lr_pose)
                blocks["controls"] = ctrl_block
            if not blocks:
                return
            opt = AdamOptimizer(blocks)
            parts = None
            dyn_value = 0.0
            for it in range(iters):
                rng = self._rng(_STAGE_CODE[stage], m, it)
                traj = self._traj
                if ctrl_block is not None:
                    rots = np.array(traj.rotations)
                    trans = np.array(traj.translations)
                    rots[opt_indices] = ctrl_block.rotations
                    trans[opt_indices] = ctrl_block.translations
                    traj = traj.with_controls(rots, trans)
                frames = [self.frames[i] for i in frame_ids]
                times = [f.timestamp for f in frames]
                poses = [eval_pose(traj, t) for t in times]
                batches = self._batches_for(frame_ids, n_pixels, rng,
                                            use_kf_cache, m * 1000 + it)
                bundle = bundle_from_frames(frames, batches)
                parts, grads = volume_loss_and_grads(
                    self._map, np.stack([p.rotation for p in poses]),
                    np.stack([p.translation for p in poses]), bundle,
                    self.render_cfg, rng=rng,
                    want_pose_grads=ctrl_block is not None,
                    want_map_grads=map_blocks is not None)
                step_grads = {}
                if ctrl_block is not None:
                    ctrl_grads = control_gradients_from_pose_grads(
                        traj, times, grads["pose"])
                    dyn_value = 0.0
                    if self.cfg.dynamics_enabled and dr_interval is not None:
                        dyn_value, dyn_grads = dynamics_regularizer_and_grads(
                            traj, dr_interval, self.dynamics)
                        ctrl_grads = ctrl_grads + dyn_grads
                    step_grads["controls"] = ctrl_grads[opt_indices]
                if map_blocks is not None:
                    step_grads["sdf"] = grads["map_sdf"]
                    step_grads["rgb"] = grads["map_rgb"]
                opt.step(step_grads)
                self._traj = traj
            if parts is not None:
                self._log(m, stage, parts, dyn_value)
        except NumericalError:
            self._traj = traj_backup
            self._map.sdf, self._map.rgb = map_backup
            self._log_aborted(m, stage)

    def _baseline_stage(self, m: int, stage: str, frame_ids, n_pixels, iters,
                        joint: bool, use_kf_cache: bool = False):
        if not frame_ids or iters <= 0:
            return
        with self._lock:
            pose_backup = [self.tracked[i] for i in frame_ids]
        map_backup = (self._map.sdf.copy(), self._map.rgb.copy())
        try:
            block = PoseBlock(
                np.stack([p.rotation for p in pose_backup]),
                np.stack([p.translation for p in pose_backup]),
                self.optim_cfg.lr_pose)
            blocks = {"poses": block}
            map_blocks = self._map_blocks() if joint else None
            if map_blocks:
                blocks.update(map_blocks)
            opt = AdamOptimizer(blocks)
            frames = [self.frames[i] for i in frame_ids]
            parts = None
            for it in range(iters):
                rng = self._rng(_STAGE_CODE[stage], m, it)
                batches = self._batches_for(frame_ids, n_pixels, rng,
                                            use_kf_cache, m * 1000 + it)
                bundle = bundle_from_frames(frames, batches)
                parts, grads = volume_loss_and_grads(
                    self._map, block.rotations, block.translations, bundle,
                    self.render_cfg, rng=rng, want_pose_grads=True,
                    want_map_grads=map_blocks is not None)
                pose_grads = grads["pose"]
                for row, i in enumerate(frame_ids):
                    if i == 0:   # frame 0 pins the gauge
                        pose_grads[row] = 0.0
                step_grads = {"poses": pose_grads}
                if map_blocks is not None:
                    step_grads["sdf"] = grads["map_sdf"]
                    step_grads["rgb"] = grads["map_rgb"]
                opt.step(step_grads)
            with self._lock:
                for row, i in enumerate(frame_ids):
                    self.tracked[i] = Pose(block.rotations[row],
                                           block.translations[row])
            if parts is not None:
                self._log(m, stage, parts, 0.0)
        except NumericalError:
            with self._lock:
                for pose, i in zip(pose_backup, frame_ids):
                    self.tracked[i] = pose
            self._map.sdf, self._map.rgb = map_backup
            self._log_aborted(m, stage)


def run_sequence(frames, voxel_map: VoxelMap, pipeline: PipelineConfig,
                 render: RenderConfig, optim: OptimSettings,
                 dynamics: DynamicsParams) -> RunResult:
    """Feed a timestamp-ordered frame sequence through a fresh SlamSystem."""
    times = [f.timestamp for f in frames]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("frames must be strictly timestamp-ordered")
    system = SlamSystem(voxel_map, pipeline, render, optim, dynamics)
    for frame in frames:
        system.process_frame(frame)
    return system.finalize()
