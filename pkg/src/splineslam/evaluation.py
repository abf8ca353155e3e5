"""Trajectory alignment and error metrics: Horn alignment, ATE RMSE,
RPE RMSE at a fixed frame interval, and kinematic smoothness statistics.

All error values are reported in centimeters (rotational RPE in degrees is
computed as a side statistic but is not part of any acceptance threshold).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .se3 import Pose
from .spline import ControlTrajectory, eval_angular_rates, eval_linear_kinematics


@dataclass(frozen=True)
class TimedTrajectory:
    """Ordered (timestamp, pose) pairs with strictly increasing timestamps."""

    times: np.ndarray
    poses: tuple

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if np.any(np.diff(times) <= 0.0):
            raise ValueError("timestamps must be strictly increasing")
        times.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "poses", tuple(self.poses))
        if len(self.poses) != len(times):
            raise ValueError("times and poses must have equal length")

    def __len__(self):
        return len(self.times)

    def translations(self) -> np.ndarray:
        return np.stack([p.translation for p in self.poses])

    @staticmethod
    def from_arrays(times, rotations, translations) -> "TimedTrajectory":
        poses = tuple(Pose(r, t) for r, t in zip(rotations, translations))
        return TimedTrajectory(np.asarray(times, dtype=float), poses)


def associate(est: TimedTrajectory, gt: TimedTrajectory,
              max_dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Greedy nearest-timestamp association within max_dt, one-to-one."""
    pairs = []
    for i, t in enumerate(est.times):
        j = int(np.argmin(np.abs(gt.times - t)))
        diff = abs(gt.times[j] - t)
        if diff <= max_dt:
            pairs.append((diff, i, j))
    pairs.sort()
    used_i, used_j = set(), set()
    matches = []
    for _, i, j in pairs:
        if i in used_i or j in used_j:
            continue
        used_i.add(i)
        used_j.add(j)
        matches.append((i, j))
    matches.sort()
    if not matches:
        return np.empty(0, dtype=int), np.empty(0, dtype=int)
    idx = np.array(matches, dtype=int)
    return idx[:, 0], idx[:, 1]


def horn_align(est: TimedTrajectory, gt: TimedTrajectory,
               max_dt: float = 0.01) -> Pose:
    """Closed-form least-squares rigid alignment of the translation tracks.

    Returns the transform g minimizing sum || g(est_i) - gt_i ||^2 over
    associated pairs (scale fixed to 1). Requires at least three
    non-collinear pairs.
    """
    ei, gi = associate(est, gt, max_dt)
    if len(ei) < 3:
        raise ValueError(f"need at least 3 associated pairs, got {len(ei)}")
    p_est = est.translations()[ei]
    p_gt = gt.translations()[gi]
    mu_est = p_est.mean(axis=0)
    mu_gt = p_gt.mean(axis=0)
    a = p_est - mu_est
    b = p_gt - mu_gt
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1e-12):
        raise ValueError("degenerate (collinear) trajectory: alignment is not unique")
    cov = a.T @ b
    u, _, vt = np.linalg.svd(cov)
    sign = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, sign]) @ u.T
    trans = mu_gt - rot @ mu_est
    return Pose(rot, trans)


def ate_rmse(est: TimedTrajectory, gt: TimedTrajectory,
             max_dt: float = 0.01) -> float:
    """Absolute trajectory error in cm: translation RMSE after Horn alignment."""
    ei, gi = associate(est, gt, max_dt)
    if len(ei) == 0:
        raise ValueError("no associated pose pairs")
    align = horn_align(est, gt, max_dt)
    residual = est.translations()[ei] @ align.rotation.T + align.translation \
        - gt.translations()[gi]
    return 100.0 * float(np.sqrt((residual ** 2).sum(axis=1).mean()))


def rpe_stats(est: TimedTrajectory, gt: TimedTrajectory, interval: int = 1,
              max_dt: float = 0.01) -> dict:
    """Relative pose error over a fixed frame interval.

    Translational RMSE in cm plus a rotational RMSE in degrees (logged only).
    No pre-alignment: the relative measure is invariant to rigid transforms.
    """
    if interval < 1:
        raise ValueError("interval must be at least 1 frame")
    ei, gi = associate(est, gt, max_dt)
    if len(ei) < interval + 1:
        raise ValueError(f"need at least {interval + 1} associated frames")
    trans_sq = []
    rot_sq = []
    for k in range(len(ei) - interval):
        p_rel = est.poses[ei[k]].inverse().compose(est.poses[ei[k + interval]])
        q_rel = gt.poses[gi[k]].inverse().compose(gt.poses[gi[k + interval]])
        err = q_rel.inverse().compose(p_rel)
        trans_sq.append(float(err.translation @ err.translation))
        angle = np.arccos(np.clip(0.5 * (np.trace(err.rotation) - 1.0), -1.0, 1.0))
        rot_sq.append(float(angle) ** 2)
    return {
        "rpe_trans_cm": 100.0 * float(np.sqrt(np.mean(trans_sq))),
        "rpe_rot_deg": float(np.degrees(np.sqrt(np.mean(rot_sq)))),
        "interval": interval,
        "pairs": len(trans_sq),
    }


def rpe_rmse(est: TimedTrajectory, gt: TimedTrajectory, interval: int = 1,
             max_dt: float = 0.01) -> float:
    """Translational RPE RMSE in cm (the reported metric)."""
    return rpe_stats(est, gt, interval, max_dt)["rpe_trans_cm"]


def smoothness_report(traj: ControlTrajectory, domain=None,
                      samples: int = 1000) -> dict:
    """Max/mean kinematic magnitudes over a dense deterministic sampling."""
    lo, hi = traj.grid.domain if domain is None else domain
    d_lo, d_hi = traj.grid.domain
    if lo < d_lo or hi > d_hi:
        raise ValueError(f"domain [{lo}, {hi}) outside valid [{d_lo}, {d_hi})")
    ts = lo + (np.arange(samples) + 0.5) * (hi - lo) / samples
    vel = np.empty(samples)
    acc = np.empty(samples)
    omega = np.empty(samples)
    omega_dot = np.empty(samples)
    for i, t in enumerate(ts):
        v, a = eval_linear_kinematics(traj, t)
        w, wd = eval_angular_rates(traj, t)
        vel[i] = np.linalg.norm(v)
        acc[i] = np.linalg.norm(a)
        omega[i] = np.linalg.norm(w)
        omega_dot[i] = np.linalg.norm(wd)
    return {
        "max_velocity": float(vel.max()),
        "mean_velocity": float(vel.mean()),
        "max_acceleration": float(acc.max()),
        "mean_acceleration": float(acc.mean()),
        "max_angular_velocity": float(omega.max()),
        "mean_angular_velocity": float(omega.mean()),
        "max_angular_acceleration": float(omega_dot.max()),
        "mean_angular_acceleration": float(omega_dot.mean()),
        "samples": samples,
    }


@dataclass
class TrajectoryReport:
    """Evaluation output: aligned error statistics plus optional kinematics."""

    ate_rmse_cm: float
    rpe_rmse_cm: float
    rpe_interval: int
    rpe_rot_deg: float
    n_associated: int
    alignment_quat_xyzw: list
    alignment_translation: list
    kinematics: dict | None = None

    def to_dict(self) -> dict:
        out = {
            "ate_rmse_cm": self.ate_rmse_cm,
            "rpe_rmse_cm": self.rpe_rmse_cm,
            "rpe_interval": self.rpe_interval,
            "rpe_rot_deg": self.rpe_rot_deg,
            "n_associated": self.n_associated,
            "alignment": {
                "quat_xyzw": self.alignment_quat_xyzw,
                "translation": self.alignment_translation,
            },
        }
        if self.kinematics is not None:
            out["kinematics"] = self.kinematics
        return out

    def table(self) -> str:
        rows = [
            ("ATE RMSE (cm)", f"{self.ate_rmse_cm:.4f}"),
            (f"RPE RMSE (cm) @ {self.rpe_interval}", f"{self.rpe_rmse_cm:.4f}"),
            ("RPE rot (deg)", f"{self.rpe_rot_deg:.4f}"),
            ("associated pairs", str(self.n_associated)),
        ]
        if self.kinematics:
            rows.append(("max |a| (m/s^2)",
                         f"{self.kinematics['max_acceleration']:.4f}"))
            rows.append(("max |w_dot| (rad/s^2)",
                         f"{self.kinematics['max_angular_acceleration']:.4f}"))
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name.ljust(width)}  {value}" for name, value in rows)


def evaluate_trajectories(est: TimedTrajectory, gt: TimedTrajectory,
                          interval: int = 1, max_dt: float = 0.01,
                          control_traj: ControlTrajectory | None = None) -> TrajectoryReport:
    """Full report: Horn-aligned ATE, RPE, and spline kinematics if available."""
    align = horn_align(est, gt, max_dt)
    ate = ate_rmse(est, gt, max_dt)
    rpe = rpe_stats(est, gt, interval, max_dt)
    ei, _ = associate(est, gt, max_dt)
    kinematics = None
    if control_traj is not None:
        kinematics = smoothness_report(control_traj)
    return TrajectoryReport(
        ate_rmse_cm=ate,
        rpe_rmse_cm=rpe["rpe_trans_cm"],
        rpe_interval=interval,
        rpe_rot_deg=rpe["rpe_rot_deg"],
        n_associated=len(ei),
        alignment_quat_xyzw=[float(x) for x in align.quat()],
        alignment_translation=[float(x) for x in align.translation],
        kinematics=kinematics,
    )
