"""Curve approximation: fit selected spline control points to discrete poses.

The objective is a sum of residual norms, one rotational and one translational
term per pose: || log(R_k^-1 Rhat(t_k)) || + || t_k - that(t_k) ||. It is
minimized by iteratively reweighted, damped Gauss-Newton; the rotation and
translation subproblems decouple because the cumulative spline interpolates
them separately.
"""

from __future__ import annotations

import numpy as np

from .se3 import Pose, exp_so3, log_so3, right_jacobian_inv
from .spline import ControlTrajectory, eval_pose, pose_control_jacobians

IRLS_FLOOR = 1e-6


def fit_residuals(traj: ControlTrajectory, times, poses) -> tuple[np.ndarray, np.ndarray]:
    """Per-pose (rotation residual norms (rad), translation residual norms (m))."""
    rot_norms, trans_norms = [], []
    for t, pose in zip(times, poses):
        est = eval_pose(traj, t)
        rot_norms.append(np.linalg.norm(log_so3(pose.rotation.T @ est.rotation)))
        trans_norms.append(np.linalg.norm(pose.translation - est.translation))
    return np.array(rot_norms), np.array(trans_norms)


def fit_controls(traj: ControlTrajectory, times, poses, opt_indices,
                 iters: int = 20, damping: float = 1e-8,
                 prior_weight: float = 0.0,
                 tol: float = 1e-12) -> ControlTrajectory:
    """Optimize the listed control indices to approximate the given poses.

    times must lie in the trajectory's valid domain; all other control points
    are held fixed. A control point's basis weight at the newest interval
    peaks at 1/6, so the normal equations can be badly conditioned along the
    weakly observed directions; prior_weight > 0 adds a pull toward each
    control's value at call time that takes over exactly there while the
    data dominates the well-observed directions. Returns the refitted
    trajectory.
    """
    times = list(times)
    poses = list(poses)
    if len(times) == 0:
        raise ValueError("curve approximation needs at least one pose")
    opt_indices = sorted(set(int(i) for i in opt_indices))
    col_of = {c: 6 * j for j, c in enumerate(opt_indices)}
    n_cols = 6 * len(opt_indices)
    rotations = np.array(traj.rotations)
    translations = np.array(traj.translations)
    prior_rot = rotations.copy()
    prior_trans = translations.copy()

    for _ in range(iters):
        work = traj.with_controls(rotations, translations)
        rows = []
        jacs = []
        for t, pose in zip(times, poses):
            first, lam, j_rot = pose_control_jacobians(work, t)
            est = eval_pose(work, t)
            e_rot = log_so3(pose.rotation.T @ est.rotation)
            e_trans = est.translation - pose.translation
            # IRLS weights turn the sum-of-norms objective into weighted LS
            w_rot = 1.0 / np.sqrt(max(np.linalg.norm(e_rot), IRLS_FLOOR))
            w_trans = 1.0 / np.sqrt(max(np.linalg.norm(e_trans), IRLS_FLOOR))
            jr_inv = right_jacobian_inv(e_rot)
            j_rot_row = np.zeros((3, n_cols))
            j_trans_row = np.zeros((3, n_cols))
            for k in range(4):
                c = first + k
                if c not in col_of:
                    continue
                col = col_of[c]
                j_rot_row[:, col:col + 3] = jr_inv @ j_rot[k]
                j_trans_row[:, col + 3:col + 6] = lam[k] * np.eye(3)
            rows.append(w_rot * e_rot)
            jacs.append(w_rot * j_rot_row)
            rows.append(w_trans * e_trans)
            jacs.append(w_trans * j_trans_row)
        residual = np.concatenate(rows)
        jac = np.concatenate(jacs, axis=0)
        hess = jac.T @ jac + (damping + prior_weight) * np.eye(n_cols)
        rhs = -jac.T @ residual
        if prior_weight > 0.0:
            for c in opt_indices:
                col = col_of[c]
                rhs[col:col + 3] += prior_weight * log_so3(
                    rotations[c].T @ prior_rot[c])
                rhs[col + 3:col + 6] += prior_weight * (
                    prior_trans[c] - translations[c])
        step = np.linalg.solve(hess, rhs)
        for c in opt_indices:
            col = col_of[c]
            delta = step[col:col + 6]
            if np.any(delta[:3]):
                rotations[c] = rotations[c] @ exp_so3(delta[:3])
            translations[c] += delta[3:]
        if np.linalg.norm(step) < tol:
            break
    return traj.with_controls(rotations, translations)


def fit_trajectory(times, poses, t0: float, dt: float, count: int,
                   iters: int = 30) -> ControlTrajectory:
    """Fit a fresh spline (all controls optimized) to a timed pose sequence.

    Controls are initialized from the nearest pose in time, then jointly
    refined. The valid domain [t0 + dt, t0 + (count-2) dt) must cover every
    input time.
    """
    times = np.asarray(times, dtype=float)
    knots = t0 + dt * np.arange(count)
    init = []
    for tk in knots:
        idx = int(np.argmin(np.abs(times - tk)))
        init.append(poses[idx])
    traj = ControlTrajectory.from_poses(t0, dt, init)
    lo, hi = traj.grid.domain
    if times.min() < lo or times.max() >= hi:
        raise ValueError(
            f"times span [{times.min()}, {times.max()}] but the spline domain "
            f"is [{lo}, {hi})")
    return fit_controls(traj, times, poses, range(count), iters=iters)


def extrapolate_control(traj: ControlTrajectory) -> Pose:
    """Constant-increment extrapolation of the control polygon's last step."""
    last = Pose(traj.rotations[-1], traj.translations[-1])
    prev = Pose(traj.rotations[-2], traj.translations[-2])
    return last.compose(prev.inverse().compose(last))
