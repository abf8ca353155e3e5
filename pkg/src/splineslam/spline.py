"""Uniform cubic B-spline trajectories in cumulative form.

The curve interpolates rotation and translation separately: translation is a
plain cumulative B-spline in R^3, rotation is a product of exponentials of
scaled difference vectors between consecutive control rotations. Everything
here is evaluated per query; nothing is cached across control-point updates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .se3 import (
    DegenerateRotationError,
    Pose,
    exp_so3,
    left_jacobian_inv,
    log_so3,
    right_jacobian,
    right_jacobian_inv,
    skew,
)

# Cumulative basis matrix for uniform cubic B-splines (De Boor-Cox recursion
# summed from the tail): B(u) = C @ [1, u, u^2, u^3]^T.
CUMULATIVE_C = np.array([
    [6.0, 0.0, 0.0, 0.0],
    [5.0, 3.0, -3.0, 1.0],
    [1.0, 3.0, 3.0, -2.0],
    [0.0, 0.0, 0.0, 1.0],
]) / 6.0

# Largest allowed angle between consecutive control rotations; keeps every
# difference vector d_j = log(R_k^-1 R_{k+1}) away from the log branch cut.
MAX_ADJACENT_ANGLE = np.pi - 1e-3


class DomainError(ValueError):
    """Query time outside the trajectory's valid evaluation interval."""


def cumulative_basis(u: float, order: int = 0, dt: float = 1.0) -> np.ndarray:
    """Cumulative basis 4-vector B(u), or its first/second time derivative.

    order 0 returns B(u); order 1 returns dB/dt (scaled by 1/dt); order 2
    returns d2B/dt2 (scaled by 1/dt^2). u must lie in [0, 1]; u == 1 is
    accepted only so continuity tests can compare segment endpoints.
    """
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"u must be in [0, 1], got {u}")
    if order == 0:
        mono = np.array([1.0, u, u * u, u ** 3])
        scale = 1.0
    elif order == 1:
        mono = np.array([0.0, 1.0, 2.0 * u, 3.0 * u * u])
        scale = 1.0 / dt
    elif order == 2:
        mono = np.array([0.0, 0.0, 2.0, 6.0 * u])
        scale = 1.0 / (dt * dt)
    else:
        raise ValueError(f"derivative order must be 0, 1 or 2, got {order}")
    return scale * (CUMULATIVE_C @ mono)


def translation_weights(u: float, order: int = 0, dt: float = 1.0) -> np.ndarray:
    """Per-control weights of the four window translations for the given order.

    Derived from the cumulative form: control j carries weight B_j - B_{j+1}
    (with B_0 = 1 and B_4 = 0), which recovers the ordinary B-spline basis.
    """
    basis = cumulative_basis(u, order, dt)
    return np.array([
        basis[0] - basis[1],
        basis[1] - basis[2],
        basis[2] - basis[3],
        basis[3],
    ])


@dataclass(frozen=True)
class KnotGrid:
    """Uniform knot layout: origin t0, spacing dt, number of control points."""

    t0: float
    dt: float
    count: int

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.count < 4:
            raise ValueError(f"need at least 4 control points, got {self.count}")

    @property
    def domain(self) -> tuple[float, float]:
        """Half-open interval of evaluable times [t0 + dt, t0 + (count-2) dt)."""
        return (self.t0 + self.dt, self.t0 + (self.count - 2) * self.dt)

    def knot_time(self, k: int) -> float:
        return self.t0 + k * self.dt


def segment_index(grid: KnotGrid, t: float) -> tuple[int, float]:
    """Segment index i and fraction u in [0, 1) for a query time.

    The window of segment i is the four control points i-1 .. i+2.
    """
    lo, hi = grid.domain
    if not lo <= t < hi:
        raise DomainError(
            f"t={t!r} outside valid evaluation domain [{lo!r}, {hi!r})")
    s = (t - grid.t0) / grid.dt
    i = int(np.floor(s))
    u = s - i
    # Floating-point roundoff at the upper domain edge can push i one past the
    # last valid segment; clamp back (u becomes 1 - eps of the prior segment).
    if i > grid.count - 3:
        i = grid.count - 3
        u = s - i
    return i, u


@dataclass(frozen=True)
class ControlTrajectory:
    """Knot grid plus ordered control poses, stored as stacked arrays."""

    grid: KnotGrid
    rotations: np.ndarray     # (count, 3, 3)
    translations: np.ndarray  # (count, 3)

    def __post_init__(self):
        rots = np.array(self.rotations, dtype=float)
        trans = np.array(self.translations, dtype=float)
        if rots.shape != (self.grid.count, 3, 3):
            raise ValueError(f"rotations shape {rots.shape} does not match "
                             f"count {self.grid.count}")
        if trans.shape != (self.grid.count, 3):
            raise ValueError(f"translations shape {trans.shape} does not match "
                             f"count {self.grid.count}")
        rots.flags.writeable = False
        trans.flags.writeable = False
        object.__setattr__(self, "rotations", rots)
        object.__setattr__(self, "translations", trans)

    @staticmethod
    def from_poses(t0: float, dt: float, poses: Sequence[Pose]) -> "ControlTrajectory":
        rots = np.stack([p.rotation for p in poses])
        trans = np.stack([p.translation for p in poses])
        traj = ControlTrajectory(KnotGrid(t0, dt, len(poses)), rots, trans)
        _check_adjacent_angles(traj.rotations)
        return traj

    def control_pose(self, k: int) -> Pose:
        return Pose(self.rotations[k], self.translations[k])

    def with_controls(self, rotations: np.ndarray, translations: np.ndarray) -> "ControlTrajectory":
        """Same grid, new control arrays (used by the optimizer every step)."""
        return ControlTrajectory(self.grid, rotations, translations)


def _check_adjacent_angles(rotations: np.ndarray) -> None:
    for k in range(len(rotations) - 1):
        rel = rotations[k].T @ rotations[k + 1]
        vee = 0.5 * np.array([rel[2, 1] - rel[1, 2],
                              rel[0, 2] - rel[2, 0],
                              rel[1, 0] - rel[0, 1]])
        angle = np.arctan2(np.linalg.norm(vee), 0.5 * (np.trace(rel) - 1.0))
        if angle >= MAX_ADJACENT_ANGLE:
            raise DegenerateRotationError(
                f"angle {angle:.6f} between control points {k} and {k + 1} "
                f"exceeds {MAX_ADJACENT_ANGLE:.6f}")


def _window(traj: ControlTrajectory, t: float):
    """Segment data for a query: (first control index, u, rotations, translations)."""
    i, u = segment_index(traj.grid, t)
    first = i - 1
    return first, u, traj.rotations[first:first + 4], traj.translations[first:first + 4]


def _difference_vectors(rot_window: np.ndarray) -> list[np.ndarray]:
    """d_j = log(R_{j-1}^-1 R_j) for j = 1..3 within a four-control window."""
    out = []
    for j in range(1, 4):
        d = log_so3(rot_window[j - 1].T @ rot_window[j])
        if np.linalg.norm(d) >= MAX_ADJACENT_ANGLE:
            raise DegenerateRotationError(
                f"adjacent control rotations {np.linalg.norm(d):.6f} rad apart")
        out.append(d)
    return out


def eval_pose(traj: ControlTrajectory, t: float) -> Pose:
    """Interpolated pose at time t (cumulative-form translation and rotation)."""
    _, u, rot_w, trans_w = _window(traj, t)
    basis = cumulative_basis(u, 0)
    translation = trans_w[0].copy()
    for j in range(1, 4):
        translation += basis[j] * (trans_w[j] - trans_w[j - 1])
    diffs = _difference_vectors(rot_w)
    rotation = rot_w[0]
    for j in range(1, 4):
        rotation = rotation @ exp_so3(basis[j] * diffs[j - 1])
    return Pose(rotation, translation)


def eval_linear_kinematics(traj: ControlTrajectory, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Translational velocity (m/s) and acceleration (m/s^2) at time t."""
    _, u, _, trans_w = _window(traj, t)
    db = cumulative_basis(u, 1, traj.grid.dt)
    ddb = cumulative_basis(u, 2, traj.grid.dt)
    vel = np.zeros(3)
    acc = np.zeros(3)
    for j in range(1, 4):
        step = trans_w[j] - trans_w[j - 1]
        vel += db[j] * step
        acc += ddb[j] * step
    return vel, acc


def eval_angular_rates(traj: ControlTrajectory, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Body-frame angular velocity (rad/s) and acceleration (rad/s^2) at time t.

    Recursive form over the three exponential factors A_j = exp(B_j d_j),
    starting from omega = omega_dot = 0 and folding one factor per step.
    """
    _, u, rot_w, _ = _window(traj, t)
    basis = cumulative_basis(u, 0)
    db = cumulative_basis(u, 1, traj.grid.dt)
    ddb = cumulative_basis(u, 2, traj.grid.dt)
    diffs = _difference_vectors(rot_w)
    omega = np.zeros(3)
    omega_dot = np.zeros(3)
    for j in range(1, 4):
        d = diffs[j - 1]
        a_t = exp_so3(basis[j] * d).T
        omega_new = a_t @ omega + db[j] * d
        omega_dot = db[j] * np.cross(omega_new, d) + a_t @ omega_dot + ddb[j] * d
        omega = omega_new
    return omega, omega_dot


@dataclass(frozen=True)
class Kinematics:
    """Sampled trajectory derivatives at one time."""

    velocity: np.ndarray
    acceleration: np.ndarray
    angular_velocity: np.ndarray
    angular_acceleration: np.ndarray


def eval_kinematics(traj: ControlTrajectory, t: float) -> Kinematics:
    vel, acc = eval_linear_kinematics(traj, t)
    omega, omega_dot = eval_angular_rates(traj, t)
    return Kinematics(vel, acc, omega, omega_dot)


def append_control_point(traj: ControlTrajectory, pose: Pose) -> ControlTrajectory:
    """New trajectory with one more control point; extends the domain by dt.

    All previously evaluable times return bit-identical poses (local support).
    """
    rel = traj.rotations[-1].T @ pose.rotation
    vee = 0.5 * np.array([rel[2, 1] - rel[1, 2],
                          rel[0, 2] - rel[2, 0],
                          rel[1, 0] - rel[0, 1]])
    angle = np.arctan2(np.linalg.norm(vee), 0.5 * (np.trace(rel) - 1.0))
    if angle >= MAX_ADJACENT_ANGLE:
        raise DegenerateRotationError(
            f"appended control {angle:.6f} rad from the last one")
    grid = KnotGrid(traj.grid.t0, traj.grid.dt, traj.grid.count + 1)
    rots = np.concatenate([traj.rotations, pose.rotation[None]], axis=0)
    trans = np.concatenate([traj.translations, pose.translation[None]], axis=0)
    return ControlTrajectory(grid, rots, trans)


# ---------------------------------------------------------------------------
# Control-point sensitivities (right-tangent convention throughout).
#
# Perturbing window control k by R_k <- R_k exp(eps) moves the interpolated
# rotation by R(t) <- R(t) exp(delta) with delta = J_k eps; the translation
# depends linearly on control translations with the order-0 weights.
# ---------------------------------------------------------------------------


def _difference_sensitivities(diffs: list[np.ndarray]) -> list[np.ndarray]:
    """S_d[j] (3x12): d(d_j) / d(stacked control tangents eps_0..eps_3)."""
    out = []
    for j in range(1, 4):
        d = diffs[j - 1]
        block = np.zeros((3, 12))
        block[:, 3 * (j - 1):3 * j] = -left_jacobian_inv(d)
        block[:, 3 * j:3 * (j + 1)] = right_jacobian_inv(d)
        out.append(block)
    return out


def pose_control_jacobians(traj: ControlTrajectory, t: float):
    """Jacobians of the interpolated pose w.r.t. its four window controls.

    Returns (first_index, lam, j_rot) where lam (4,) are the translation
    weights and j_rot (4, 3, 3) maps each control's rotation tangent to the
    interpolated pose's right tangent.
    """
    first, u, rot_w, _ = _window(traj, t)
    basis = cumulative_basis(u, 0)
    lam = translation_weights(u, 0)
    diffs = _difference_vectors(rot_w)
    sens = _difference_sensitivities(diffs)
    factors = [exp_so3(basis[j] * diffs[j - 1]) for j in range(1, 4)]
    # tails[j] = product of factors j..2 (everything right of factor j-1).
    tails = [np.eye(3)] * 4
    for j in range(2, -1, -1):
        tails[j] = factors[j] @ tails[j + 1]
    jac = np.zeros((3, 12))
    jac[:, 0:3] = tails[0].T    # direct perturbation of the leading control
    for j in range(1, 4):
        xi = basis[j] * right_jacobian(basis[j] * diffs[j - 1]) @ sens[j - 1]
        jac += tails[j].T @ xi
    j_rot = np.stack([jac[:, 3 * k:3 * (k + 1)] for k in range(4)])
    return first, lam, j_rot


def angular_rate_control_jacobians(traj: ControlTrajectory, t: float):
    """Sensitivities of omega and omega_dot to the window controls' tangents.

    Forward-mode pass through the recursive evaluation; exact up to first
    order. Returns (first_index, j_omega, j_omega_dot), each (4, 3, 3).
    """
    first, u, rot_w, _ = _window(traj, t)
    basis = cumulative_basis(u, 0)
    db = cumulative_basis(u, 1, traj.grid.dt)
    ddb = cumulative_basis(u, 2, traj.grid.dt)
    diffs = _difference_vectors(rot_w)
    sens = _difference_sensitivities(diffs)
    omega = np.zeros(3)
    omega_dot = np.zeros(3)
    s_omega = np.zeros((3, 12))
    s_omega_dot = np.zeros((3, 12))
    for j in range(1, 4):
        d = diffs[j - 1]
        s_d = sens[j - 1]
        a_t = exp_so3(basis[j] * d).T
        xi = basis[j] * right_jacobian(basis[j] * d) @ s_d
        rotated = a_t @ omega
        omega_new = rotated + db[j] * d
        s_omega_new = skew(rotated) @ xi + a_t @ s_omega + db[j] * s_d
        rotated_dot = a_t @ omega_dot
        omega_dot = (db[j] * np.cross(omega_new, d)
                     + rotated_dot + ddb[j] * d)
        s_omega_dot = (db[j] * (-skew(d) @ s_omega_new + skew(omega_new) @ s_d)
                       + skew(rotated_dot) @ xi + a_t @ s_omega_dot
                       + ddb[j] * s_d)
        omega = omega_new
        s_omega = s_omega_new
    j_omega = np.stack([s_omega[:, 3 * k:3 * (k + 1)] for k in range(4)])
    j_omega_dot = np.stack([s_omega_dot[:, 3 * k:3 * (k + 1)] for k in range(4)])
    return first, j_omega, j_omega_dot
