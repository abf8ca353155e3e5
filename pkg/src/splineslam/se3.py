"""Exact SO(3)/SE(3) group operations: exponential/log maps, Jacobians, quaternions.

Conventions used throughout the package:
  * rotations are 3x3 orthonormal matrices with det +1,
  * tangent vectors are 3-vectors (radians for rotation, meters for translation),
  * quaternion I/O order is (x, y, z, w), canonicalized to w >= 0,
  * pose increments are right-multiplicative: R <- R @ exp_so3(delta).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Below this angle the closed-form sin/cos coefficients are replaced by their
# second-order Taylor expansions; keeps relative error < 1e-12 at the switch.
SMALL_ANGLE = 1e-6

# log_so3 refuses angles within this distance of pi (the principal branch is
# ill-defined there and adjacent spline control points never get close to it).
PI_MARGIN = 1e-6


class DegenerateRotationError(ValueError):
    """Raised when a rotation angle is too close to pi for a stable logarithm."""


def skew(v: np.ndarray) -> np.ndarray:
    """Return the 3x3 skew-symmetric matrix such that skew(v) @ w == cross(v, w)."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def exp_so3(omega: np.ndarray) -> np.ndarray:
    """Rodrigues exponential map from a rotation vector to a rotation matrix.

    Uses a Taylor branch below SMALL_ANGLE so the output stays orthonormal
    for arbitrarily small inputs. Rejects non-finite input.
    """
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (3,):
        raise ValueError(f"rotation vector must have shape (3,), got {omega.shape}")
    if not np.all(np.isfinite(omega)):
        raise ValueError("non-finite rotation vector")
    theta2 = float(omega @ omega)
    theta = np.sqrt(theta2)
    if theta < SMALL_ANGLE:
        a = 1.0 - theta2 / 6.0          # sin(t)/t
        b = 0.5 - theta2 / 24.0         # (1-cos(t))/t^2
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
    k = skew(omega)
    return np.eye(3) + a * k + b * (k @ k)


def log_so3(rot: np.ndarray) -> np.ndarray:
    """Principal logarithm of a rotation matrix as a rotation vector.

    Valid for angles strictly below pi; angles within PI_MARGIN of pi raise
    DegenerateRotationError instead of silently picking a branch.
    """
    rot = np.asarray(rot, dtype=float)
    vee = 0.5 * np.array([rot[2, 1] - rot[1, 2],
                          rot[0, 2] - rot[2, 0],
                          rot[1, 0] - rot[0, 1]])
    sin_theta = np.linalg.norm(vee)
    cos_theta = 0.5 * (np.trace(rot) - 1.0)
    theta = np.arctan2(sin_theta, cos_theta)
    if theta > np.pi - PI_MARGIN:
        raise DegenerateRotationError(
            f"rotation angle {theta:.9f} is within {PI_MARGIN} of pi")
    if theta < SMALL_ANGLE:
        scale = 1.0 + theta * theta / 6.0   # t/sin(t)
    else:
        scale = theta / sin_theta
    return scale * vee


def rotation_angle(rot: np.ndarray) -> float:
    """Rotation angle in [0, pi] without branch restrictions."""
    rot = np.asarray(rot, dtype=float)
    vee = 0.5 * np.array([rot[2, 1] - rot[1, 2],
                          rot[0, 2] - rot[2, 0],
                          rot[1, 0] - rot[0, 1]])
    return float(np.arctan2(np.linalg.norm(vee), 0.5 * (np.trace(rot) - 1.0)))


def right_jacobian(phi: np.ndarray) -> np.ndarray:
    """Right Jacobian J_r of SO(3): exp(phi + d) ~= exp(phi) @ exp_so3(J_r(phi) d)."""
    phi = np.asarray(phi, dtype=float)
    theta2 = float(phi @ phi)
    theta = np.sqrt(theta2)
    k = skew(phi)
    if theta < SMALL_ANGLE:
        c1 = 0.5 - theta2 / 24.0
        c2 = 1.0 / 6.0 - theta2 / 120.0
    else:
        c1 = (1.0 - np.cos(theta)) / theta2
        c2 = (theta - np.sin(theta)) / (theta2 * theta)
    return np.eye(3) - c1 * k + c2 * (k @ k)


def right_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    """Inverse of the right Jacobian of SO(3)."""
    phi = np.asarray(phi, dtype=float)
    theta2 = float(phi @ phi)
    theta = np.sqrt(theta2)
    k = skew(phi)
    if theta < SMALL_ANGLE:
        c = 1.0 / 12.0 + theta2 / 720.0
    else:
        c = 1.0 / theta2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * k + c * (k @ k)


def left_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    # J_l(phi) = exp(phi) J_r(phi), hence J_l^-1 = J_r^-1 exp(-phi).
    return right_jacobian_inv(phi) @ exp_so3(-np.asarray(phi, dtype=float))


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Unit quaternion (x, y, z, w) to rotation matrix. Normalizes the input."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n < 1e-12:
        raise ValueError("quaternion must be finite and non-zero")
    x, y, z, w = q / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rotmat_to_quat(rot: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion (x, y, z, w), canonicalized to w >= 0.

    Shepperd's method: branch on the largest diagonal combination for stability.
    """
    rot = np.asarray(rot, dtype=float)
    t = np.trace(rot)
    q = np.empty(4)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        q[3] = 0.25 * s
        q[0] = (rot[2, 1] - rot[1, 2]) / s
        q[1] = (rot[0, 2] - rot[2, 0]) / s
        q[2] = (rot[1, 0] - rot[0, 1]) / s
    elif rot[0, 0] > rot[1, 1] and rot[0, 0] > rot[2, 2]:
        s = np.sqrt(1.0 + rot[0, 0] - rot[1, 1] - rot[2, 2]) * 2.0
        q[3] = (rot[2, 1] - rot[1, 2]) / s
        q[0] = 0.25 * s
        q[1] = (rot[0, 1] + rot[1, 0]) / s
        q[2] = (rot[0, 2] + rot[2, 0]) / s
    elif rot[1, 1] > rot[2, 2]:
        s = np.sqrt(1.0 + rot[1, 1] - rot[0, 0] - rot[2, 2]) * 2.0
        q[3] = (rot[0, 2] - rot[2, 0]) / s
        q[0] = (rot[0, 1] + rot[1, 0]) / s
        q[1] = 0.25 * s
        q[2] = (rot[1, 2] + rot[2, 1]) / s
    else:
        s = np.sqrt(1.0 + rot[2, 2] - rot[0, 0] - rot[1, 1]) * 2.0
        q[3] = (rot[1, 0] - rot[0, 1]) / s
        q[0] = (rot[0, 2] + rot[2, 0]) / s
        q[1] = (rot[1, 2] + rot[2, 1]) / s
        q[2] = 0.25 * s
    q /= np.linalg.norm(q)
    if q[3] < 0.0 or (q[3] == 0.0 and _first_nonzero_negative(q[:3])):
        q = -q
    return q


def _first_nonzero_negative(v: np.ndarray) -> bool:
    for x in v:
        if x != 0.0:
            return x < 0.0
    return False


def is_rotation_matrix(rot: np.ndarray, tol: float = 1e-9) -> bool:
    rot = np.asarray(rot, dtype=float)
    if rot.shape != (3, 3):
        return False
    ortho = np.max(np.abs(rot.T @ rot - np.eye(3)))
    return bool(ortho <= tol and np.linalg.det(rot) > 0.0)


def project_to_so3(mat: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense (polar decomposition)."""
    u, _, vt = np.linalg.svd(np.asarray(mat, dtype=float))
    rot = u @ vt
    if np.linalg.det(rot) < 0.0:
        rot = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return rot


@dataclass(frozen=True)
class Pose:
    """Rigid camera-to-world transform: rotation matrix plus translation in meters.

    Immutable after construction; the backing arrays are marked read-only so a
    Pose can be shared across threads without copying.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=float)
        trans = np.array(self.translation, dtype=float).reshape(3)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(trans))):
            raise ValueError("non-finite pose")
        rot.flags.writeable = False
        trans.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_quat_trans(q_xyzw: np.ndarray, trans: np.ndarray) -> "Pose":
        return Pose(quat_to_rotmat(q_xyzw), trans)

    def quat(self) -> np.ndarray:
        return rotmat_to_quat(self.rotation)

    def matrix(self) -> np.ndarray:
        mat = np.eye(4)
        mat[:3, :3] = self.rotation
        mat[:3, 3] = self.translation
        return mat

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        rot_inv = self.rotation.T
        return Pose(rot_inv, -rot_inv @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or a batch (N, 3)."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def retract(self, delta: np.ndarray) -> "Pose":
        """Right-multiplicative increment: 6-vector (3 rotation rad, 3 translation m)."""
        delta = np.asarray(delta, dtype=float).reshape(6)
        return Pose(self.rotation @ exp_so3(delta[:3]), self.translation + delta[3:])


def pose_compose(a: Pose, b: Pose) -> Pose:
    """SE(3) group product a * b."""
    return a.compose(b)


def pose_inverse(a: Pose) -> Pose:
    """SE(3) group inverse."""
    return a.inverse()
