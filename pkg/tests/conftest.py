import numpy as np

from splineslam.se3 import Pose, exp_so3
from splineslam.spline import ControlTrajectory


def random_trajectory(rng, count=6, dt=0.3, rot_step=0.4, trans_step=0.5,
                      t0=0.0) -> ControlTrajectory:
    """Random control polygon with bounded increments between neighbours."""
    rots = [exp_so3(rng.uniform(-1.0, 1.0, size=3))]
    trans = [rng.uniform(-1.0, 1.0, size=3)]
    for _ in range(count - 1):
        step = rng.uniform(-1.0, 1.0, size=3)
        step *= rot_step / max(np.linalg.norm(step), 1e-12) * rng.uniform(0.2, 1.0)
        rots.append(rots[-1] @ exp_so3(step))
        trans.append(trans[-1] + rng.uniform(-trans_step, trans_step, size=3))
    poses = [Pose(r, t) for r, t in zip(rots, trans)]
    return ControlTrajectory.from_poses(t0, dt, poses)


def central_difference(f, x, h):
    """Central difference derivative of a vector-valued function of a scalar."""
    return (np.asarray(f(x + h)) - np.asarray(f(x - h))) / (2.0 * h)


def relative_error(got, want, floor=1e-12):
    got = np.asarray(got, dtype=float)
    want = np.asarray(want, dtype=float)
    return np.linalg.norm(got - want) / max(np.linalg.norm(want), floor)
