"""Continuous-time RGB-D SLAM on uniform cubic B-spline trajectories.

The package is organized around the pipeline's data flow:

  se3        -- SO(3)/SE(3) primitives (exp/log, Jacobians, quaternions)
  spline     -- cubic B-spline trajectories and kinematic derivatives
  scene      -- analytic signed-distance scenes (ground-truth stand-in)
  voxelmap   -- learnable dense voxel TSDF/color map
  rendering  -- rays, sampling, volume rendering, reconstruction losses
  dynamics   -- log-barrier dynamics regularization
  optim      -- adaptive-moment optimizer over heterogeneous blocks
  fitting    -- curve approximation (spline fit to discrete poses)
  pipeline   -- tracking / local BA / global BA orchestration
  evaluation -- Horn alignment, ATE/RPE, smoothness reports
  dataset    -- synthetic RGB-D sequence generation
  io         -- TUM / PPM / PFM / JSON formats and run configuration
"""

from .se3 import Pose, exp_so3, log_so3, pose_compose, pose_inverse
from .spline import (
    ControlTrajectory,
    KnotGrid,
    Kinematics,
    append_control_point,
    cumulative_basis,
    eval_angular_rates,
    eval_kinematics,
    eval_linear_kinematics,
    eval_pose,
    segment_index,
)

__all__ = [
    "Pose",
    "exp_so3",
    "log_so3",
    "pose_compose",
    "pose_inverse",
    "ControlTrajectory",
    "KnotGrid",
    "Kinematics",
    "append_control_point",
    "cumulative_basis",
    "eval_angular_rates",
    "eval_kinematics",
    "eval_linear_kinematics",
    "eval_pose",
    "segment_index",
]
