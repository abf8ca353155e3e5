"""Log-barrier dynamics regularization over sampled trajectory kinematics.

Penalizes sampled linear and angular acceleration magnitudes as they approach
configured physical bounds. The barrier is -lam * ln(1 - |a|/a_max), summed
over K deterministic sample times per interval; ratios are clamped just below
1 so the optimizer always sees finite values, and the gradient keeps the
unclamped barrier slope so it keeps pushing back inside the feasible region.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spline import (
    ControlTrajectory,
    DomainError,
    angular_rate_control_jacobians,
    eval_angular_rates,
    eval_linear_kinematics,
    segment_index,
    translation_weights,
)

EPS_BARRIER = 1e-3


@dataclass(frozen=True)
class DynamicsParams:
    """Barrier weights and bounds; K sample times per regularized interval."""

    lambda1: float = 0.1
    lambda2: float = 0.1
    a_max: float = 5.0        # m/s^2
    w_dot_max: float = 5.0    # rad/s^2
    K: int = 16

    def __post_init__(self):
        if self.lambda1 < 0.0 or self.lambda2 < 0.0:
            raise ValueError("barrier weights must be non-negative")
        if not (self.a_max > 0.0 and self.w_dot_max > 0.0):
            raise ValueError("acceleration bounds must be positive")
        if self.K < 1:
            raise ValueError("need at least one sample per interval")


def sample_times(interval: tuple[float, float], count: int) -> np.ndarray:
    """Midpoints of count equal sub-intervals of [t_a, t_b): deterministic."""
    t_a, t_b = interval
    return t_a + (np.arange(count) + 0.5) * (t_b - t_a) / count


def _check_interval(traj: ControlTrajectory, interval) -> None:
    t_a, t_b = interval
    if not t_a < t_b:
        raise DomainError(f"empty interval [{t_a}, {t_b})")
    lo, hi = traj.grid.domain
    if t_a < lo or t_b > hi:
        raise DomainError(
            f"interval [{t_a}, {t_b}) outside valid domain [{lo}, {hi})")


def _barrier(ratio: float, lam: float) -> float:
    return -lam * np.log1p(-min(ratio, 1.0 - EPS_BARRIER))


def dynamics_regularizer(traj: ControlTrajectory, interval,
                         params: DynamicsParams) -> float:
    """Non-negative barrier penalty over K sampled timestamps in the interval."""
    _check_interval(traj, interval)
    total = 0.0
    for t in sample_times(interval, params.K):
        _, acc = eval_linear_kinematics(traj, t)
        _, omega_dot = eval_angular_rates(traj, t)
        total += _barrier(np.linalg.norm(acc) / params.a_max, params.lambda1)
        total += _barrier(np.linalg.norm(omega_dot) / params.w_dot_max, params.lambda2)
    return total


def dynamics_regularizer_and_grads(traj: ControlTrajectory, interval,
                                   params: DynamicsParams):
    """Barrier value plus its gradient w.r.t. every control's right tangent.

    Returns (value, grads (count, 6)) with rows ordered (rotation, translation).
    Beyond the clamp the value saturates but the returned gradient keeps the
    clamped barrier slope so steps still point back toward feasibility.
    """
    _check_interval(traj, interval)
    grads = np.zeros((traj.grid.count, 6))
    total = 0.0
    dt = traj.grid.dt
    for t in sample_times(interval, params.K):
        _, acc = eval_linear_kinematics(traj, t)
        _, omega_dot = eval_angular_rates(traj, t)
        i, u = segment_index(traj.grid, t)
        first = i - 1

        a_norm = np.linalg.norm(acc)
        ratio_a = min(a_norm / params.a_max, 1.0 - EPS_BARRIER)
        total += -params.lambda1 * np.log1p(-ratio_a)
        if a_norm > 1e-12 and params.lambda1 > 0.0:
            coeff = params.lambda1 / ((1.0 - ratio_a) * params.a_max)
            d_norm = coeff * acc / a_norm
            mu = translation_weights(u, 2, dt)
            for k in range(4):
                grads[first + k, 3:] += mu[k] * d_norm

        w_norm = np.linalg.norm(omega_dot)
        ratio_w = min(w_norm / params.w_dot_max, 1.0 - EPS_BARRIER)
        total += -params.lambda2 * np.log1p(-ratio_w)
        if w_norm > 1e-12 and params.lambda2 > 0.0:
            coeff = params.lambda2 / ((1.0 - ratio_w) * params.w_dot_max)
            d_norm = coeff * omega_dot / w_norm
            _, _, j_omega_dot = angular_rate_control_jacobians(traj, t)
            for k in range(4):
                grads[first + k, :3] += j_omega_dot[k].T @ d_norm
    return total, grads
