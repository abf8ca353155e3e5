import numpy as np
import pytest

from splineslam.se3 import DegenerateRotationError, Pose, exp_so3, log_so3
from splineslam.spline import (
    ControlTrajectory,
    DomainError,
    KnotGrid,
    append_control_point,
    angular_rate_control_jacobians,
    cumulative_basis,
    eval_angular_rates,
    eval_linear_kinematics,
    eval_pose,
    pose_control_jacobians,
    segment_index,
    translation_weights,
)

from conftest import central_difference, random_trajectory, relative_error


# --- cumulative basis -------------------------------------------------------

def test_basis_at_zero():
    assert np.allclose(cumulative_basis(0.0, 0), [1.0, 5 / 6, 1 / 6, 0.0], atol=1e-15)


def test_basis_at_one():
    assert np.allclose(cumulative_basis(1.0, 0), [1.0, 1.0, 5 / 6, 1 / 6], atol=1e-15)


def test_basis_second_derivative_at_zero():
    assert np.allclose(cumulative_basis(0.0, 2, dt=1.0), [0.0, -1.0, 1.0, 0.0], atol=1e-15)


def test_basis_first_entry_is_one():
    for u in np.linspace(0.0, 1.0, 33):
        assert cumulative_basis(u, 0)[0] == 1.0


def test_basis_entries_non_increasing():
    for u in np.linspace(0.0, 1.0, 33, endpoint=False):
        b = cumulative_basis(u, 0)
        assert b[0] >= b[1] >= b[2] >= b[3] >= 0.0


def test_basis_rejects_bad_args():
    with pytest.raises(ValueError):
        cumulative_basis(-0.1, 0)
    with pytest.raises(ValueError):
        cumulative_basis(1.1, 0)
    with pytest.raises(ValueError):
        cumulative_basis(0.5, 3)


def test_basis_derivative_scaling():
    dt = 0.25
    db = cumulative_basis(0.3, 1, dt)
    assert np.allclose(db, cumulative_basis(0.3, 1, 1.0) / dt)
    ddb = cumulative_basis(0.3, 2, dt)
    assert np.allclose(ddb, cumulative_basis(0.3, 2, 1.0) / dt ** 2)


def test_translation_weights_partition_of_unity():
    for u in np.linspace(0.0, 1.0, 17):
        assert abs(translation_weights(u, 0).sum() - 1.0) <= 1e-15
        assert abs(translation_weights(u, 1).sum()) <= 1e-14
        assert abs(translation_weights(u, 2).sum()) <= 1e-13


# --- segment lookup ---------------------------------------------------------

def test_segment_index_example():
    grid = KnotGrid(0.0, 0.5, 8)
    i, u = segment_index(grid, 1.2)
    assert i == 2
    assert abs(u - 0.4) <= 1e-12


def test_segment_index_at_knot():
    grid = KnotGrid(0.0, 0.5, 8)
    i, u = segment_index(grid, 1.0)
    assert (i, u) == (2, 0.0)


def test_segment_index_domain_errors():
    grid = KnotGrid(0.0, 0.5, 4)
    with pytest.raises(DomainError):
        segment_index(grid, 0.25)   # before t0 + dt
    with pytest.raises(DomainError):
        segment_index(grid, 1.0)    # domain end is half-open
    segment_index(grid, 0.5)


def test_domain_matches_count():
    grid = KnotGrid(1.0, 0.3, 7)
    lo, hi = grid.domain
    assert abs(lo - 1.3) <= 1e-12
    assert abs(hi - (1.0 + 5 * 0.3)) <= 1e-12


# --- pose evaluation --------------------------------------------------------

def identity_trajectory(count=6, dt=0.5):
    return ControlTrajectory.from_poses(0.0, dt, [Pose.identity()] * count)


def line_trajectory(count=6, dt=0.5, step=np.array([0.2, 0.0, 0.0])):
    poses = [Pose(np.eye(3), k * step) for k in range(count)]
    return ControlTrajectory.from_poses(0.0, dt, poses)


def fixed_axis_trajectory(count=6, dt=0.5, theta=0.3, axis=np.array([0.0, 0.0, 1.0])):
    poses = [Pose(exp_so3(k * theta * axis), np.zeros(3)) for k in range(count)]
    return ControlTrajectory.from_poses(0.0, dt, poses)


def test_identity_controls_give_identity_pose():
    traj = identity_trajectory()
    for t in np.linspace(*traj.grid.domain, 20, endpoint=False):
        p = eval_pose(traj, t)
        assert np.allclose(p.rotation, np.eye(3), atol=1e-15)
        assert np.allclose(p.translation, 0.0, atol=1e-15)


def test_linear_control_polygon_reproduces_line():
    step = np.array([0.2, 0.0, 0.0])
    traj = line_trajectory(count=7, dt=0.5, step=step)
    for t in np.linspace(*traj.grid.domain, 25, endpoint=False):
        s = (t - traj.grid.t0) / traj.grid.dt
        expected = s * step
        assert np.allclose(eval_pose(traj, t).translation, expected, atol=1e-12)


def test_fixed_axis_rotation_interpolation():
    theta, axis = 0.3, np.array([0.0, 0.0, 1.0])
    traj = fixed_axis_trajectory(count=7, dt=0.5, theta=theta, axis=axis)
    for t in np.linspace(*traj.grid.domain, 25, endpoint=False):
        s = (t - traj.grid.t0) / traj.grid.dt
        expected = exp_so3(s * theta * axis)
        assert np.max(np.abs(eval_pose(traj, t).rotation - expected)) <= 1e-12


def test_eval_pose_outside_domain():
    traj = identity_trajectory(count=4)
    with pytest.raises(DomainError):
        eval_pose(traj, traj.grid.domain[1])


def test_adjacent_angle_invariant_rejected():
    poses = [Pose.identity(),
             Pose(exp_so3(np.array([np.pi - 1e-4, 0.0, 0.0])), np.zeros(3)),
             Pose.identity(),
             Pose.identity()]
    with pytest.raises(DegenerateRotationError):
        ControlTrajectory.from_poses(0.0, 0.5, poses)


# --- kinematics -------------------------------------------------------------

def test_linear_kinematics_on_line():
    step = np.array([0.2, 0.0, 0.0])
    dt = 0.5
    traj = line_trajectory(count=7, dt=dt, step=step)
    for t in np.linspace(*traj.grid.domain, 10, endpoint=False):
        vel, acc = eval_linear_kinematics(traj, t)
        assert np.allclose(vel, step / dt, atol=1e-12)
        assert np.max(np.abs(acc)) <= 1e-12


def test_constant_trajectory_has_zero_kinematics():
    traj = identity_trajectory()
    t = 1.1
    vel, acc = eval_linear_kinematics(traj, t)
    omega, omega_dot = eval_angular_rates(traj, t)
    assert np.max(np.abs(vel)) == 0.0
    assert np.max(np.abs(acc)) == 0.0
    assert np.max(np.abs(omega)) == 0.0
    assert np.max(np.abs(omega_dot)) == 0.0


def test_fixed_axis_angular_rates():
    theta, axis, dt = 0.3, np.array([0.0, 0.0, 1.0]), 0.5
    traj = fixed_axis_trajectory(count=7, dt=dt, theta=theta, axis=axis)
    for t in np.linspace(*traj.grid.domain, 10, endpoint=False):
        omega, omega_dot = eval_angular_rates(traj, t)
        assert np.allclose(omega, (theta / dt) * axis, atol=1e-9)
        assert np.linalg.norm(omega_dot) <= 1e-9


def test_acceleration_matches_finite_differences():
    rng = np.random.default_rng(101)
    for _ in range(50):
        traj = random_trajectory(rng)
        lo, hi = traj.grid.domain
        t = rng.uniform(lo + 0.05, hi - 0.05)
        h = 1e-4 * traj.grid.dt
        num = central_difference(
            lambda s: eval_linear_kinematics(traj, s)[0], t, h)
        _, acc = eval_linear_kinematics(traj, t)
        assert relative_error(acc, num, floor=1e-9) <= 1e-5


def test_angular_rates_match_finite_differences():
    rng = np.random.default_rng(103)
    for _ in range(50):
        traj = random_trajectory(rng)
        lo, hi = traj.grid.domain
        t = rng.uniform(lo + 0.05, hi - 0.05)
        h = 1e-5 * traj.grid.dt

        def rot_at(s):
            return eval_pose(traj, s).rotation

        num_omega = log_so3(rot_at(t).T @ rot_at(t + h)) / h
        omega, omega_dot = eval_angular_rates(traj, t)
        assert relative_error(omega, num_omega, floor=1e-9) <= 1e-4
        num_omega_dot = central_difference(
            lambda s: eval_angular_rates(traj, s)[0], t, 1e-4 * traj.grid.dt)
        assert relative_error(omega_dot, num_omega_dot, floor=1e-9) <= 1e-4


# --- continuity and support -------------------------------------------------

def test_c2_continuity_at_interior_knots():
    rng = np.random.default_rng(107)
    for _ in range(20):
        traj = random_trajectory(rng, count=7)
        grid = traj.grid
        for k in range(2, grid.count - 2):
            t_knot = grid.knot_time(k)
            left = t_knot - 1e-7 * grid.dt
            p_l, p_r = eval_pose(traj, left), eval_pose(traj, t_knot)
            assert np.max(np.abs(p_l.rotation - p_r.rotation)) <= 1e-6
            assert np.max(np.abs(p_l.translation - p_r.translation)) <= 1e-6
            v_l, a_l = eval_linear_kinematics(traj, left)
            v_r, a_r = eval_linear_kinematics(traj, t_knot)
            assert np.max(np.abs(v_l - v_r)) <= 1e-6
            assert np.max(np.abs(a_l - a_r)) <= 1e-5
            w_l, wd_l = eval_angular_rates(traj, left)
            w_r, wd_r = eval_angular_rates(traj, t_knot)
            assert np.max(np.abs(w_l - w_r)) <= 1e-6
            assert np.max(np.abs(wd_l - wd_r)) <= 1e-5


def test_local_support():
    # Control k influences only t in [t_{k-2}, t_{k+2}); elsewhere bit-identical.
    rng = np.random.default_rng(109)
    traj = random_trajectory(rng, count=10, dt=0.5)
    k = 5
    rots = np.array(traj.rotations)
    trans = np.array(traj.translations)
    rots[k] = rots[k] @ exp_so3(np.array([0.05, -0.02, 0.01]))
    trans[k] = trans[k] + np.array([0.1, 0.0, -0.1])
    bumped = traj.with_controls(rots, trans)
    lo, hi = traj.grid.domain
    support_lo = traj.grid.knot_time(k - 2)
    support_hi = traj.grid.knot_time(k + 2)
    for t in np.linspace(lo, hi, 200, endpoint=False):
        a = eval_pose(traj, t)
        b = eval_pose(bumped, t)
        if support_lo < t < support_hi:
            continue
        assert np.array_equal(a.rotation, b.rotation)
        assert np.array_equal(a.translation, b.translation)
    # and the perturbation is actually visible somewhere inside the support
    t_mid = traj.grid.knot_time(k)
    assert not np.allclose(eval_pose(traj, t_mid).translation,
                           eval_pose(bumped, t_mid).translation)


# --- append -----------------------------------------------------------------

def test_append_extends_domain():
    traj = identity_trajectory(count=4, dt=0.5)
    assert np.allclose(traj.grid.domain, (0.5, 1.0))
    grown = append_control_point(traj, Pose.identity())
    assert np.allclose(grown.grid.domain, (0.5, 1.5))


def test_append_identity_stays_identity():
    traj = identity_trajectory(count=4, dt=0.5)
    grown = append_control_point(traj, Pose.identity())
    for t in np.linspace(*grown.grid.domain, 12, endpoint=False):
        assert np.allclose(grown.eval_matrix(t) if hasattr(grown, "eval_matrix")
                           else eval_pose(grown, t).matrix(), np.eye(4), atol=1e-15)


def test_append_preserves_existing_values_bitwise():
    rng = np.random.default_rng(113)
    traj = random_trajectory(rng, count=6, dt=0.4)
    lo, hi = traj.grid.domain
    times = np.linspace(lo, hi, 37, endpoint=False)
    before = [eval_pose(traj, t) for t in times]
    grown = append_control_point(
        traj, Pose(traj.rotations[-1], traj.translations[-1] + 0.1))
    for t, p in zip(times, before):
        q = eval_pose(grown, t)
        assert np.array_equal(p.rotation, q.rotation)
        assert np.array_equal(p.translation, q.translation)


def test_append_rejects_angle_violation():
    traj = identity_trajectory(count=4)
    bad = Pose(exp_so3(np.array([0.0, np.pi - 1e-5, 0.0])), np.zeros(3))
    with pytest.raises(DegenerateRotationError):
        append_control_point(traj, bad)


# --- control-point Jacobians ------------------------------------------------

def test_pose_control_jacobians_match_fd():
    rng = np.random.default_rng(127)
    for _ in range(20):
        traj = random_trajectory(rng)
        lo, hi = traj.grid.domain
        t = rng.uniform(lo, hi - 1e-6)
        first, lam, j_rot = pose_control_jacobians(traj, t)
        base = eval_pose(traj, t)
        h = 1e-7
        for k in range(4):
            for axis in range(6):
                delta = np.zeros(6)
                delta[axis] = h
                rots = np.array(traj.rotations)
                trans = np.array(traj.translations)
                rots[first + k] = rots[first + k] @ exp_so3(delta[:3])
                trans[first + k] = trans[first + k] + delta[3:]
                moved = eval_pose(traj.with_controls(rots, trans), t)
                if axis < 3:
                    num = log_so3(base.rotation.T @ moved.rotation) / h
                    assert np.allclose(j_rot[k][:, axis], num, atol=2e-6)
                else:
                    num = (moved.translation - base.translation) / h
                    expected = np.zeros(3)
                    expected[axis - 3] = lam[k]
                    assert np.allclose(num, expected, atol=2e-6)


def test_angular_rate_jacobians_match_fd():
    rng = np.random.default_rng(131)
    for _ in range(20):
        traj = random_trajectory(rng)
        lo, hi = traj.grid.domain
        t = rng.uniform(lo, hi - 1e-6)
        first, j_omega, j_omega_dot = angular_rate_control_jacobians(traj, t)
        w0, wd0 = eval_angular_rates(traj, t)
        h = 1e-7
        for k in range(4):
            for axis in range(3):
                eps = np.zeros(3)
                eps[axis] = h
                rots = np.array(traj.rotations)
                rots[first + k] = rots[first + k] @ exp_so3(eps)
                moved = traj.with_controls(rots, np.array(traj.translations))
                w1, wd1 = eval_angular_rates(moved, t)
                assert np.allclose(j_omega[k][:, axis], (w1 - w0) / h, atol=5e-5)
                assert np.allclose(j_omega_dot[k][:, axis], (wd1 - wd0) / h, atol=5e-4)
