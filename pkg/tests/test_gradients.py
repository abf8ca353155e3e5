"""Finite-difference verification of every production gradient path:
voxel-map parameters, frame-pose tangents, and control-point tangents
(rendering chain plus dynamics barrier)."""

import numpy as np
import pytest

from splineslam.dynamics import DynamicsParams, dynamics_regularizer_and_grads
from splineslam.optim import numeric_gradient_subset, numeric_pose_gradient
from splineslam.pipeline import control_gradients_from_pose_grads
from splineslam.rendering import (
    RayBundle,
    RenderConfig,
    total_loss,
    volume_loss_and_grads,
)
from splineslam.scene import default_scene
from splineslam.se3 import exp_so3
from splineslam.spline import eval_pose
from splineslam.voxelmap import VoxelMap

from conftest import random_trajectory, relative_error


def random_instance(rng, n_pixels=16, grid=8):
    """Small randomized scene: an 8^3 voxel map, one camera, a pixel batch."""
    vm = VoxelMap(origin=(-1.0, -1.0, -1.0), cell_size=2.0 / (grid - 1),
                  dims=(grid, grid, grid), truncation=0.1)
    vm.sdf = 0.2 * rng.standard_normal(vm.sdf.shape)
    vm.rgb = rng.uniform(0.2, 0.8, size=vm.rgb.shape)
    rot = exp_so3(0.2 * rng.standard_normal(3))
    trans = np.array([0.0, 0.0, -1.6]) + 0.1 * rng.standard_normal(3)
    dirs = np.stack([rng.uniform(-0.3, 0.3, n_pixels),
                     rng.uniform(-0.3, 0.3, n_pixels),
                     np.ones(n_pixels)], axis=1)
    bundle = RayBundle(
        dirs_cam=dirs,
        color_meas=rng.uniform(size=(n_pixels, 3)),
        depth_meas=rng.uniform(1.0, 2.2, size=n_pixels),
        frame_index=np.zeros(n_pixels, dtype=np.int64),
        n_frames=1)
    # balanced O(1) weights keep every term's finite differences above the
    # cancellation floor of the total loss; the chain rule is weight-linear
    config = RenderConfig(n_uniform=8, n_surface=4, near=0.3, far=2.6, jitter=0.0,
                          w_rgb=1.0, w_depth=0.1, w_sdf=10.0, w_free_space=1.0)
    depths = None  # deterministic (jitter 0), so depths are reproducible
    return vm, rot, trans, bundle, config, depths


def weighted_total(parts, config):
    return (config.w_rgb * parts["rgb"] + config.w_depth * parts["depth"]
            + config.w_sdf * parts["sdf"] + config.w_free_space * parts["free_space"])


def test_pose_gradient_matches_fd_voxel_map():
    rng = np.random.default_rng(501)
    for _ in range(10):
        vm, rot, trans, bundle, config, _ = random_instance(rng)
        parts, grads = volume_loss_and_grads(
            vm, rot[None], trans[None], bundle, config, want_pose_grads=True)

        def f(rots, ts):
            p, _ = volume_loss_and_grads(vm, rots, ts, bundle, config)
            return weighted_total(p, config)

        num = numeric_pose_gradient(f, rot[None], trans[None], h=1e-7)
        assert relative_error(grads["pose"], num, floor=1e-10) <= 1e-4


def test_pose_gradient_matches_fd_analytic_scene():
    rng = np.random.default_rng(503)
    scene = default_scene()
    config = RenderConfig(n_uniform=10, n_surface=4, near=0.1, jitter=0.0,
                          w_rgb=1.0, w_depth=0.1, w_sdf=10.0, w_free_space=1.0).with_far(4.0)
    for _ in range(5):
        rot = exp_so3(0.1 * rng.standard_normal(3))
        trans = np.array([0.0, 0.0, 1.2]) + 0.2 * rng.standard_normal(3)
        n = 12
        dirs = np.stack([rng.uniform(-0.5, 0.5, n), rng.uniform(-0.4, 0.4, n),
                         np.ones(n)], axis=1)
        bundle = RayBundle(dirs_cam=dirs, color_meas=rng.uniform(size=(n, 3)),
                           depth_meas=rng.uniform(0.8, 2.0, size=n),
                           frame_index=np.zeros(n, dtype=np.int64), n_frames=1)
        _, grads = volume_loss_and_grads(
            scene, rot[None], trans[None], bundle, config, want_pose_grads=True)

        def f(rots, ts):
            p, _ = volume_loss_and_grads(scene, rots, ts, bundle, config)
            return weighted_total(p, config)

        num = numeric_pose_gradient(f, rot[None], trans[None], h=1e-7)
        assert relative_error(grads["pose"], num, floor=1e-10) <= 1e-3


def test_map_gradients_match_fd():
    rng = np.random.default_rng(509)
    for _ in range(5):
        vm, rot, trans, bundle, config, _ = random_instance(rng)
        parts, grads = volume_loss_and_grads(
            vm, rot[None], trans[None], bundle, config, want_map_grads=True)
        # random subset of voxel parameters, sdf and color
        sdf_idx = rng.choice(vm.sdf.size, size=40, replace=False)

        def f_sdf(values):
            vm2 = vm.copy()
            vm2.sdf = values
            p, _ = volume_loss_and_grads(vm2, rot[None], trans[None], bundle, config)
            return weighted_total(p, config)

        num_sdf = numeric_gradient_subset(f_sdf, vm.sdf, sdf_idx, h=1e-6)
        got_sdf = grads["map_sdf"].reshape(-1)[sdf_idx]
        assert relative_error(got_sdf, num_sdf, floor=1e-10) <= 1e-4

        rgb_idx = rng.choice(vm.rgb.size, size=40, replace=False)

        def f_rgb(values):
            vm2 = vm.copy()
            vm2.rgb = values
            p, _ = volume_loss_and_grads(vm2, rot[None], trans[None], bundle, config)
            return weighted_total(p, config)

        num_rgb = numeric_gradient_subset(f_rgb, vm.rgb, rgb_idx, h=1e-6)
        got_rgb = grads["map_rgb"].reshape(-1)[rgb_idx]
        assert relative_error(got_rgb, num_rgb, floor=1e-10) <= 1e-4


def test_control_tangent_gradient_matches_fd():
    """Full chain: control tangents -> interpolated pose -> rendering loss."""
    rng = np.random.default_rng(521)
    for _ in range(8):
        vm, _, _, bundle, config, _ = random_instance(rng)
        traj = random_trajectory(rng, count=4, dt=0.4, rot_step=0.15,
                                 trans_step=0.15)
        # recenter controls so the camera looks into the voxel volume
        trans = np.array(traj.translations) * 0.1 + np.array([0.0, 0.0, -1.6])
        traj = traj.with_controls(np.array(traj.rotations), trans)
        lo, hi = traj.grid.domain
        t_frame = rng.uniform(lo, hi - 1e-9)

        def loss_of(traj_x):
            pose = eval_pose(traj_x, t_frame)
            p, _ = volume_loss_and_grads(
                vm, pose.rotation[None], pose.translation[None], bundle, config)
            return weighted_total(p, config)

        pose = eval_pose(traj, t_frame)
        parts, grads = volume_loss_and_grads(
            vm, pose.rotation[None], pose.translation[None], bundle, config,
            want_pose_grads=True)
        ctrl = control_gradients_from_pose_grads(traj, [t_frame], grads["pose"])

        def f(rots, ts):
            return loss_of(traj.with_controls(rots, ts))

        num = numeric_pose_gradient(f, traj.rotations, traj.translations, h=1e-7)
        assert relative_error(ctrl, num, floor=1e-10) <= 1e-4


def test_total_loss_with_dynamics_gradient_matches_fd():
    """Rendering loss plus barrier: the actual local-BA objective."""
    rng = np.random.default_rng(523)
    params = DynamicsParams(a_max=20.0, w_dot_max=20.0, K=4)
    for _ in range(5):
        vm, _, _, bundle, config, _ = random_instance(rng)
        traj = random_trajectory(rng, count=4, dt=0.4, rot_step=0.15,
                                 trans_step=0.15)
        trans = np.array(traj.translations) * 0.1 + np.array([0.0, 0.0, -1.6])
        traj = traj.with_controls(np.array(traj.rotations), trans)
        lo, hi = traj.grid.domain
        t_frame = rng.uniform(lo, hi - 1e-9)

        pose = eval_pose(traj, t_frame)
        _, grads = volume_loss_and_grads(
            vm, pose.rotation[None], pose.translation[None], bundle, config,
            want_pose_grads=True)
        ctrl = control_gradients_from_pose_grads(traj, [t_frame], grads["pose"])
        _, dyn_grads = dynamics_regularizer_and_grads(traj, (lo, hi), params)
        ctrl = ctrl + dyn_grads

        def f(rots, ts):
            traj_x = traj.with_controls(rots, ts)
            pose_x = eval_pose(traj_x, t_frame)
            p, _ = volume_loss_and_grads(
                vm, pose_x.rotation[None], pose_x.translation[None], bundle, config)
            from splineslam.dynamics import dynamics_regularizer
            return weighted_total(p, config) + dynamics_regularizer(
                traj_x, (lo, hi), params)

        num = numeric_pose_gradient(f, traj.rotations, traj.translations, h=1e-7)
        assert relative_error(ctrl, num, floor=1e-10) <= 1e-4
