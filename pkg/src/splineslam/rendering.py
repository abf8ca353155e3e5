"""Differentiable ray generation, sampling, TSDF volume rendering, and losses.

The forward model per pixel: back-project the pixel through the camera,
place stratified samples along the unnormalized ray (so sample depth equals
z-depth), query the map for (color, sdf) at each sample, and blend with the
sigmoid-product weights w = sig(s/tr) * sig(-s/tr). The backward pass is
hand-derived and produces gradients w.r.t. both map parameters and pose
right-tangents; it is validated against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .se3 import Pose


class NumericalError(RuntimeError):
    """A loss or gradient became non-finite; message names the offending term."""


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0.0 < self.cx < self.width and 0.0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def backproject(self, uv: np.ndarray) -> np.ndarray:
        """Unnormalized camera-frame ray(s) K^-1 [u, v, 1] for uv (2,) or (N, 2)."""
        uv = np.asarray(uv, dtype=float)
        single = uv.ndim == 1
        uv = np.atleast_2d(uv)
        rays = np.stack([(uv[:, 0] - self.cx) / self.fx,
                         (uv[:, 1] - self.cy) / self.fy,
                         np.ones(len(uv))], axis=1)
        return rays[0] if single else rays

    def to_spec(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @staticmethod
    def from_spec(spec: dict) -> "CameraIntrinsics":
        return CameraIntrinsics(**spec)


@dataclass
class RgbdFrame:
    """One input frame: timestamp, color in [0,1], z-depth in meters (0 = invalid)."""

    timestamp: float
    color: np.ndarray
    depth: np.ndarray
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        self.color = np.asarray(self.color, dtype=float)
        self.depth = np.asarray(self.depth, dtype=float)
        h, w = self.intrinsics.height, self.intrinsics.width
        if self.color.shape != (h, w, 3):
            raise ValueError(f"color shape {self.color.shape} != ({h}, {w}, 3)")
        if self.depth.shape != (h, w):
            raise ValueError(f"depth shape {self.depth.shape} != ({h}, {w})")
        if not (np.all(np.isfinite(self.color)) and np.all(np.isfinite(self.depth))):
            raise ValueError("frame contains non-finite values")
        if np.any(self.depth < 0.0):
            raise ValueError("depth must be non-negative (0 marks invalid)")


@dataclass(frozen=True)
class RenderConfig:
    """Sampling constants and per-term loss weights.

    The default weights put the losses on the scale the truncation-normalized
    formulation implies (sdf and free-space errors effectively measured in
    truncation units): with SDF in meters that gives the geometric terms the
    dominant say over pose parameters, which measurably removes the backward
    photometric drag of view-baked color fields, and it keeps the barrier
    term's weights meaningful as a small correction rather than the dominant
    gradient.
    """

    truncation: float = 0.1
    n_uniform: int = 10
    n_surface: int = 10
    near: float = 0.05
    far: float = 5.0
    jitter: float = 1.0           # 0 = stratum midpoints, 1 = full stratified
    w_rgb: float = 0.05
    w_depth: float = 0.01
    w_sdf: float = 5e5
    w_free_space: float = 1e3
    min_weight_sum: float = 1e-12

    def with_far(self, far: float) -> "RenderConfig":
        return replace(self, far=float(far))


@dataclass(frozen=True)
class LossBreakdown:
    """Unweighted loss components plus the weighted total."""

    rgb: float = 0.0
    depth: float = 0.0
    sdf: float = 0.0
    free_space: float = 0.0
    dynamics: float = 0.0
    total: float = 0.0

    def check_finite(self):
        for name in ("rgb", "depth", "sdf", "free_space", "dynamics", "total"):
            if not np.isfinite(getattr(self, name)):
                raise NumericalError(f"non-finite {name} loss")
        return self


def total_loss(parts: dict, config: RenderConfig, dynamics: float = 0.0) -> LossBreakdown:
    total = (config.w_rgb * parts["rgb"] + config.w_depth * parts["depth"]
             + config.w_sdf * parts["sdf"] + config.w_free_space * parts["free_space"]
             + dynamics)
    return LossBreakdown(rgb=parts["rgb"], depth=parts["depth"], sdf=parts["sdf"],
                         free_space=parts["free_space"], dynamics=dynamics,
                         total=total).check_finite()


def look_at_pose(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera pose at eye with +z toward target and image v-axis pointing down."""
    eye = np.asarray(eye, dtype=float)
    forward = np.asarray(target, dtype=float) - eye
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=float))
    norm = np.linalg.norm(right)
    if norm < 1e-9:
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
        norm = np.linalg.norm(right)
    right = right / norm
    down = np.cross(forward, right)
    return Pose(np.stack([right, down, forward], axis=1), eye)


def pixel_ray(uv, intrinsics: CameraIntrinsics, pose: Pose):
    """World-space ray for one pixel: (origin, unit direction).

    Sample points at z-depth d are origin + d * (R @ K^-1 [u, v, 1]); the
    direction returned here is that vector normalized.
    """
    uv = np.asarray(uv, dtype=float)
    if not (0.0 <= uv[0] <= intrinsics.width and 0.0 <= uv[1] <= intrinsics.height):
        raise ValueError(f"pixel {uv} outside {intrinsics.width}x{intrinsics.height} image")
    ray_world = pose.rotation @ intrinsics.backproject(uv)
    return pose.translation.copy(), ray_world / np.linalg.norm(ray_world)


def stratified_depths(n: int, lo: float, hi: float, jitter: float,
                      rng: np.random.Generator | None) -> np.ndarray:
    """Midpoint-of-stratum samples, optionally jittered within each stratum."""
    if n == 0:
        return np.empty(0)
    width = (hi - lo) / n
    offsets = np.full(n, 0.5)
    if jitter > 0.0 and rng is not None:
        offsets = 0.5 + jitter * (rng.uniform(size=n) - 0.5)
    return lo + (np.arange(n) + offsets) * width


def sample_ray(origin, ray, surface_depth, n_uniform: int, n_surface: int,
               truncation: float, near: float, far: float,
               jitter: float = 0.0, rng: np.random.Generator | None = None):
    """Sample points along one ray: (points (L, 3), depths (L,)).

    n_uniform stratified samples cover [near, far]; when surface_depth is
    given, n_surface additional samples cover [surface_depth - tr,
    surface_depth + tr]. Depths come back strictly increasing.
    """
    if n_uniform + n_surface < 2:
        raise ValueError("need at least 2 samples per ray")
    if not near < far:
        raise ValueError(f"invalid bounds near={near}, far={far}")
    depths = stratified_depths(n_uniform, near, far, jitter, rng)
    if surface_depth is not None and n_surface > 0:
        surf = stratified_depths(n_surface, surface_depth - truncation,
                                 surface_depth + truncation, jitter, rng)
        depths = np.concatenate([depths, surf])
    depths = np.sort(depths)
    for i in range(1, len(depths)):
        if depths[i] <= depths[i - 1]:
            depths[i] = np.nextafter(depths[i - 1], np.inf)
    origin = np.asarray(origin, dtype=float)
    ray = np.asarray(ray, dtype=float)
    points = origin[None, :] + depths[:, None] * ray[None, :]
    return points, depths


def render_weights(sdf: np.ndarray, truncation: float) -> np.ndarray:
    """Sigmoid-product rendering weights; symmetric in sdf, peak 0.25 at 0."""
    a = 1.0 / (1.0 + np.exp(-sdf / truncation))
    return a * (1.0 - a)


@dataclass(frozen=True)
class RenderedPixel:
    color: np.ndarray
    depth: float
    valid: bool


def render_pixel(map_model, samples, min_weight_sum: float = 1e-12) -> RenderedPixel:
    """Weighted-average color and depth along one sampled ray.

    samples is (points (L, 3), depths (L,)) as returned by sample_ray. A
    pixel whose weights sum below min_weight_sum is flagged invalid and must
    be excluded from losses.
    """
    points, depths = samples
    rgb, sdf = map_model.query(np.asarray(points, dtype=float))
    truncation = map_model.truncation
    w = render_weights(np.asarray(sdf), truncation)
    wsum = float(w.sum())
    if wsum < min_weight_sum:
        return RenderedPixel(np.zeros(3), 0.0, False)
    color = (w[:, None] * rgb).sum(axis=0) / wsum
    depth = float((w * depths).sum() / wsum)
    return RenderedPixel(color, depth, True)


def draw_pixel_batch(height: int, width: int, count: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Uniform pixel subsample without replacement: (count, 2) of (row, col)."""
    total = height * width
    count = min(count, total)
    flat = rng.choice(total, size=count, replace=False)
    return np.stack([flat // width, flat % width], axis=1)


# ---------------------------------------------------------------------------
# Batched loss + gradient engine. Frames are concatenated into flat ray
# arrays with a frame index per ray so windows with ragged pixel counts
# batch into single numpy passes.
# ---------------------------------------------------------------------------


@dataclass
class RayBundle:
    """Flattened pixel rays for a set of frames sharing one map snapshot."""

    dirs_cam: np.ndarray     # (N, 3) unnormalized camera-frame rays
    color_meas: np.ndarray   # (N, 3)
    depth_meas: np.ndarray   # (N,) z-depth, 0 = invalid
    frame_index: np.ndarray  # (N,) int into the pose arrays
    n_frames: int
    surface_depth: np.ndarray = field(default=None)  # sampling centers, defaults to depth_meas

    def __post_init__(self):
        if self.surface_depth is None:
            self.surface_depth = self.depth_meas


def bundle_from_frames(frames, pixel_batches) -> RayBundle:
    """Build a RayBundle from per-frame (row, col) pixel index arrays."""
    dirs, colors, depths, index = [], [], [], []
    for f_idx, (frame, pix) in enumerate(zip(frames, pixel_batches)):
        pix = np.asarray(pix)
        uv = np.stack([pix[:, 1] + 0.5, pix[:, 0] + 0.5], axis=1)
        dirs.append(frame.intrinsics.backproject(uv))
        colors.append(frame.color[pix[:, 0], pix[:, 1]])
        depths.append(frame.depth[pix[:, 0], pix[:, 1]])
        index.append(np.full(len(pix), f_idx, dtype=np.int64))
    return RayBundle(
        dirs_cam=np.concatenate(dirs),
        color_meas=np.concatenate(colors),
        depth_meas=np.concatenate(depths),
        frame_index=np.concatenate(index),
        n_frames=len(frames),
    )


def _sample_depth_matrix(bundle: RayBundle, config: RenderConfig,
                         rng: np.random.Generator | None) -> np.ndarray:
    """(N, L) sample depths: stratified uniform plus surface-centered strata.

    Rays without a valid surface depth fill their surface slots with extra
    stratified samples over [near, far].
    """
    n = len(bundle.dirs_cam)
    nu, ns = config.n_uniform, config.n_surface
    span = config.far - config.near

    def strata(count, lo, width):
        offs = np.full((n, count), 0.5)
        if config.jitter > 0.0 and rng is not None:
            offs = 0.5 + config.jitter * (rng.uniform(size=(n, count)) - 0.5)
        return lo + (np.arange(count)[None, :] + offs) * width

    uniform = strata(nu, config.near, span / nu)
    if ns == 0:
        return uniform
    has_surface = bundle.surface_depth > 0.0
    lo = np.where(has_surface,
                  bundle.surface_depth - config.truncation, config.near)[:, None]
    width = np.where(has_surface, 2.0 * config.truncation / ns, span / ns)[:, None]
    surface = strata(ns, lo, width)
    return np.concatenate([uniform, surface], axis=1)


def _query_map(map_model, points_flat: np.ndarray, want_map_grads: bool,
               want_pose_grads: bool):
    """Uniform access to learnable and analytic maps.

    Returns (rgb, sdf, dsdf_dx, drgb_dx, scatter) where scatter is a callable
    (grad_sdf, grad_rgb) -> (map sdf grad, map rgb grad) or None for
    non-optimizable maps.
    """
    if hasattr(map_model, "scatter_gradients"):
        q = map_model.locate(points_flat)
        rgb, sdf = map_model.values_at(q)
        dsdf = drgb = None
        if want_pose_grads:
            dsdf, drgb = map_model.spatial_gradients(q)
        scatter = None
        if want_map_grads:
            scatter = lambda gs, gc: map_model.scatter_gradients(q, gs, gc)
        return rgb, sdf, dsdf, drgb, scatter
    rgb, sdf, dsdf, drgb = map_model.query_with_grads(
        points_flat, want_grads=want_pose_grads)
    return rgb, sdf, dsdf, drgb, None


def volume_loss_and_grads(map_model, rotations, translations, bundle: RayBundle,
                          config: RenderConfig, rng: np.random.Generator | None = None,
                          want_map_grads: bool = False, want_pose_grads: bool = False,
                          depths: np.ndarray | None = None):
    """Reconstruction loss over a ray bundle, with optional analytic gradients.

    Returns (parts, grads) where parts has keys rgb/depth/sdf/free_space and
    n_valid, and grads has pose (F, 6) right-tangents (rotation first) and
    map_sdf / map_rgb parameter arrays when requested.
    """
    rotations = np.asarray(rotations, dtype=float)
    translations = np.asarray(translations, dtype=float)
    n = len(bundle.dirs_cam)
    if depths is None:
        depths = _sample_depth_matrix(bundle, config, rng)
    n_samples = depths.shape[1]
    rays_world = np.einsum("nij,nj->ni", rotations[bundle.frame_index], bundle.dirs_cam)
    origins = translations[bundle.frame_index]
    points = origins[:, None, :] + depths[:, :, None] * rays_world[:, None, :]

    rgb_s, sdf_s, dsdf_dx, drgb_dx, scatter = _query_map(
        map_model, points.reshape(-1, 3), want_map_grads, want_pose_grads)
    rgb_s = rgb_s.reshape(n, n_samples, 3)
    sdf_s = sdf_s.reshape(n, n_samples)

    tr = config.truncation
    sig = 1.0 / (1.0 + np.exp(-sdf_s / tr))
    w = sig * (1.0 - sig)
    wsum = w.sum(axis=1)
    valid = wsum > config.min_weight_sum
    safe_wsum = np.where(valid, wsum, 1.0)
    c_hat = (w[:, :, None] * rgb_s).sum(axis=1) / safe_wsum[:, None]
    d_hat = (w * depths).sum(axis=1) / safe_wsum

    rgb_err = np.where(valid[:, None], c_hat - bundle.color_meas, 0.0)
    n_valid = int(valid.sum())
    loss_rgb = float((rgb_err ** 2).sum() / max(3 * n_valid, 1))

    depth_ok = valid & (bundle.depth_meas > 0.0)
    n_depth = int(depth_ok.sum())
    d_err = np.where(depth_ok, d_hat - bundle.depth_meas, 0.0)
    loss_depth = float((d_err ** 2).sum() / max(n_depth, 1))

    has_depth = (bundle.depth_meas > 0.0)[:, None]
    along = bundle.depth_meas[:, None] - depths         # signed distance along ray
    near_mask = has_depth & (np.abs(along) <= tr)
    fs_mask = has_depth & (along > tr)
    n_near = int(near_mask.sum())
    n_fs = int(fs_mask.sum())
    sdf_err = np.where(near_mask, sdf_s - along, 0.0)
    loss_sdf = float((sdf_err ** 2).sum() / max(n_near, 1))
    fs_err = np.where(fs_mask, sdf_s - tr, 0.0)
    loss_fs = float((fs_err ** 2).sum() / max(n_fs, 1))

    parts = {"rgb": loss_rgb, "depth": loss_depth, "sdf": loss_sdf,
             "free_space": loss_fs, "n_valid": n_valid, "n_depth": n_depth}
    for name in ("rgb", "depth", "sdf", "free_space"):
        if not np.isfinite(parts[name]):
            raise NumericalError(f"non-finite {name} loss")

    grads = {}
    if not (want_map_grads or want_pose_grads):
        return parts, grads

    # Backward pass (weighted by the configured per-term loss weights).
    dL_dchat = (2.0 * config.w_rgb / max(3 * n_valid, 1)) * rgb_err
    dL_ddhat = (2.0 * config.w_depth / max(n_depth, 1)) * d_err
    dL_dc = dL_dchat[:, None, :] * (w / safe_wsum[:, None])[:, :, None]
    dL_dw = ((dL_dchat[:, None, :] * (rgb_s - c_hat[:, None, :])).sum(axis=2)
             + dL_ddhat[:, None] * (depths - d_hat[:, None])) / safe_wsum[:, None]
    dw_ds = w * ((1.0 - sig) - sig) / tr
    dL_ds = (dL_dw * dw_ds
             + (2.0 * config.w_sdf / max(n_near, 1)) * sdf_err
             + (2.0 * config.w_free_space / max(n_fs, 1)) * fs_err)

    if want_map_grads and scatter is not None:
        g_sdf, g_rgb = scatter(dL_ds.reshape(-1), dL_dc.reshape(-1, 3))
        grads["map_sdf"] = g_sdf
        grads["map_rgb"] = g_rgb

    if want_pose_grads:
        # per-sample world-space gradient of the loss w.r.t. the sample point
        g_x = (dL_ds[:, :, None] * dsdf_dx.reshape(n, n_samples, 3)
               + np.einsum("nsk,nskd->nsd", dL_dc,
                           drgb_dx.reshape(n, n_samples, 3, 3)))
        g_trans_per_ray = g_x.sum(axis=1)
        rot_t = rotations[bundle.frame_index].transpose(0, 2, 1)
        g_x_cam = np.einsum("nij,nsj->nsi", rot_t, g_x)
        v_cam = depths[:, :, None] * bundle.dirs_cam[:, None, :]
        g_rot_per_ray = np.cross(v_cam, g_x_cam).sum(axis=1)
        pose_grads = np.zeros((bundle.n_frames, 6))
        np.add.at(pose_grads, bundle.frame_index,
                  np.concatenate([g_rot_per_ray, g_trans_per_ray], axis=1))
        grads["pose"] = pose_grads

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name}")
    return parts, grads


def render_frame(map_model, pose: Pose, intrinsics: CameraIntrinsics,
                 config: RenderConfig, surface_depth: np.ndarray | None = None,
                 rng: np.random.Generator | None = None, chunk: int = 16384):
    """Render a full image from a map: (color (H,W,3), depth (H,W), valid (H,W)).

    surface_depth, when given, centers the surface samples (e.g. the exact
    ray-traced depth during dataset generation, or a measured depth image).
    """
    h, w = intrinsics.height, intrinsics.width
    rows, cols = np.mgrid[0:h, 0:w]
    uv = np.stack([cols.ravel() + 0.5, rows.ravel() + 0.5], axis=1)
    dirs = intrinsics.backproject(uv)
    surf = (np.zeros(h * w) if surface_depth is None
            else np.asarray(surface_depth, dtype=float).ravel())
    color = np.zeros((h * w, 3))
    depth = np.zeros(h * w)
    valid = np.zeros(h * w, dtype=bool)
    tr = config.truncation
    for start in range(0, h * w, chunk):
        sl = slice(start, min(start + chunk, h * w))
        n = sl.stop - sl.start
        bundle = RayBundle(
            dirs_cam=dirs[sl], color_meas=np.zeros((n, 3)),
            depth_meas=surf[sl], frame_index=np.zeros(n, dtype=np.int64),
            n_frames=1)
        depths = _sample_depth_matrix(bundle, config, rng)
        rays_world = dirs[sl] @ pose.rotation.T
        points = (pose.translation[None, None, :]
                  + depths[:, :, None] * rays_world[:, None, :])
        rgb_s, sdf_s = map_model.query(points.reshape(-1, 3))
        rgb_s = rgb_s.reshape(n, -1, 3)
        sdf_s = sdf_s.reshape(n, -1)
        wgt = render_weights(sdf_s, tr)
        wsum = wgt.sum(axis=1)
        ok = wsum > config.min_weight_sum
        safe = np.where(ok, wsum, 1.0)
        color[sl] = (wgt[:, :, None] * rgb_s).sum(axis=1) / safe[:, None]
        depth[sl] = np.where(ok, (wgt * depths).sum(axis=1) / safe, 0.0)
        valid[sl] = ok
    return color.reshape(h, w, 3), depth.reshape(h, w), valid.reshape(h, w)


def reconstruction_loss(map_model, frame: RgbdFrame, pose: Pose,
                        pixel_batch: np.ndarray, config: RenderConfig,
                        rng: np.random.Generator | None = None,
                        surface_depth: np.ndarray | None = None) -> LossBreakdown:
    """Per-frame reconstruction loss over a pixel batch (no dynamics term).

    surface_depth optionally overrides the sampling centers per pixel
    (default: the frame's measured depth).
    """
    pixel_batch = np.asarray(pixel_batch)
    if len(pixel_batch) == 0:
        raise ValueError(f"empty pixel batch for frame t={frame.timestamp}")
    bundle = bundle_from_frames([frame], [pixel_batch])
    if surface_depth is not None:
        bundle.surface_depth = np.asarray(surface_depth, dtype=float)[
            pixel_batch[:, 0], pixel_batch[:, 1]]
    parts, _ = volume_loss_and_grads(
        map_model, pose.rotation[None], pose.translation[None], bundle, config, rng)
    if parts["n_valid"] == 0:
        raise ValueError(
            f"no valid pixels in batch for frame t={frame.timestamp}")
    return total_loss(parts, config)
