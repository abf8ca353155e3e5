"""Learnable dense voxel map: per-voxel TSDF and color with trilinear queries.

The map stands in for a neural scene function: query() is continuous and
piecewise-trilinear in position, and both value arrays are plain optimizer
parameters. Queries outside the grid return the background color and +tr so
rays can exit the volume without branching in the renderer.

The lookup caches corner indices and weights because the renderer's backward
pass revisits them; gradients w.r.t. position use corner differences instead
of materializing per-corner weight derivatives (memory-bound otherwise).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Offsets of the 8 cell corners; index = 4*ix + 2*iy + iz (z fastest).
_CORNERS = np.array([(i, j, k) for i in (0, 1) for j in (0, 1) for k in (0, 1)],
                    dtype=np.int64)


@dataclass
class VoxelQuery:
    """Cached lookup state for one batch of points, reused by the backward pass."""

    base: np.ndarray      # (N, 3) int, lower corner index (zeros when out of bounds)
    frac: np.ndarray      # (N, 3) fractional position inside the cell
    inbounds: np.ndarray  # (N,) bool
    flat: np.ndarray      # (N, 8) flattened corner indices
    weights: np.ndarray   # (N, 8) trilinear weights, zeroed out of bounds
    _axis_w: tuple = field(default=None, repr=False)

    def axis_weights(self):
        """((1-fx, fx), (1-fy, fy), (1-fz, fz)) with out-of-bounds rows zeroed."""
        if self._axis_w is None:
            f = self.frac
            ok = self.inbounds
            self._axis_w = tuple(
                (np.where(ok, 1.0 - f[:, d], 0.0), np.where(ok, f[:, d], 0.0))
                for d in range(3))
        return self._axis_w


def _trilinear_weights(query_frac, inbounds):
    fx, fy, fz = query_frac[:, 0], query_frac[:, 1], query_frac[:, 2]
    wx = np.stack([1.0 - fx, fx], axis=1)
    wy = np.stack([1.0 - fy, fy], axis=1)
    wz = np.stack([1.0 - fz, fz], axis=1)
    w = wx[:, _CORNERS[:, 0]] * wy[:, _CORNERS[:, 1]] * wz[:, _CORNERS[:, 2]]
    w[~inbounds] = 0.0
    return w


class VoxelMap:
    """Dense (sdf, rgb) voxel grid with trilinear interpolation."""

    def __init__(self, origin, cell_size: float, dims,
                 truncation: float = 0.1, background_color=(0.0, 0.0, 0.0)):
        self.origin = np.asarray(origin, dtype=float)
        self.cell_size = float(cell_size)
        self.dims = tuple(int(d) for d in dims)
        if min(self.dims) < 2:
            raise ValueError(f"grid needs at least 2 nodes per axis, got {self.dims}")
        self.truncation = float(truncation)
        self.background_color = np.asarray(background_color, dtype=float)
        # free-space prior: +tr everywhere, mid-gray color
        self.sdf = np.full(self.dims, self.truncation)
        self.rgb = np.full(self.dims + (3,), 0.5)

    @staticmethod
    def for_bounds(lower, upper, cell_size: float, truncation: float = 0.1,
                   margin: float = 0.0, background_color=(0.0, 0.0, 0.0)) -> "VoxelMap":
        lower = np.asarray(lower, dtype=float) - margin
        upper = np.asarray(upper, dtype=float) + margin
        dims = np.maximum(np.ceil((upper - lower) / cell_size).astype(int) + 1, 2)
        return VoxelMap(lower, cell_size, dims, truncation, background_color)

    @staticmethod
    def fused_from_scene(scene, cell_size: float, margin: float = 0.2) -> "VoxelMap":
        """Emulate a converged learned map: truncated scene SDF and albedo at nodes.

        Free space lands exactly at +tr (the free-space supervision target),
        the near-surface band carries true distances, colors come from the
        nearest surface.
        """
        lo, hi = scene.bounds
        vm = VoxelMap.for_bounds(lo, hi, cell_size, truncation=scene.truncation,
                                 margin=margin,
                                 background_color=scene.background_color)
        axes = [vm.origin[d] + np.arange(vm.dims[d]) * vm.cell_size for d in range(3)]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        nodes = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
        rgb, sdf = scene.query(nodes)
        vm.sdf = np.clip(sdf, -vm.truncation, vm.truncation).reshape(vm.dims)
        vm.rgb = rgb.reshape(vm.dims + (3,))
        return vm

    @property
    def n_params(self) -> int:
        return self.sdf.size + self.rgb.size

    def copy(self) -> "VoxelMap":
        out = VoxelMap(self.origin, self.cell_size, self.dims,
                       self.truncation, self.background_color)
        out.sdf = self.sdf.copy()
        out.rgb = self.rgb.copy()
        return out

    def locate(self, points: np.ndarray) -> VoxelQuery:
        points = np.asarray(points, dtype=float)
        grid = (points - self.origin) / self.cell_size
        upper = np.asarray(self.dims, dtype=float) - 1.0
        inb = np.all((grid >= 0.0) & (grid <= upper), axis=-1)
        grid[~inb] = 0.0
        base = np.floor(grid).astype(np.int64)
        base = np.minimum(base, np.asarray(self.dims) - 2)
        frac = grid - base
        flat = np.ravel_multi_index(
            ((base[:, 0, None] + _CORNERS[None, :, 0]),
             (base[:, 1, None] + _CORNERS[None, :, 1]),
             (base[:, 2, None] + _CORNERS[None, :, 2])), self.dims)
        return VoxelQuery(base=base, frac=frac, inbounds=inb, flat=flat,
                          weights=_trilinear_weights(frac, inb))

    def query(self, points: np.ndarray):
        """(rgb (N,3), sdf (N,)); out-of-bounds points get (background, +tr)."""
        return self.values_at(self.locate(points))

    def values_at(self, query: VoxelQuery):
        corner_sdf = self.sdf.reshape(-1)[query.flat]
        corner_rgb = self.rgb.reshape(-1, 3)[query.flat]
        w = query.weights
        sdf = (corner_sdf * w).sum(axis=1)
        rgb = np.einsum("nc,nck->nk", w, corner_rgb)
        oob = ~query.inbounds
        sdf[oob] = self.truncation
        rgb[oob] = self.background_color
        return rgb, sdf

    def spatial_gradients(self, query: VoxelQuery):
        """(d_sdf/dx (N,3), d_rgb/dx (N,3,3)) via corner differences."""
        corner_sdf = self.sdf.reshape(-1)[query.flat]
        corner_rgb = self.rgb.reshape(-1, 3)[query.flat]
        (wx0, wx1), (wy0, wy1), (wz0, wz1) = query.axis_weights()
        n = len(query.flat)
        dsdf = np.empty((n, 3))
        drgb = np.empty((n, 3, 3))
        pair_w = {
            0: (wy0 * wz0, wy1 * wz0, wy0 * wz1, wy1 * wz1),
            1: (wx0 * wz0, wx1 * wz0, wx0 * wz1, wx1 * wz1),
            2: (wx0 * wy0, wx1 * wy0, wx0 * wy1, wx1 * wy1),
        }
        pair_idx = {
            0: ((4, 0), (6, 2), (5, 1), (7, 3)),
            1: ((2, 0), (6, 4), (3, 1), (7, 5)),
            2: ((1, 0), (5, 4), (3, 2), (7, 6)),
        }
        for axis in range(3):
            acc_s = np.zeros(n)
            acc_c = np.zeros((n, 3))
            for w, (hi_c, lo_c) in zip(pair_w[axis], pair_idx[axis]):
                acc_s += w * (corner_sdf[:, hi_c] - corner_sdf[:, lo_c])
                acc_c += w[:, None] * (corner_rgb[:, hi_c] - corner_rgb[:, lo_c])
            dsdf[:, axis] = acc_s / self.cell_size
            drgb[:, :, axis] = acc_c / self.cell_size
        return dsdf, drgb

    def scatter_gradients(self, query: VoxelQuery, grad_sdf: np.ndarray,
                          grad_rgb: np.ndarray):
        """Accumulate dL/d(sample values) into parameter-shaped gradient arrays.

        grad_sdf: (N,) dL/ds_i, grad_rgb: (N, 3) dL/dc_i. Returns
        (sdf_grad (dims), rgb_grad (dims + (3,))).
        """
        w = query.weights
        flat_r = query.flat.ravel()
        n_cells = self.sdf.size
        g_sdf = np.bincount(flat_r, weights=(w * grad_sdf[:, None]).ravel(),
                            minlength=n_cells).reshape(self.dims)
        g_rgb = np.empty(self.dims + (3,))
        for ch in range(3):
            g_rgb[..., ch] = np.bincount(
                flat_r, weights=(w * grad_rgb[:, ch][:, None]).ravel(),
                minlength=n_cells).reshape(self.dims)
        return g_sdf, g_rgb
