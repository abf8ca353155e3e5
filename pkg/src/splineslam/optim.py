"""First-order adaptive-moment optimization over heterogeneous parameter blocks.

Two block kinds cover the whole pipeline: pose blocks (stacked rotations and
translations, updated on-manifold with right-multiplicative increments from a
6-vector tangent per pose) and array blocks (voxel grids or any ndarray).
Given identical seeds and inputs the update sequence is bit-identical: plain
numpy arithmetic, fixed iteration order, no hidden state.
"""

from __future__ import annotations

import numpy as np

from .rendering import NumericalError
from .se3 import exp_so3


class PoseBlock:
    """Stacked poses optimized via per-pose 6-vector tangents (rot, trans)."""

    kind = "pose_tangent"

    def __init__(self, rotations: np.ndarray, translations: np.ndarray, lr: float):
        self.rotations = np.array(rotations, dtype=float)
        self.translations = np.array(translations, dtype=float)
        self.lr = float(lr)

    @property
    def grad_shape(self):
        return (len(self.rotations), 6)

    def apply_update(self, delta: np.ndarray):
        for row, d in enumerate(delta):
            if np.any(d[:3]):
                self.rotations[row] = self.rotations[row] @ exp_so3(d[:3])
            self.translations[row] += d[3:]


class ArrayBlock:
    """Plain ndarray parameters (voxel sdf/color grids, test functions)."""

    kind = "array"

    def __init__(self, values: np.ndarray, lr: float):
        self.values = np.array(values, dtype=float)
        self.lr = float(lr)

    @property
    def grad_shape(self):
        return self.values.shape

    def apply_update(self, delta: np.ndarray):
        self.values += delta


class AdamOptimizer:
    """Adam over named blocks; blocks absent from a step's gradients stay put."""

    def __init__(self, blocks: dict, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.blocks = blocks
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m = {name: np.zeros(b.grad_shape) for name, b in blocks.items()}
        self._v = {name: np.zeros(b.grad_shape) for name, b in blocks.items()}
        self._steps = {name: 0 for name in blocks}

    def step(self, grads: dict):
        for name in sorted(grads):
            block = self.blocks[name]
            g = np.asarray(grads[name], dtype=float)
            if g.shape != tuple(block.grad_shape):
                raise ValueError(
                    f"gradient shape {g.shape} != {block.grad_shape} for {name!r}")
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient for block {name!r}")
            self._steps[name] += 1
            t = self._steps[name]
            m = self._m[name] = self.beta1 * self._m[name] + (1 - self.beta1) * g
            v = self._v[name] = self.beta2 * self._v[name] + (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1 ** t)
            v_hat = v / (1 - self.beta2 ** t)
            block.apply_update(-block.lr * m_hat / (np.sqrt(v_hat) + self.eps))


# ---------------------------------------------------------------------------
# Finite-difference oracles. These are the test-side route for every gradient
# in the package; production code never calls them.
# ---------------------------------------------------------------------------


def numeric_gradient(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of an ndarray."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xb = x.copy().reshape(-1)
    for idx in range(xb.size):
        orig = xb[idx]
        xb[idx] = orig + h
        f_plus = f(xb.reshape(x.shape))
        xb[idx] = orig - h
        f_minus = f(xb.reshape(x.shape))
        xb[idx] = orig
        flat[idx] = (f_plus - f_minus) / (2 * h)
    return grad


def numeric_gradient_subset(f, x: np.ndarray, indices, h: float = 1e-6) -> np.ndarray:
    """Central differences for selected flat indices of an ndarray parameter."""
    x = np.asarray(x, dtype=float).copy()
    flat = x.reshape(-1)
    out = np.zeros(len(indices))
    for row, idx in enumerate(indices):
        orig = flat[idx]
        flat[idx] = orig + h
        f_plus = f(x)
        flat[idx] = orig - h
        f_minus = f(x)
        flat[idx] = orig
        out[row] = (f_plus - f_minus) / (2 * h)
    return out


def numeric_pose_gradient(f, rotations: np.ndarray, translations: np.ndarray,
                          h: float = 1e-7) -> np.ndarray:
    """Central differences along right-tangent directions of stacked poses.

    f takes (rotations, translations) and returns a scalar; the result is
    (n_poses, 6) with rotation components first.
    """
    rotations = np.asarray(rotations, dtype=float)
    translations = np.asarray(translations, dtype=float)
    n = len(rotations)
    grad = np.zeros((n, 6))
    for row in range(n):
        for axis in range(6):
            delta = np.zeros(6)
            delta[axis] = h
            r_plus, t_plus = rotations.copy(), translations.copy()
            r_minus, t_minus = rotations.copy(), translations.copy()
            if axis < 3:
                r_plus[row] = rotations[row] @ exp_so3(delta[:3])
                r_minus[row] = rotations[row] @ exp_so3(-delta[:3])
            else:
                t_plus[row] = translations[row] + delta[3:]
                t_minus[row] = translations[row] - delta[3:]
            grad[row, axis] = (f(r_plus, t_plus) - f(r_minus, t_minus)) / (2 * h)
    return grad
