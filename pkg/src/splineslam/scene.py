"""Analytic signed-distance scenes: exact ground truth for synthetic sequences.

A scene is a composition of primitives (an enclosing room box plus convex
objects) whose signed distance is exact in free space. The SDF sign
convention is positive in observable free space, negative inside solids, so
the scene distance is the pointwise minimum over primitives. Colors are
per-primitive albedos with an optional smooth sinusoidal modulation that
gives the photometric losses a dense, differentiable texture signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Texture:
    """Smooth multiplicative albedo modulation m(x) = 1 - amp*(1 - sin(k.x + phase))/2."""

    amplitude: float = 0.0
    frequency: tuple[float, float, float] = (0.0, 0.0, 0.0)
    phase: float = 0.0

    def modulation(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Returns (m (N,), dm/dx (N,3))."""
        if self.amplitude == 0.0:
            n = len(points)
            return np.ones(n), np.zeros((n, 3))
        k = np.asarray(self.frequency, dtype=float)
        arg = points @ k + self.phase
        m = 1.0 - 0.5 * self.amplitude * (1.0 - np.sin(arg))
        dm = (0.5 * self.amplitude * np.cos(arg))[:, None] * k[None, :]
        return m, dm

    def to_spec(self) -> dict:
        return {"amplitude": self.amplitude,
                "frequency": list(self.frequency),
                "phase": self.phase}


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float
    albedo: tuple[float, float, float]
    texture: Texture = field(default_factory=Texture)

    def sdf(self, points: np.ndarray) -> np.ndarray:
        return np.linalg.norm(points - np.asarray(self.center), axis=-1) - self.radius

    def sdf_grad(self, points: np.ndarray) -> np.ndarray:
        rel = points - np.asarray(self.center)
        dist = np.linalg.norm(rel, axis=-1, keepdims=True)
        return rel / np.maximum(dist, 1e-12)

    def to_spec(self) -> dict:
        return {"type": "sphere", "center": list(self.center),
                "radius": self.radius, "albedo": list(self.albedo),
                "texture": self.texture.to_spec()}


def _box_sdf(rel: np.ndarray, half: np.ndarray) -> np.ndarray:
    q = np.abs(rel) - half
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    return outside + inside


def _box_sdf_grad(rel: np.ndarray, half: np.ndarray) -> np.ndarray:
    q = np.abs(rel) - half
    sign = np.where(rel >= 0.0, 1.0, -1.0)
    pos = np.maximum(q, 0.0)
    norm = np.linalg.norm(pos, axis=-1, keepdims=True)
    grad_out = sign * pos / np.maximum(norm, 1e-12)
    # inside: gradient points along the axis of the least-deep face
    axis = np.argmax(q, axis=-1)
    grad_in = np.zeros_like(rel)
    rows = np.arange(len(rel))
    grad_in[rows, axis] = sign[rows, axis]
    is_inside = np.max(q, axis=-1) < 0.0
    return np.where(is_inside[:, None], grad_in, grad_out)


@dataclass(frozen=True)
class Box:
    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]
    albedo: tuple[float, float, float]
    texture: Texture = field(default_factory=Texture)

    def sdf(self, points: np.ndarray) -> np.ndarray:
        return _box_sdf(points - np.asarray(self.center), np.asarray(self.half_extents))

    def sdf_grad(self, points: np.ndarray) -> np.ndarray:
        return _box_sdf_grad(points - np.asarray(self.center), np.asarray(self.half_extents))

    def to_spec(self) -> dict:
        return {"type": "box", "center": list(self.center),
                "half_extents": list(self.half_extents), "albedo": list(self.albedo),
                "texture": self.texture.to_spec()}


@dataclass(frozen=True)
class Room:
    """Axis-aligned room: an inverted box, positive inside (free space)."""

    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]
    albedo: tuple[float, float, float]
    texture: Texture = field(default_factory=Texture)

    def sdf(self, points: np.ndarray) -> np.ndarray:
        return -_box_sdf(points - np.asarray(self.center), np.asarray(self.half_extents))

    def sdf_grad(self, points: np.ndarray) -> np.ndarray:
        return -_box_sdf_grad(points - np.asarray(self.center), np.asarray(self.half_extents))

    def to_spec(self) -> dict:
        return {"type": "room", "center": list(self.center),
                "half_extents": list(self.half_extents), "albedo": list(self.albedo),
                "texture": self.texture.to_spec()}


_PRIMITIVE_TYPES = {"sphere": Sphere, "box": Box, "room": Room}


class AnalyticScene:
    """Closed-form scene SDF with per-primitive albedo; not optimizable.

    query() returns the exact (untruncated) signed distance: beyond the
    truncation band the magnitude is only informative, which is exactly what
    the volume-rendering weights need to decay in free space.
    """

    def __init__(self, primitives, truncation: float = 0.1,
                 background_color=(0.0, 0.0, 0.0)):
        if not primitives:
            raise ValueError("scene needs at least one primitive")
        self.primitives = list(primitives)
        self.truncation = float(truncation)
        self.background_color = np.asarray(background_color, dtype=float)
        rooms = [p for p in self.primitives if isinstance(p, Room)]
        self._room = rooms[0] if rooms else None

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounds of the observable region."""
        if self._room is not None:
            c = np.asarray(self._room.center)
            h = np.asarray(self._room.half_extents)
            return c - h, c + h
        los, his = [], []
        for p in self.primitives:
            c = np.asarray(p.center)
            r = np.asarray(getattr(p, "half_extents", getattr(p, "radius", 0.0)))
            los.append(c - r)
            his.append(c + r)
        return np.min(los, axis=0), np.max(his, axis=0)

    @property
    def diameter(self) -> float:
        lo, hi = self.bounds
        return float(np.linalg.norm(hi - lo))

    def contains(self, point: np.ndarray, margin: float = 0.0) -> bool:
        """True if the point is in free space, at least margin from any surface."""
        return bool(self.sdf(np.asarray(point, dtype=float)[None, :])[0] > margin)

    def sdf(self, points: np.ndarray) -> np.ndarray:
        values = np.stack([p.sdf(points) for p in self.primitives])
        return np.min(values, axis=0)

    def query(self, points: np.ndarray):
        """Batched map query: (rgb (N,3), sdf (N,))."""
        rgb, sdf, _, _ = self.query_with_grads(points, want_grads=False)
        return rgb, sdf

    def query_with_grads(self, points: np.ndarray, want_grads: bool = True):
        """Returns (rgb, sdf, d_sdf/dx (N,3), d_rgb/dx (N,3,3))."""
        points = np.asarray(points, dtype=float)
        values = np.stack([p.sdf(points) for p in self.primitives])
        winner = np.argmin(values, axis=0)
        sdf = values[winner, np.arange(points.shape[0])]
        rgb = np.empty((points.shape[0], 3))
        dsdf = np.zeros((points.shape[0], 3)) if want_grads else None
        drgb = np.zeros((points.shape[0], 3, 3)) if want_grads else None
        for idx, prim in enumerate(self.primitives):
            mask = winner == idx
            if not np.any(mask):
                continue
            pts = points[mask]
            mod, dmod = prim.texture.modulation(pts)
            albedo = np.asarray(prim.albedo, dtype=float)
            rgb[mask] = mod[:, None] * albedo[None, :]
            if want_grads:
                dsdf[mask] = prim.sdf_grad(pts)
                drgb[mask] = albedo[None, :, None] * dmod[:, None, :]
        return rgb, sdf, dsdf, drgb

    def trace_depth(self, origin: np.ndarray, directions: np.ndarray,
                    max_dist: float, eps: float = 1e-9,
                    max_steps: int = 256) -> np.ndarray:
        """Sphere-trace exact z-depth for unnormalized rays from one origin.

        directions are the unnormalized back-projected rays; the returned
        values are z-depths d such that origin + d * direction hits the first
        surface. Rays that never hit within max_dist return 0 (invalid).
        """
        directions = np.asarray(directions, dtype=float)
        norms = np.linalg.norm(directions, axis=-1)
        units = directions / norms[:, None]
        n = len(directions)
        dist = np.zeros(n)
        active = np.ones(n, dtype=bool)
        for _ in range(max_steps):
            pts = origin[None, :] + dist[active, None] * units[active]
            step = self.sdf(pts)
            dist_active = dist[active] + step
            hit = step < eps
            overshoot = dist_active > max_dist
            dist[active] = dist_active
            still = ~(hit | overshoot)
            idx = np.flatnonzero(active)
            active[idx[~still]] = False
            if not np.any(active):
                break
        arc = dist.copy()
        arc[(arc > max_dist) | active] = 0.0  # miss or non-converged
        return arc / norms

    def to_spec(self) -> dict:
        return {
            "truncation": self.truncation,
            "background_color": self.background_color.tolist(),
            "primitives": [p.to_spec() for p in self.primitives],
        }

    @staticmethod
    def from_spec(spec: dict) -> "AnalyticScene":
        prims = []
        for entry in spec["primitives"]:
            entry = dict(entry)
            kind = entry.pop("type")
            if kind not in _PRIMITIVE_TYPES:
                raise ValueError(f"unknown primitive type {kind!r}")
            tex_spec = entry.pop("texture", None)
            tex = Texture(**tex_spec) if tex_spec else Texture()
            entry = {k: tuple(v) if isinstance(v, list) else v
                     for k, v in entry.items()}
            prims.append(_PRIMITIVE_TYPES[kind](**entry, texture=tex))
        return AnalyticScene(
            prims,
            truncation=spec.get("truncation", 0.1),
            background_color=tuple(spec.get("background_color", (0.0, 0.0, 0.0))),
        )


def default_scene(truncation: float = 0.1) -> AnalyticScene:
    """Desk-scale demo room: 4 x 3 x 2.5 m, a central table plus wall relief.

    The pillars, ledges and wall boxes put depth discontinuities into every
    inward view, so camera motion parallel to a wall stays geometrically
    observable; the central corridor is kept clear for orbital trajectories.
    """
    return AnalyticScene([
        Room(center=(0.0, 0.0, 1.25), half_extents=(2.0, 1.5, 1.25),
             albedo=(0.75, 0.72, 0.68),
             texture=Texture(0.6, (3.1, 2.3, 1.7), 0.4)),
        # central furniture
        Box(center=(0.0, 0.0, 0.35), half_extents=(0.55, 0.4, 0.35),
            albedo=(0.55, 0.4, 0.25), texture=Texture(0.5, (4.3, 5.7, 2.9), 2.3)),
        Sphere(center=(0.2, 0.08, 0.92), radius=0.22, albedo=(0.8, 0.25, 0.2),
               texture=Texture(0.5, (5.0, 4.2, 3.1), 1.1)),
        Box(center=(-0.28, -0.12, 0.81), half_extents=(0.12, 0.1, 0.11),
            albedo=(0.2, 0.45, 0.8), texture=Texture(0.5, (6.1, 3.3, 4.9), 0.0)),
        # wall relief: pillars and ledges leaving the orbit corridor clear
        Box(center=(1.8, 0.7, 1.0), half_extents=(0.2, 0.18, 1.0),
            albedo=(0.35, 0.6, 0.75), texture=Texture(0.5, (2.7, 6.2, 3.8), 1.7)),
        Box(center=(-1.82, -0.5, 1.25), half_extents=(0.18, 0.25, 1.25),
            albedo=(0.75, 0.55, 0.2), texture=Texture(0.5, (5.3, 2.9, 6.1), 0.6)),
        Box(center=(0.6, 1.32, 1.5), half_extents=(0.35, 0.18, 0.22),
            albedo=(0.3, 0.65, 0.35), texture=Texture(0.5, (6.4, 3.7, 2.5), 2.9)),
        Box(center=(-0.8, 1.34, 0.6), half_extents=(0.3, 0.16, 0.6),
            albedo=(0.65, 0.3, 0.6), texture=Texture(0.5, (3.4, 5.1, 4.4), 1.3)),
        Box(center=(-0.4, -1.33, 1.7), half_extents=(0.45, 0.17, 0.25),
            albedo=(0.25, 0.5, 0.7), texture=Texture(0.5, (4.8, 3.2, 5.6), 0.2)),
        Box(center=(0.9, -1.31, 0.8), half_extents=(0.25, 0.19, 0.8),
            albedo=(0.7, 0.65, 0.3), texture=Texture(0.5, (2.9, 4.6, 6.0), 2.1)),
        Sphere(center=(1.55, -0.85, 2.0), radius=0.28, albedo=(0.5, 0.35, 0.75),
               texture=Texture(0.5, (5.9, 4.1, 3.3), 1.9)),
        Box(center=(1.5, 1.15, 0.25), half_extents=(0.35, 0.3, 0.25),
            albedo=(0.45, 0.7, 0.6), texture=Texture(0.5, (3.9, 6.3, 2.2), 0.9)),
    ], truncation=truncation)
