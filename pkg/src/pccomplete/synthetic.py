"""Desk-scale synthetic shapes, partial views and occlusion.

Every category is symmetric under z -> -z. Samples are emitted in mirrored
pairs: rows 2i and 2i+1 are (x, y, z) and (x, y, -z). For odd counts the
last row lies on the surface's z = 0 section.
"""

from __future__ import annotations

import numpy as np

from .clouds import PointCloud
from .errors import ContractViolation

CATEGORIES = ("plane-slab", "cylinder", "box-frame", "sphere-shell")

SPHERE_RADIUS = 0.5
CYLINDER_RADIUS, CYLINDER_HALF_HEIGHT = 0.25, 0.35
FRAME_HALF = np.array([0.35, 0.2, 0.25])
SLAB_HALF = np.array([0.45, 0.3, 0.06])


def _sphere(rng, n):
    v = rng.standard_normal((n, 3))
    return SPHERE_RADIUS * v / np.linalg.norm(v, axis=1, keepdims=True)


def _sphere_equator(rng):
    t = rng.uniform(0, 2 * np.pi)
    return SPHERE_RADIUS * np.array([np.cos(t), np.sin(t), 0.0])


def _cylinder(rng, n):
    r, h = CYLINDER_RADIUS, CYLINDER_HALF_HEIGHT
    side, cap = 2 * np.pi * r * 2 * h, np.pi * r * r
    on_side = rng.uniform(0, side + 2 * cap, n) < side
    t = rng.uniform(0, 2 * np.pi, n)
    z = rng.uniform(-h, h, n)
    rad = np.where(on_side, r, r * np.sqrt(rng.uniform(0, 1, n)))
    z = np.where(on_side, z, np.where(rng.uniform(0, 1, n) < 0.5, -h, h))
    return np.stack([rad * np.cos(t), rad * np.sin(t), z], axis=1)


def _cylinder_equator(rng):
    t = rng.uniform(0, 2 * np.pi)
    return np.array([CYLINDER_RADIUS * np.cos(t), CYLINDER_RADIUS * np.sin(t), 0.0])


def _box_edges(half):
    corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]) * half
    edges = []
    for i in range(8):
        for j in range(i + 1, 8):
            if np.count_nonzero(corners[i] != corners[j]) == 1:
                edges.append((corners[i], corners[j]))
    return edges


_FRAME_EDGES = _box_edges(FRAME_HALF)


def _box_frame(rng, n):
    lengths = np.array([np.linalg.norm(b - a) for a, b in _FRAME_EDGES])
    which = rng.choice(len(_FRAME_EDGES), size=n, p=lengths / lengths.sum())
    t = rng.uniform(0, 1, n)[:, None]
    a = np.array([e[0] for e in _FRAME_EDGES])[which]
    b = np.array([e[1] for e in _FRAME_EDGES])[which]
    return a + t * (b - a)


def _box_frame_equator(rng):
    sx, sy = rng.choice([-1, 1], size=2)
    return np.array([sx * FRAME_HALF[0], sy * FRAME_HALF[1], 0.0])


def _box_surface(rng, n, half):
    areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]]) * 4
    axis = rng.choice(3, size=n, p=np.repeat(areas, 1) / areas.sum())
    pts = rng.uniform(-1, 1, (n, 3)) * half
    sign = rng.choice([-1.0, 1.0], size=n)
    pts[np.arange(n), axis] = sign * half[axis]
    return pts


def _slab(rng, n):
    return _box_surface(rng, n, SLAB_HALF)


def _slab_equator(rng):
    # a point on the rim where the z = 0 plane cuts the side faces
    if rng.uniform() < SLAB_HALF[0] / (SLAB_HALF[0] + SLAB_HALF[1]):
        return np.array([rng.uniform(-1, 1) * SLAB_HALF[0], rng.choice([-1, 1]) * SLAB_HALF[1], 0.0])
    return np.array([rng.choice([-1, 1]) * SLAB_HALF[0], rng.uniform(-1, 1) * SLAB_HALF[1], 0.0])


_SAMPLERS = {
    "plane-slab": (_slab, _slab_equator),
    "cylinder": (_cylinder, _cylinder_equator),
    "box-frame": (_box_frame, _box_frame_equator),
    "sphere-shell": (_sphere, _sphere_equator),
}


def gen_synthetic(category: str, n_points: int, seed: int, instance_scale=None) -> PointCloud:
    """Sample ``n_points`` uniformly on a category surface, deterministic per seed.

    ``instance_scale`` (3 per-axis factors) varies instances within a category;
    it is applied before emission so the z-symmetry is kept.
    """
    if category not in _SAMPLERS:
        raise ContractViolation(f"unknown category {category!r}; expected one of {CATEGORIES}")
    if n_points < 16:
        raise ContractViolation("gen_synthetic needs n_points >= 16")
    rng = np.random.default_rng(seed)
    surface, equator = _SAMPLERS[category]
    half = surface(rng, n_points // 2)
    mirrored = half * np.array([1.0, 1.0, -1.0])
    pts = np.empty((2 * half.shape[0], 3))
    pts[0::2] = half
    pts[1::2] = mirrored
    if n_points % 2:
        pts = np.vstack([pts, equator(rng)])
    if instance_scale is not None:
        pts = pts * np.asarray(instance_scale, dtype=np.float64)
    return PointCloud(pts, category=category, id=f"{category}-{seed}")


def visibility_scores(points, viewpoint, method="halfspace"):
    """Higher score = more visible from ``viewpoint`` (a direction)."""
    v = np.asarray(viewpoint, dtype=np.float64)
    norm = np.linalg.norm(v)
    if not np.isfinite(norm) or norm == 0:
        raise ContractViolation("viewpoint must be a non-zero direction")
    v = v / norm
    centered = points - points.mean(axis=0)
    score = centered @ v
    if method == "halfspace":
        return score
    if method == "hpr":
        return score + 10.0 * hidden_point_removal(centered, v * 2.0 * np.abs(centered).max() * 3)
    raise ContractViolation(f"unknown visibility method {method!r}")


def hidden_point_removal(points, camera, radius_factor=100.0):
    """Hidden-point removal by spherical flipping + convex hull; returns a 0/1 visibility mask."""
    from scipy.spatial import ConvexHull

    p = points - camera
    norms = np.linalg.norm(p, axis=1, keepdims=True)
    big_r = norms.max() * radius_factor
    flipped = p + 2 * (big_r - norms) * p / norms
    hull = ConvexHull(np.vstack([flipped, np.zeros(3)]))
    visible = np.zeros(points.shape[0])
    idx = hull.vertices[hull.vertices < points.shape[0]]
    visible[idx] = 1.0
    return visible


def make_partial(cloud: PointCloud, viewpoint, keep_fraction: float, seed: int,
                 method: str = "halfspace") -> PointCloud:
    """Keep the ``round(keep_fraction * N)`` points most visible from ``viewpoint``.

    Ties in the visibility score are broken by a seed-fixed random order.
    Retained points keep their original relative order.
    """
    if not 0 < keep_fraction <= 1:
        raise ContractViolation("keep_fraction must be in (0, 1]")
    pts = cloud.points
    n = pts.shape[0]
    k = max(1, int(round(keep_fraction * n)))
    score = visibility_scores(pts, viewpoint, method)
    jitter = np.random.default_rng(seed).permutation(n)
    order = np.lexsort((jitter, -score))
    keep = np.sort(order[:k])
    return PointCloud(pts[keep], category=cloud.category, id=cloud.id)


def occlude(partial: PointCloud, p: float, seed: int) -> PointCloud:
    """Remove the p% of points nearest to a seed-chosen anchor point (a hole)."""
    if not 0 < p < 100:
        raise ContractViolation(f"occlusion percent must be in (0, 100), got {p}")
    pts = partial.points
    n = pts.shape[0]
    n_remove = int(round(n * p / 100.0))
    if n - n_remove < 1:
        raise ContractViolation(f"occluding {p}% of {n} points leaves nothing")
    anchor = pts[np.random.default_rng(seed).integers(n)]
    d2 = ((pts - anchor) ** 2).sum(axis=1)
    order = np.argsort(d2, kind="stable")
    keep = np.sort(order[n_remove:])
    return PointCloud(pts[keep], category=partial.category, id=partial.id)
