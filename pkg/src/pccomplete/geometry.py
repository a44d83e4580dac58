"""Non-differentiable spatial primitives.

All distances are computed with the same expression,
``(ax-bx)**2 + (ay-by)**2 + (az-bz)**2``, so the brute-force and
accelerated neighbor searches agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ContractViolation

_BRUTE_LIMIT = 1 << 16
_KD_CANDIDATES = 2


def _points(x) -> np.ndarray:
    pts = getattr(x, "points", x)
    pts = getattr(pts, "data", pts)
    return np.asarray(pts)


def sq_dist(a, b) -> np.ndarray:
    """Pairwise squared distances, (n, 3) x (m, 3) -> (n, m)."""
    return ((a[:, None, 0] - b[None, :, 0]) ** 2
            + (a[:, None, 1] - b[None, :, 1]) ** 2
            + (a[:, None, 2] - b[None, :, 2]) ** 2)


def _sq_dist_rows(a, b) -> np.ndarray:
    """Squared distances between matching rows of (..., 3) arrays."""
    return (a[..., 0] - b[..., 0]) ** 2 + (a[..., 1] - b[..., 1]) ** 2 + (a[..., 2] - b[..., 2]) ** 2


def farthest_point_sample(cloud, k: int, start_index: int = 0) -> np.ndarray:
    """Greedy max-min selection of ``k`` distinct row indices.

    The first pick is ``start_index``; ties go to the lowest index.
    """
    pts = _points(cloud)
    n = pts.shape[0]
    if not 1 <= k <= n:
        raise ContractViolation(f"farthest_point_sample needs 1 <= k <= N, got k={k}, N={n}")
    if not 0 <= start_index < n:
        raise ContractViolation("start_index out of range")
    picked = np.empty(k, dtype=np.intp)
    min_d = np.full(n, np.inf, dtype=pts.dtype)
    xs, ys, zs = (np.ascontiguousarray(pts[:, j]) for j in range(3))
    current = start_index
    for i in range(k):
        picked[i] = current
        d = (xs - xs[current]) ** 2 + (ys - ys[current]) ** 2 + (zs - zs[current]) ** 2
        np.minimum(min_d, d, out=min_d)
        min_d[current] = -1.0  # already chosen; never re-picked even if duplicates remain
        if i + 1 < k:
            current = int(np.argmax(min_d))
    return picked


@dataclass
class Neighbors:
    index: np.ndarray
    sq_distance: np.ndarray

    @property
    def distance(self) -> np.ndarray:
        return np.sqrt(self.sq_distance)


def nearest_neighbor_brute(a, b, chunk: int = 1024) -> Neighbors:
    a, b = _points(a), _points(b)
    if len(a) == 0 or len(b) == 0:
        raise ContractViolation("nearest_neighbor needs non-empty clouds")
    idx = np.empty(len(a), dtype=np.intp)
    d2 = np.empty(len(a), dtype=np.result_type(a, b))
    for s in range(0, len(a), chunk):
        block = sq_dist(a[s:s + chunk], b)
        j = np.argmin(block, axis=1)
        idx[s:s + chunk] = j
        d2[s:s + chunk] = block[np.arange(len(j)), j]
    return Neighbors(idx, d2)


def nearest_neighbor_kdtree(a, b, tree=None) -> Neighbors:
    """Exact nearest neighbors through a k-d tree, lowest index on ties.

    The tree proposes candidates; distances are then recomputed with the same
    expression as the brute-force path. Points whose tie set might exceed the
    candidate list fall back to a radius query.
    """
    a, b = _points(a), _points(b)
    if len(a) == 0 or len(b) == 0:
        raise ContractViolation("nearest_neighbor needs non-empty clouds")
    tree = tree or cKDTree(b)
    k = min(_KD_CANDIDATES, len(b))
    kd_d, cand = tree.query(a, k=k)
    if k == 1:
        kd_d, cand = kd_d[:, None], cand[:, None]
    exact = _sq_dist_rows(a[:, None, :], b[cand])
    best = exact.min(axis=1)
    big = np.iinfo(np.intp).max
    idx = np.where(exact == best[:, None], cand, big).min(axis=1)
    if k < len(b):
        # relative slack covering the tree's float64 distances vs. the exact
        # expression evaluated in the input precision
        slack = 1e-9 if exact.dtype == np.float64 else 1e-5
        reach = np.sqrt(best.astype(np.float64)) * (1 + slack) + 1e-300
        unsure = np.nonzero(kd_d[:, -1] <= reach)[0]
        for i in unsure:
            members = np.asarray(tree.query_ball_point(a[i], reach[i] * (1 + slack) + 1e-12))
            d = _sq_dist_rows(b[members], a[i])
            m = d.min()
            best[i] = m
            idx[i] = members[d == m].min()
    return Neighbors(idx.astype(np.intp), best)


def nearest_neighbor(a, b, method: str = "auto") -> Neighbors:
    """For every point of ``a`` the index of (and squared distance to) its
    nearest point in ``b``."""
    a, b = _points(a), _points(b)
    if method == "auto":
        method = "brute" if len(a) * len(b) <= _BRUTE_LIMIT else "kdtree"
    if method == "brute":
        return nearest_neighbor_brute(a, b)
    if method == "kdtree":
        return nearest_neighbor_kdtree(a, b)
    raise ContractViolation(f"unknown neighbor search method {method!r}")


@dataclass
class PatchGroup:
    seed_index: int
    radius: float
    members: np.ndarray  # length max_samples, padded with seed_index
    count: int


def ball_query_indices(cloud, seeds, radius: float, max_samples: int, seed_sq_dist=None):
    """Per seed, the first ``max_samples`` in-radius indices in ascending order.

    Returns ``(indices, counts)`` with ``indices`` of shape (S, max_samples);
    short groups are padded with the seed index. ``seed_sq_dist`` may carry a
    precomputed ``sq_dist(cloud[seeds], cloud)`` shared across radii.
    """
    if radius <= 0:
        raise ContractViolation("ball_query radius must be positive")
    if max_samples < 1:
        raise ContractViolation("ball_query max_samples must be >= 1")
    pts = _points(cloud)
    seeds = np.asarray(seeds, dtype=np.intp)
    if seed_sq_dist is None:
        seed_sq_dist = sq_dist(pts[seeds], pts)
    inside = seed_sq_dist <= radius * radius
    rank = np.cumsum(inside, axis=1, dtype=np.int32)
    chosen = inside & (rank <= max_samples)
    out = np.repeat(seeds[:, None], max_samples, axis=1)
    rows, cols = np.nonzero(chosen)
    out[rows, rank[rows, cols] - 1] = cols
    return out, chosen.sum(axis=1)


def ball_query(cloud, seeds, radius: float, max_samples: int) -> list[PatchGroup]:
    idx, counts = ball_query_indices(cloud, seeds, radius, max_samples)
    return [PatchGroup(int(s), float(radius), idx[i], int(counts[i]))
            for i, s in enumerate(np.asarray(seeds))]


def mirror_xy(cloud):
    """Reflect through the xy-plane: (x, y, z) -> (x, y, -z), order preserved."""
    if hasattr(cloud, "with_points"):
        return cloud.with_points(mirror_xy(cloud.points))
    pts = np.array(cloud, dtype=np.float64 if not hasattr(cloud, "dtype") else cloud.dtype)
    pts[:, 2] = -pts[:, 2]
    return pts


def grid_codes(n_points: int, n_copies: int = 2, scale: float = 0.05, dtype=np.float64) -> np.ndarray:
    """2-D codes for ``n_copies`` interleaved copies of ``n_points`` points.

    Copy c of every point gets the diagonal lattice code (t_c, t_c) with t_c
    evenly spaced in [-scale, scale]. Row ``i * n_copies + c`` carries copy c
    of point i, matching ``tile_rows``.
    """
    if n_copies < 2:
        raise ContractViolation("grid_codes needs n_copies >= 2")
    t = np.linspace(-scale, scale, n_copies)
    codes = np.stack([t, t], axis=1)
    return np.tile(codes, (n_points, 1)).astype(dtype)
