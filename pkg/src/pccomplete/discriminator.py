"""Patch discriminator: FPS seeds, multi-radius grouping, one score per seed."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractViolation
from .geometry import ball_query_indices, farthest_point_sample, sq_dist
from .layers import MLP, Linear, Module
from .tensor import Tensor


@dataclass
class DiscriminatorConfig:
    num_seeds: int = 256
    radii: tuple = (0.1, 0.2, 0.4)
    max_samples: tuple = (32, 64, 128)
    group_widths: tuple = (64, 128)
    integrate_widths: tuple = (256, 128)
    fps_start: int = 0

    def __post_init__(self):
        if len(self.radii) != len(self.max_samples):
            raise ContractViolation("radii and max_samples must have equal length")


class PatchDiscriminator(Module):
    """Scores are raw regression outputs (no squashing)."""

    def __init__(self, cfg: DiscriminatorConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.branches = [self.add_child(f"group{i}", MLP(3, cfg.group_widths, rng, final_relu=True))
                         for i in range(len(cfg.radii))]
        width = len(cfg.radii) * cfg.group_widths[-1]
        self.integrate = self.add_child("integrate", MLP(width, cfg.integrate_widths, rng, final_relu=True))
        self.head = self.add_child("score", Linear(cfg.integrate_widths[-1], 1, rng))

    def select_seeds(self, points: np.ndarray) -> np.ndarray:
        return farthest_point_sample(points, self.cfg.num_seeds, self.cfg.fps_start)

    def prepare(self, points: np.ndarray, seeds=None):
        """Seed selection and per-radius groups for a cloud. They depend only
        on coordinates, so callers may reuse them for an unchanged cloud."""
        points = np.asarray(points)
        if seeds is None:
            seeds = self.select_seeds(points)
        seeds = np.asarray(seeds, dtype=np.intp)
        d2 = sq_dist(points[seeds], points)
        groups = [ball_query_indices(points, seeds, r, k, d2)[0]
                  for r, k in zip(self.cfg.radii, self.cfg.max_samples)]
        return seeds, groups

    def __call__(self, cloud, seeds=None, groups=None) -> Tensor:
        x = cloud if isinstance(cloud, Tensor) else Tensor(np.asarray(getattr(cloud, "points", cloud)))
        if x.ndim != 2 or x.shape[1] != 3:
            raise ContractViolation(f"discriminator needs an (N, 3) cloud, got {x.shape}")
        if x.shape[0] < self.cfg.num_seeds:
            raise ContractViolation(
                f"cloud has {x.shape[0]} points, fewer than {self.cfg.num_seeds} seeds")
        if groups is None:
            seeds, groups = self.prepare(x.data, seeds)
        s = len(seeds)
        centers = T.gather_rows(x, seeds)
        pooled = []
        for branch, radius, k, idx in zip(self.branches, self.cfg.radii, self.cfg.max_samples, groups):
            members = T.gather_rows(x, idx.reshape(-1))
            local = (members - T.tile_rows(centers, k)) * (1.0 / radius)
            feat = branch(local)
            feat, _ = T.max_axis(T.reshape(feat, (s, k, feat.shape[1])), 1)
            pooled.append(feat)
        h = self.integrate(T.concat(pooled))
        return T.reshape(self.head(h), (s,))


def discriminator_step_inputs(disc: PatchDiscriminator, fake: Tensor, real, detach_fake: bool):
    """Scores for a generated and a real cloud.

    With ``detach_fake`` the generated cloud enters as a constant, so no
    gradient reaches the generator (discriminator update). Otherwise the
    gradient flows through the discriminator into the generator.
    """
    if detach_fake:
        fake = fake.detach()
    real = real if isinstance(real, Tensor) else Tensor(np.asarray(getattr(real, "points", real)), dtype=fake.dtype)
    return disc(fake), disc(real)
