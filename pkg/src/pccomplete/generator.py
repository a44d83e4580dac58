"""Cascaded refinement generator: encoder, coarse decoder, lifting module."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractViolation
from .geometry import farthest_point_sample, grid_codes, mirror_xy
from .layers import MLP, Linear, Module
from .tensor import Tensor


@dataclass
class GeneratorConfig:
    num_coarse: int = 512
    latent_width: int = 1024
    enc1_widths: tuple = (128, 256)
    enc2_widths: tuple = (512, 1024)
    coarse_widths: tuple = (1024, 1024)
    lift_widths: tuple = (256, 128, 64)
    ce_group: int = 4
    grid_scale: float = 0.05
    fps_start: int = 0
    use_mean_shape: bool = True
    use_contraction_expansion: bool = True
    use_mirror: bool = True

    def __post_init__(self):
        if self.enc2_widths[-1] != self.latent_width:
            raise ContractViolation("last encoder width must equal latent_width")
        if len(self.lift_widths) < 2:
            raise ContractViolation("lift_widths needs at least two hidden layers")
        if self.lift_widths[1] % 2:
            raise ContractViolation("contraction input width (lift_widths[1]) must be even")

    @property
    def resolutions(self) -> tuple:
        return tuple(2 * self.num_coarse * 2 ** k for k in range(1, 5))

    def lifts_for(self, resolution: int) -> int:
        if resolution not in self.resolutions:
            raise ContractViolation(
                f"unsupported resolution {resolution}; supported: {list(self.resolutions)}")
        return self.resolutions.index(resolution) + 1


class Encoder(Module):
    """Two stacked shared-MLP + max-pool stages; the first stage's pooled
    feature is tiled back onto every point before the second stage."""

    def __init__(self, cfg: GeneratorConfig, rng):
        super().__init__()
        self.h1 = self.add_child("h1", MLP(3, cfg.enc1_widths, rng))
        g = cfg.enc1_widths[-1]
        self.h2_in = self.add_child("h2_in", Linear(2 * g, cfg.enc2_widths[0], rng))
        self.h2 = self.add_child("h2", MLP(cfg.enc2_widths[0], cfg.enc2_widths[1:], rng))
        self.pooled_width = g

    def __call__(self, points) -> Tensor:
        p = points if isinstance(points, Tensor) else Tensor(points)
        if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] != 3:
            raise ContractViolation(f"encoder needs a non-empty (N, 3) cloud, got {p.shape}")
        n = p.shape[0]
        local = self.h1(p)
        pooled, _ = T.max_axis(local, 0)
        pooled = T.reshape(pooled, (1, self.pooled_width))
        # concat([local, tile(pooled)]) @ W, with the pooled half computed once
        w_local, w_pooled = self.h2_in.split_rows([self.pooled_width, self.pooled_width])
        h = (T.matmul(local, w_local)
             + T.tile_rows(T.matmul(pooled, w_pooled) + self.h2_in.bias, n))
        h = self.h2(T.relu(h))
        f, _ = T.max_axis(h, 0)
        return T.reshape(f, (1, f.size))


class CoarseDecoder(Module):
    def __init__(self, cfg: GeneratorConfig, rng):
        super().__init__()
        self.num_coarse = cfg.num_coarse
        self.mlp = self.add_child("fc", MLP(cfg.latent_width, tuple(cfg.coarse_widths) + (3 * cfg.num_coarse,), rng))

    def __call__(self, f: Tensor) -> Tensor:
        return T.reshape(self.mlp(f), (self.num_coarse, 3))


class LiftingModule(Module):
    """Doubles the point count and predicts per-point displacements.

    Per duplicated row the input feature is [xyz, f_m, f, grid code]. Two
    shared layers produce features of width C1; the contraction MLP maps each
    row to C1/2 and ``ce_group`` consecutive rows are merged (width 2*C1 per
    merged row), the expansion MLP maps back to ``ce_group * C1`` which is
    unfolded to one C1-wide residual per row.
    """

    def __init__(self, cfg: GeneratorConfig, rng):
        super().__init__()
        self.cfg = cfg
        w = cfg.lift_widths
        latent = cfg.latent_width
        self.in_sizes = [3, latent, latent, 2]
        self.first = self.add_child("mlp0", Linear(sum(self.in_sizes), w[0], rng))
        self.second = self.add_child("mlp1", Linear(w[0], w[1], rng))
        c1, g = w[1], cfg.ce_group
        self.contract = self.add_child("contract", Linear(c1, c1 // 2, rng))
        self.expand = self.add_child("expand", Linear(g * c1 // 2, g * c1, rng))
        self.tail = self.add_child("head", MLP(c1, tuple(w[2:]) + (3,), rng))

    @property
    def displacement_layer(self) -> Linear:
        return self.tail.layers[-1]

    def __call__(self, points: Tensor, f: Tensor, f_m: Tensor) -> Tensor:
        m = points.shape[0]
        rows = 2 * m
        g = self.cfg.ce_group
        tiled = T.tile_rows(points, 2)
        codes = Tensor(grid_codes(m, 2, self.cfg.grid_scale, dtype=points.dtype))
        w_xyz, w_mean, w_f, w_code = self.first.split_rows(self.in_sizes)
        # the f_m and f columns are identical on every row: project once, then tile
        shared = self.first.bias + T.matmul(f, w_f)
        if self.cfg.use_mean_shape:
            shared = shared + T.matmul(f_m, w_mean)
        h = T.matmul(tiled, w_xyz) + T.matmul(codes, w_code) + T.tile_rows(shared, rows)
        h = T.relu(h)
        h = T.relu(self.second(h))
        if self.cfg.use_contraction_expansion:
            if rows % g:
                raise ContractViolation(f"{rows} rows cannot be grouped by {g}")
            c1 = h.shape[1]
            contracted = T.reshape(T.relu(self.contract(h)), (rows // g, g * c1 // 2))
            expanded = T.reshape(self.expand(contracted), (rows, c1))
            h = h + expanded
        return tiled + self.tail(h)


class Generator(Module):
    def __init__(self, cfg: GeneratorConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.encoder = self.add_child("encoder", Encoder(cfg, rng))
        self.coarse = self.add_child("coarse", CoarseDecoder(cfg, rng))
        self.lifting = self.add_child("lifting", LiftingModule(cfg, rng))

    def encode(self, points) -> Tensor:
        return self.encoder(points)

    def merge_inputs(self, partial, p_coarse: Tensor) -> Tensor:
        """FPS-subsample N_c points from the partial cloud (and its mirror
        image) and stack them above the coarse output."""
        pts = np.asarray(getattr(partial, "points", partial), dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ContractViolation("merge_inputs needs a non-empty partial cloud")
        pool = np.vstack([pts, mirror_xy(pts)]) if self.cfg.use_mirror else pts
        nc = self.cfg.num_coarse
        order = farthest_point_sample(pool, min(nc, len(pool)), self.cfg.fps_start)
        if len(order) < nc:
            order = order[np.arange(nc) % len(order)]
        sampled = Tensor(pool[order], dtype=p_coarse.dtype)
        return T.concat_rows([sampled, p_coarse])

    def _prior(self, f_m, like: Tensor) -> Tensor:
        if f_m is None:
            return Tensor(np.zeros((1, self.cfg.latent_width)), dtype=like.dtype)
        f_m = f_m if isinstance(f_m, Tensor) else Tensor(np.asarray(f_m).reshape(1, -1), dtype=like.dtype)
        if f_m.size != self.cfg.latent_width:
            raise ContractViolation("mean-shape vector width differs from latent width")
        return T.reshape(f_m, (1, self.cfg.latent_width))

    def decode(self, f: Tensor, partial, resolution: int, f_m=None, return_stages=False):
        """Coarse decode, merge with the partial input, then lift until the
        requested resolution. The same lifting parameters serve every step."""
        lifts = self.cfg.lifts_for(resolution)
        prior = self._prior(f_m, f)
        p_coarse = self.coarse(f)
        current = self.merge_inputs(partial, p_coarse)
        stages = [current]
        for _ in range(lifts):
            current = self.lifting(current, f, prior)
            stages.append(current)
        if return_stages:
            return p_coarse, current, stages
        return p_coarse, current

    def complete(self, partial, resolution: int, f_m=None):
        """Returns (P_coarse, P_fine) as tensors."""
        pts = np.asarray(getattr(partial, "points", partial))
        f = self.encode(Tensor(pts))
        return self.decode(f, pts, resolution, f_m)

    def interpolate(self, partial_a, partial_b, steps: int, resolution: int,
                    f_m_a=None, f_m_b=None, conditioning: str = "a"):
        """Decode linear blends of the two latent codes.

        ``conditioning`` picks the partial cloud fed to the skip path: ``"a"``
        holds it fixed to ``partial_a``, ``"b"`` to ``partial_b`` and
        ``"nearest"`` uses whichever endpoint alpha is closer to (``a`` at 0.5).
        Mean-shape priors are blended with the same weights.
        """
        if steps < 2:
            raise ContractViolation("interpolation needs steps >= 2")
        if conditioning not in ("a", "b", "nearest"):
            raise ContractViolation(f"unknown conditioning {conditioning!r}")
        pa = np.asarray(getattr(partial_a, "points", partial_a))
        pb = np.asarray(getattr(partial_b, "points", partial_b))
        with T.no_grad():
            fa, fb = self.encode(Tensor(pa)), self.encode(Tensor(pb))
            ma, mb = self._prior(f_m_a, fa), self._prior(f_m_b, fa)
            outputs = []
            for alpha in np.linspace(0.0, 1.0, steps):
                f = _lerp(fa, fb, alpha)
                prior = _lerp(ma, mb, alpha)
                if conditioning == "a" or (conditioning == "nearest" and alpha <= 0.5):
                    skip = pa
                else:
                    skip = pb
                _, fine = self.decode(f, skip, resolution, prior)
                outputs.append((float(alpha), fine.data))
        return outputs


def _lerp(a: Tensor, b: Tensor, alpha: float) -> Tensor:
    """Blend anchored at the nearer endpoint: exact at alpha 0 and 1, and
    constant when a equals b."""
    if alpha <= 0.5:
        return a + (b - a) * alpha
    return b + (a - b) * (1.0 - alpha)


def build_mean_shapes(clouds_by_category: dict, encoder) -> dict:
    """Per-category arithmetic mean of encoder embeddings of complete clouds."""
    table = {}
    with T.no_grad():
        for cat in sorted(clouds_by_category):
            clouds = clouds_by_category[cat]
            if not clouds:
                raise ContractViolation(f"category {cat!r} has no instances")
            acc = None
            for c in clouds:
                f = encoder(Tensor(np.asarray(getattr(c, "points", c)))).data.reshape(-1).astype(np.float64)
                acc = f.copy() if acc is None else acc + f
            table[cat] = acc / len(clouds)
    return table
