"""Chamfer, reconstruction, least-squares GAN and total losses; FPD metric."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractViolation
from .geometry import nearest_neighbor
from .tensor import Tensor

CD_T = "CD-T"
CD_P = "CD-P"


@dataclass
class LossValue:
    value: Tensor
    components: dict = field(default_factory=dict)

    def item(self) -> float:
        return self.value.item()


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(getattr(x, "points", x))


def _row_sq_dist(x: Tensor, y_matched: Tensor) -> Tensor:
    diff = x - y_matched
    ones = Tensor(np.ones((diff.shape[1], 1), dtype=diff.dtype))
    return T.matmul(T.square(diff), ones)


def chamfer(x, y, variant: str = CD_T) -> LossValue:
    """Symmetric Chamfer distance between two (n, 3) clouds.

    CD-T averages squared nearest distances in both directions and sums the
    two; CD-P averages plain distances and halves the sum. The nearest
    neighbor assignment is fixed by the forward pass.
    """
    x, y = _as_tensor(x), _as_tensor(y)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != 3 or y.shape[1] != 3:
        raise ContractViolation(f"chamfer needs (n, 3) clouds, got {x.shape} and {y.shape}")
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise ContractViolation("chamfer of an empty cloud")
    xy = nearest_neighbor(x.data, y.data).index
    yx = nearest_neighbor(y.data, x.data).index
    d_xy = _row_sq_dist(x, T.gather_rows(y, xy))
    d_yx = _row_sq_dist(y, T.gather_rows(x, yx))
    if variant == CD_T:
        a, b = T.mean_axis(d_xy), T.mean_axis(d_yx)
        value = a + b
    elif variant == CD_P:
        a, b = T.mean_axis(T.sqrt(d_xy)), T.mean_axis(T.sqrt(d_yx))
        value = (a + b) * 0.5
    else:
        raise ContractViolation(f"unknown chamfer variant {variant!r}")
    return LossValue(value, {variant: value.item()})


def chamfer_value(x, y, variant: str = CD_T) -> float:
    with T.no_grad():
        return chamfer(x, y, variant).item()


def reconstruction_loss(p_coarse, p_fine, q, lambda_f: float, variant: str = CD_P) -> LossValue:
    """CD(P_coarse, Q) + lambda_f * CD(P_fine, Q)."""
    if lambda_f < 0:
        raise ContractViolation("lambda_f must be non-negative")
    coarse = chamfer(p_coarse, q, variant)
    fine = chamfer(p_fine, q, variant)
    value = coarse.value + fine.value * lambda_f
    return LossValue(value, {"rec_coarse": coarse.item(), "rec_fine": fine.item(),
                             "lambda_f": float(lambda_f), "rec": value.item()})


def _scores(d) -> Tensor:
    d = _as_tensor(d)
    return T.reshape(d, (d.size,))


def lsgan_generator(d_fake) -> LossValue:
    """0.5 * mean((score - 1)^2) over the patch scores."""
    value = T.mean_axis(T.square(_scores(d_fake) - 1.0)) * 0.5
    return LossValue(value, {"gan_g": value.item()})


def lsgan_discriminator(d_fake, d_real) -> LossValue:
    """0.5 * (mean(fake^2) + mean((real - 1)^2))."""
    fake, real = _scores(d_fake), _scores(d_real)
    if fake.size != real.size:
        raise ContractViolation(f"score count mismatch: {fake.size} fake vs {real.size} real")
    value = (T.mean_axis(T.square(fake)) + T.mean_axis(T.square(real - 1.0))) * 0.5
    return LossValue(value, {"gan_d": value.item()})


def total_loss(gan: LossValue | None, rec: LossValue, lam: float = 1.0, beta: float = 200.0) -> LossValue:
    if lam < 0 or beta < 0:
        raise ContractViolation("loss weights must be non-negative")
    value = rec.value * beta
    components = dict(rec.components)
    if gan is not None and lam > 0:
        value = value + gan.value * lam
        components.update(gan.components)
    components["total"] = value.item()
    return LossValue(value, components)


def gaussian_stats(features) -> tuple[np.ndarray, np.ndarray]:
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2:
        raise ContractViolation("features must be a 2-D (samples x channels) array")
    if not np.isfinite(feats).all():
        raise ContractViolation("non-finite features")
    if feats.shape[0] < feats.shape[1] + 1:
        warnings.warn(f"only {feats.shape[0]} samples for {feats.shape[1]} feature channels; "
                      "covariance is rank deficient", RuntimeWarning, stacklevel=3)
    mean = feats.mean(axis=0)
    if feats.shape[0] < 2:
        return mean, np.zeros((feats.shape[1], feats.shape[1]))
    cov = np.cov(feats, rowvar=False).reshape(feats.shape[1], feats.shape[1])
    return mean, 0.5 * (cov + cov.T)


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (mat + mat.T))
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def frechet_distance(m1, s1, m2, s2) -> float:
    """||m1 - m2||^2 + Tr(s1 + s2 - 2 (s1 s2)^(1/2)).

    Tr((s1 s2)^(1/2)) is evaluated as Tr((r s2 r)^(1/2)) with r = s1^(1/2),
    which is symmetric; negative eigenvalues are clamped to zero.
    """
    root = _psd_sqrt(s1)
    inner = root @ s2 @ root
    w = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    tr_cross = np.sqrt(np.clip(w, 0, None)).sum()
    diff = np.asarray(m1) - np.asarray(m2)
    return float(diff @ diff + np.trace(s1) + np.trace(s2) - 2 * tr_cross)


def fpd(features_x, features_y) -> float:
    """Frechet distance between Gaussian fits of two feature sets (rows = samples)."""
    m1, s1 = gaussian_stats(features_x)
    m2, s2 = gaussian_stats(features_y)
    if m1.shape != m2.shape:
        raise ContractViolation("feature widths differ")
    return frechet_distance(m1, s1, m2, s2)
