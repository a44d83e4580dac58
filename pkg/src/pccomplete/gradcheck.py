"""Central finite-difference gradient checks (64-bit only)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .tensor import Tensor, backward, no_grad


class GradCheckError(RuntimeError):
    """The checked function is not deterministic or not usable for a check."""


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: float = 0.0
    checked: int = 0
    failures: list = field(default_factory=list)  # (input index, flat index, analytic, numeric, rel)

    @property
    def passed(self) -> bool:
        return not self.failures

    def __str__(self):
        status = "pass" if self.passed else f"FAIL ({len(self.failures)} elements)"
        return f"gradcheck {status}: {self.checked} elements, max rel err {self.max_rel_error:.3e}"


def relative_error(analytic, numeric, floor=1e-7):
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from
    being judged purely relatively."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(f, inputs, eps=1e-5, tolerance=1e-4, max_elements=None, rng=None, floor=1e-7):
    """Compare analytic gradients of scalar ``f(*inputs)`` with central differences.

    ``inputs`` are leaf tensors with ``requires_grad=True``. With
    ``max_elements`` set, at most that many elements per input are probed,
    chosen by ``rng``.
    """
    inputs = list(inputs)
    for t in inputs:
        if t.dtype != np.float64:
            raise ContractViolation("grad_check runs in 64-bit mode only")
    for t in inputs:
        t.grad = None
    out = f(*inputs)
    if out.size != 1:
        raise ContractViolation("grad_check needs a scalar-valued function")
    base = out.item()
    backward(out, inputs)
    with no_grad():
        again = f(*inputs).item()
    if again != base:
        raise GradCheckError(f"function is not deterministic: {base!r} vs {again!r}")

    report = GradCheckReport(tolerance=tolerance)
    rng = rng if rng is not None else np.random.default_rng(0)
    for k, t in enumerate(inputs):
        t.data = np.ascontiguousarray(t.data)
        analytic = t.grad.reshape(-1)
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            idx = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
        for i in idx:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                plus = f(*inputs).item()
                flat[i] = orig - eps
                minus = f(*inputs).item()
            flat[i] = orig
            numeric = (plus - minus) / (2 * eps)
            rel = float(relative_error(analytic[i], numeric, floor))
            report.checked += 1
            report.max_rel_error = max(report.max_rel_error, rel)
            if rel >= tolerance:
                report.failures.append((k, int(i), float(analytic[i]), numeric, rel))
    return report
