"""Central finite-difference oracle for taped gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import NonFiniteError, Tape, Tensor, backward


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_input: dict[str, float] = field(default_factory=dict)
    coords_checked: int = 0


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    names: Sequence[str] | None = None,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f(*inputs)`` with central differences.

    ``f`` must be deterministic and return a 1x1 tensor.  With
    ``max_coords`` only that many randomly chosen coordinates per input are
    perturbed; otherwise every coordinate is.
    """
    for t in inputs:
        if t.data.dtype != np.float64:
            raise TypeError("grad_check needs float64 inputs")
        t.requires_grad = True
        t.grad = None
    with Tape():
        out = f(*inputs)
        backward(out)
    analytic = [t.grad.copy() for t in inputs]

    def value() -> float:
        v = f(*inputs).item()
        if not np.isfinite(v):
            raise NonFiniteError("grad_check: objective became non-finite")
        return v

    report = GradCheckReport(max_rel_error=0.0)
    names = names or [t.name or f"input{i}" for i, t in enumerate(inputs)]
    rng = rng or np.random.default_rng(0)
    for name, t, a in zip(names, inputs, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst = 0.0
        for k in idx:
            orig = flat[k]
            flat[k] = orig + eps
            fp = value()
            flat[k] = orig - eps
            fm = value()
            flat[k] = orig
            num = (fp - fm) / (2 * eps)
            err = float(relative_error(np.array(a.reshape(-1)[k]), np.array(num)))
            worst = max(worst, err)
        report.per_input[name] = worst
        report.coords_checked += len(idx)
        report.max_rel_error = max(report.max_rel_error, worst)
    return report
