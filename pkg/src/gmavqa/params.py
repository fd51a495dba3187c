"""Learnable weight containers shared by the encoder, GMA stacks and head."""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Iterator

import numpy as np

from .tensor import Tensor, add, matmul


# sqrt(3) makes the weight variance 1/fan_in, so activations keep their scale
# through the many chained maps of a deep stack.
VARIANCE_PRESERVING = float(np.sqrt(3.0))


def uniform_init(rng: np.random.Generator, fan_in: int, shape: tuple[int, int], dtype=np.float64,
                 gain: float = 1.0) -> Tensor:
    """Uniform in ``+-gain / sqrt(fan_in)``."""
    bound = gain / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


@dataclass
class Linear:
    """Row-vector map ``x @ weight (+ bias)``; weight is ``in x out``."""

    weight: Tensor
    bias: Tensor | None = None

    @classmethod
    def init(cls, rng, d_in: int, d_out: int, bias: bool = True, dtype=np.float64,
             gain: float = VARIANCE_PRESERVING) -> "Linear":
        w = uniform_init(rng, d_in, (d_in, d_out), dtype, gain)
        b = uniform_init(rng, d_in, (1, d_out), dtype) if bias else None
        return cls(w, b)

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x) -> Tensor:
        y = matmul(x, self.weight)
        return y if self.bias is None else add(y, self.bias)


def named_tensors(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Walk dataclasses, lists and tensors, yielding dotted names."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_tensors(item, f"{prefix}.{i}" if prefix else str(i))
    elif hasattr(obj, "__dataclass_fields__"):
        for f in fields(obj):
            if f.metadata.get("skip"):
                continue
            value = getattr(obj, f.name)
            if value is None or isinstance(value, (int, float, str, bool)):
                continue
            yield from named_tensors(value, f"{prefix}.{f.name}" if prefix else f.name)
