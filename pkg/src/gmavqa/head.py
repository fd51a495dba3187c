"""Answer prediction: pool the matched graphs, gate with the question, score."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import Linear
from .tensor import (
    ShapeError,
    Tensor,
    bce_with_logits,
    concat_rows,
    max_over_rows,
    mul,
    relu,
    sigmoid,
)


@dataclass
class HeadParams:
    hidden: Linear  # d -> 2048 at full scale
    out: Linear  # hidden -> N_a

    def __post_init__(self):
        if self.out.d_out < 2:
            raise ValueError(f"answer vocabulary needs at least 2 classes, got {self.out.d_out}")
        if self.hidden.d_out != self.out.d_in:
            raise ShapeError("head layer widths do not chain")

    @property
    def n_answers(self) -> int:
        return self.out.d_out

    @classmethod
    def init(cls, rng, d: int, n_answers: int, hidden: int = 2048, dtype=np.float64) -> "HeadParams":
        return cls(Linear.init(rng, d, hidden, dtype=dtype), Linear.init(rng, hidden, n_answers, dtype=dtype))

    @classmethod
    def zeros(cls, d: int, n_answers: int, hidden: int = 2048) -> "HeadParams":
        def lin(a, b):
            return Linear(Tensor(np.zeros((a, b)), requires_grad=True), Tensor(np.zeros((1, b)), requires_grad=True))

        return cls(lin(d, hidden), lin(hidden, n_answers))


@dataclass
class Prediction:
    logits: Tensor  # B x N_a

    @property
    def scores(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.logits.data))

    @property
    def answer(self) -> np.ndarray:
        return self.logits.data.argmax(axis=1)


def fuse_and_pool(v_m: Tensor, v_n: Tensor, mask_m=None, mask_n=None, seg_m=None, seg_n=None,
                  n_segments: int | None = None) -> Tensor:
    """Stack both graphs' nodes, apply ReLU, max-pool over valid nodes per example."""
    if v_m.shape[1] != v_n.shape[1]:
        raise ShapeError(f"fuse_and_pool: feature dims differ, {v_m.shape} vs {v_n.shape}")
    k1, k2 = v_m.shape[0], v_n.shape[0]
    mask = np.concatenate([
        np.ones(k1, bool) if mask_m is None else np.asarray(mask_m, bool).reshape(-1),
        np.ones(k2, bool) if mask_n is None else np.asarray(mask_n, bool).reshape(-1),
    ])
    segs = None
    if seg_m is not None or seg_n is not None:
        segs = np.concatenate([
            np.zeros(k1, np.int64) if seg_m is None else np.asarray(seg_m),
            np.zeros(k2, np.int64) if seg_n is None else np.asarray(seg_n),
        ])
    h = relu(concat_rows(v_m, v_n))
    return max_over_rows(h, mask, segs, n_segments)


def predict_scores(h: Tensor, q: Tensor, params: HeadParams) -> Prediction:
    """Gate the reasoning feature by the question vector and run the MLP."""
    if h.shape != q.shape:
        raise ShapeError(f"predict_scores: h {h.shape} and q {q.shape} differ")
    if h.shape[1] != params.hidden.d_in:
        raise ShapeError(f"predict_scores: feature dim {h.shape[1]} but head expects {params.hidden.d_in}")
    z = relu(params.hidden(mul(q, h)))
    return Prediction(params.out(z))


def soft_loss(logits: Tensor, targets) -> Tensor:
    """Multi-label soft cross-entropy, summed over classes (and rows)."""
    return bce_with_logits(logits, targets)


def scores(logits: Tensor) -> Tensor:
    return sigmoid(logits)


def vqa_accuracy(votes: int) -> float:
    """Consensus accuracy of an answer given by ``votes`` of 10 annotators."""
    if not 0 <= votes <= 10:
        raise ValueError(f"votes must be in [0, 10], got {votes}")
    return min(1.0, votes / 3.0)


def soft_targets(vote_counts: np.ndarray) -> np.ndarray:
    """Per-class soft scores ``min(1, votes / 3)``."""
    v = np.asarray(vote_counts, dtype=np.float64)
    if (v < 0).any() or (v > 10).any():
        raise ValueError("vote counts must be in [0, 10]")
    return np.minimum(1.0, v / 3.0)


def read_answer_vocab(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]
