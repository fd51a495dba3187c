"""Bidirectional GRU over word-embedding sequences.

Sequences of different lengths are encoded together: inputs are laid out
time-major and a per-step validity column freezes each hidden state once
its sequence has ended, so the final state of every sequence is read off
after ``max_len`` steps.  The backward direction sees each sequence
reversed within its own length.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .params import Linear, uniform_init
from .tensor import Tensor, add, concat_cols, matmul, mul, sigmoid, slice_rows, sub, tanh


@dataclass
class GruDirection:
    w_z: Tensor
    w_r: Tensor
    w_h: Tensor
    u_z: Tensor
    u_r: Tensor
    u_h: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor

    @classmethod
    def init(cls, rng, d_in: int, hidden: int, dtype=np.float64) -> "GruDirection":
        def w():
            return uniform_init(rng, hidden, (d_in, hidden), dtype)

        def u():
            return uniform_init(rng, hidden, (hidden, hidden), dtype)

        def b():
            return uniform_init(rng, hidden, (1, hidden), dtype)

        return cls(w(), w(), w(), u(), u(), u(), b(), b(), b())

    @property
    def hidden(self) -> int:
        return self.u_z.shape[0]


@dataclass
class GruParams:
    fwd: GruDirection
    bwd: GruDirection
    proj: Linear

    @classmethod
    def init(cls, rng, d_in: int, d: int, dtype=np.float64) -> "GruParams":
        if d % 2:
            raise ValueError(f"Bi-GRU output dim must be even, got {d}")
        h = d // 2
        return cls(GruDirection.init(rng, d_in, h, dtype), GruDirection.init(rng, d_in, h, dtype),
                   Linear.init(rng, 2 * h, d, dtype=dtype, gain=1.0))

    @property
    def d_in(self) -> int:
        return self.fwd.w_z.shape[0]

    @property
    def d_out(self) -> int:
        return self.proj.d_out


def _run_direction(x: np.ndarray, steps: np.ndarray, n: int, p: GruDirection, dtype) -> Tensor:
    """x: (T*n, d_in) time-major inputs; steps: (T, n, 1) validity."""
    T = steps.shape[0]
    xt = Tensor(x)
    xz, xr, xh = matmul(xt, p.w_z), matmul(xt, p.w_r), matmul(xt, p.w_h)
    h = Tensor(np.zeros((n, p.hidden), dtype=dtype))
    for t in range(T):
        lo, hi = t * n, (t + 1) * n
        z = sigmoid(add(add(slice_rows(xz, lo, hi), matmul(h, p.u_z)), p.b_z))
        r = sigmoid(add(add(slice_rows(xr, lo, hi), matmul(h, p.u_r)), p.b_r))
        cand = tanh(add(add(slice_rows(xh, lo, hi), matmul(mul(r, h), p.u_h)), p.b_h))
        # h' = (1 - z) h + z cand, held fixed past the sequence end
        delta = mul(z, sub(cand, h))
        if not steps[t].all():
            delta = mul(delta, Tensor(steps[t]))
        h = add(h, delta)
    return h


def encode_batch(seqs: Sequence[np.ndarray], gru: GruParams) -> Tensor:
    """Encode many sequences at once; returns one ``1 x d`` row per sequence.

    Empty sequences are allowed here and yield the projection of zero
    states (callers mask such rows).
    """
    n = len(seqs)
    if n == 0:
        raise ValueError("encode_batch needs at least one sequence")
    d_in = gru.d_in
    dtype = gru.proj.weight.data.dtype
    lengths = np.array([len(s) for s in seqs])
    T = max(int(lengths.max()), 1)
    xf = np.zeros((T, n, d_in), dtype=dtype)
    xb = np.zeros((T, n, d_in), dtype=dtype)
    for s, seq in enumerate(seqs):
        L = len(seq)
        if L == 0:
            continue
        seq = np.asarray(seq, dtype=dtype).reshape(L, -1)
        if seq.shape[1] != d_in:
            raise ValueError(f"sequence {s} has embedding dim {seq.shape[1]}, GRU expects {d_in}")
        xf[:L, s] = seq
        xb[:L, s] = seq[::-1]
    steps = (np.arange(T)[:, None] < lengths[None, :]).astype(dtype)[:, :, None]
    hf = _run_direction(xf.reshape(T * n, d_in), steps, n, gru.fwd, dtype)
    hb = _run_direction(xb.reshape(T * n, d_in), steps, n, gru.bwd, dtype)
    return gru.proj(concat_cols(hf, hb))


def final_states(seq: np.ndarray, gru: GruParams) -> tuple[np.ndarray, np.ndarray]:
    """Forward and backward final hidden states (inspection helper)."""
    seq = np.asarray(seq, dtype=gru.proj.weight.data.dtype)
    L = len(seq)
    if L == 0:
        raise ValueError("empty sequence")
    steps = np.ones((L, 1, 1), dtype=seq.dtype)
    hf = _run_direction(seq.reshape(L, -1), steps, 1, gru.fwd, seq.dtype)
    hb = _run_direction(seq[::-1].reshape(L, -1), steps, 1, gru.bwd, seq.dtype)
    return hf.data.copy(), hb.data.copy()


def bigru_encode(seq, gru: GruParams) -> Tensor:
    """Encode one non-empty sequence of embedding vectors to a ``1 x d`` row."""
    if len(seq) == 0:
        raise ValueError("bigru_encode needs a non-empty sequence")
    return encode_batch([np.asarray(seq)], gru)
