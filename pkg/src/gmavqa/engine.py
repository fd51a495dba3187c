"""The graph matching attention module.

One module runs a dual-stage encoder on each graph (a GCN over the given
edges through a symmetric normalized adjacency, then a GCN over a learned
distance-based adjacency), scores every visual/question node pair with a
symmetrized bilinear affinity, and updates each graph from the other
through two row-softmax attention maps.

Everything works on stacked batches: the nodes of several examples are
concatenated row-wise and a segment id per row keeps the examples apart,
so a single example is just the one-segment case.  Weights multiply row
vectors from the right (``X @ W``).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .params import VARIANCE_PRESERVING, Linear, uniform_init
from .tensor import (
    ShapeError,
    Tensor,
    add,
    concat_cols,
    exp,
    matmul,
    mul,
    relu,
    row_sums,
    scale,
    softmax_rows,
    sub,
    transpose,
)

SIMILARITY_MODES = ("negated", "literal")
ENCODER_MODES = ("dual", "explicit", "implicit")


@dataclass
class GmaParams:
    fc_vis: Linear  # FC11
    fc_q: Linear  # FC21
    w1: Tensor
    w2: Tensor
    w3: Tensor
    a_w: Tensor
    w4: Tensor  # 2d x d, question update
    w5: Tensor  # 2d x d, visual update
    tau: float = 1.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")

    @property
    def d(self) -> int:
        return self.w1.shape[0]

    @classmethod
    def init(cls, rng, d_vis: int, d_q: int, d: int, tau: float | None = None, dtype=np.float64) -> "GmaParams":
        def sq(fan_in, rows, cols):
            return uniform_init(rng, fan_in, (rows, cols), dtype, VARIANCE_PRESERVING)

        return cls(
            fc_vis=Linear.init(rng, d_vis, d, dtype=dtype),
            fc_q=Linear.init(rng, d_q, d, dtype=dtype),
            w1=sq(d, d, d),
            w2=sq(d, d, d),
            w3=sq(d, d, d),
            a_w=sq(d, d, d),
            w4=sq(2 * d, 2 * d, d),
            w5=sq(2 * d, 2 * d, d),
            tau=1.0 / np.sqrt(d) if tau is None else tau,
        )


@dataclass
class AttentionTrace:
    S_log: np.ndarray  # K1 x K2 log-affinity
    P_v_from_q: np.ndarray  # K1 x K2
    P_q_from_v: np.ndarray  # K2 x K1
    A_m: np.ndarray
    A_n: np.ndarray

    def to_json(self, module: int) -> dict:
        return {
            "module": module,
            "S_log": self.S_log.tolist(),
            "P_v_from_q": self.P_v_from_q.tolist(),
            "P_q_from_v": self.P_q_from_v.tolist(),
            "A_m": self.A_m.tolist(),
            "A_n": self.A_n.tolist(),
        }

    def for_segment(self, vis_rows: np.ndarray, q_rows: np.ndarray) -> "AttentionTrace":
        return AttentionTrace(
            self.S_log[np.ix_(vis_rows, q_rows)],
            self.P_v_from_q[np.ix_(vis_rows, q_rows)],
            self.P_q_from_v[np.ix_(q_rows, vis_rows)],
            self.A_m[np.ix_(vis_rows, vis_rows)],
            self.A_n[np.ix_(q_rows, q_rows)],
        )


@dataclass
class GmaState:
    """Node features of both graphs plus the fixed structure they live on."""

    v_m: Tensor
    v_n: Tensor
    e_m: np.ndarray
    e_n: np.ndarray  # directed, kept for inspection
    mask_m: np.ndarray
    mask_n: np.ndarray
    seg_m: np.ndarray | None = None
    seg_n: np.ndarray | None = None
    traces: list[AttentionTrace] = field(default_factory=list)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.mask_m = np.asarray(self.mask_m, dtype=bool).reshape(-1)
        self.mask_n = np.asarray(self.mask_n, dtype=bool).reshape(-1)
        k1, k2 = self.mask_m.shape[0], self.mask_n.shape[0]
        if self.v_m.shape[0] != k1 or self.e_m.shape != (k1, k1):
            raise ShapeError("visual features, edges and mask disagree on K1")
        if self.v_n.shape[0] != k2 or self.e_n.shape != (k2, k2):
            raise ShapeError("question features, edges and mask disagree on K2")
        if self.seg_m is None:
            self.seg_m = np.zeros(k1, dtype=np.int64)
        if self.seg_n is None:
            self.seg_n = np.zeros(k2, dtype=np.int64)
        if not self.mask_m.any() or not self.mask_n.any():
            raise ValueError("each graph needs at least one valid node")

    def _cached(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    @property
    def lap_m(self) -> np.ndarray:
        return self._cached("lap_m", lambda: normalized_laplacian(self.e_m, self.mask_m))

    @property
    def lap_n(self) -> np.ndarray:
        return self._cached("lap_n", lambda: normalized_laplacian(symmetrize(self.e_n), self.mask_n))

    @property
    def pair_m(self) -> np.ndarray:
        return self._cached("pair_m", lambda: _pairs(self.seg_m, self.mask_m, self.seg_m, self.mask_m))

    @property
    def pair_n(self) -> np.ndarray:
        return self._cached("pair_n", lambda: _pairs(self.seg_n, self.mask_n, self.seg_n, self.mask_n))

    @property
    def pair_mn(self) -> np.ndarray:
        return self._cached("pair_mn", lambda: _pairs(self.seg_m, self.mask_m, self.seg_n, self.mask_n))

    def with_features(self, v_m: Tensor, v_n: Tensor, trace: AttentionTrace | None = None) -> "GmaState":
        traces = self.traces + [trace] if trace is not None else list(self.traces)
        return replace(self, v_m=v_m, v_n=v_n, traces=traces)


def _pairs(seg_a, mask_a, seg_b, mask_b) -> np.ndarray:
    return (seg_a[:, None] == seg_b[None, :]) & mask_a[:, None] & mask_b[None, :]


def _row_mask(mask: np.ndarray, dtype=np.float64) -> Tensor:
    return Tensor(mask.astype(dtype).reshape(-1, 1))


def symmetrize(edges: np.ndarray) -> np.ndarray:
    return np.maximum(edges, edges.T)


def fc_transform(v: Tensor, fc: Linear, mask: np.ndarray | None = None) -> Tensor:
    """Affine map of node features into the shared d-dim space; padded rows zeroed."""
    if v.shape[1] != fc.d_in:
        raise ShapeError(f"fc_transform: input dim {v.shape[1]} but layer expects {fc.d_in}")
    out = fc(v)
    return out if mask is None else mul(out, _row_mask(mask, out.data.dtype))


def normalized_laplacian(edges: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """``D^-1/2 E D^-1/2`` with ``D_ii = sum_j e_ij`` over the valid block."""
    e = np.asarray(edges, dtype=np.float64)
    k = e.shape[0]
    if e.shape != (k, k):
        raise ShapeError(f"edge matrix must be square, got {e.shape}")
    valid = np.ones(k, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(-1)
    e = e * valid[:, None] * valid[None, :]
    if not np.array_equal(e, e.T):
        raise ValueError("normalized_laplacian needs a symmetric edge matrix; symmetrize directed graphs first")
    deg = e.sum(axis=1)
    if (deg[valid] <= 0).any():
        bad = int(np.flatnonzero(valid & (deg <= 0))[0])
        raise ValueError(f"valid node {bad} has zero degree")
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return inv_sqrt[:, None] * e * inv_sqrt[None, :]


def gconv_explicit(x: Tensor, lap, w1: Tensor, w2: Tensor) -> Tensor:
    """``relu(W1(X + W2(L X)))`` over the given graph edges."""
    lap = lap if isinstance(lap, Tensor) else Tensor(lap)
    if lap.shape != (x.shape[0], x.shape[0]) or w1.shape[0] != x.shape[1] or w2.shape[0] != x.shape[1]:
        raise ShapeError(f"gconv_explicit: X {x.shape}, L {lap.shape}, W1 {w1.shape}, W2 {w2.shape}")
    return relu(matmul(add(x, matmul(matmul(lap, x), w2)), w1))


def pairwise_sq_dists(x: Tensor) -> Tensor:
    sq = row_sums(mul(x, x))
    return sub(add(sq, transpose(sq)), scale(matmul(x, transpose(x)), 2.0))


def implicit_adjacency(x: Tensor, mask: np.ndarray, mode: str = "negated", pairs: np.ndarray | None = None) -> Tensor:
    """Row-softmax over squared Euclidean distances between node features.

    ``negated`` scores pairs by ``-||xi - xj||^2`` so near nodes weigh most;
    ``literal`` uses ``+||xi - xj||^2``.  Only valid (and, in a batch,
    same-example) columns take part; rows of padded nodes are zero.
    """
    if mode not in SIMILARITY_MODES:
        raise ValueError(f"unknown similarity mode {mode!r}")
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    if not mask.any():
        raise ValueError("implicit_adjacency: no valid nodes")
    if pairs is None:
        pairs = mask[:, None] & mask[None, :]
    d2 = pairwise_sq_dists(x)
    logits = scale(d2, -1.0) if mode == "negated" else d2
    return softmax_rows(logits, pairs, row_mask=mask)


def gconv_implicit(x: Tensor, adj: Tensor, w3: Tensor) -> Tensor:
    """Residual update ``X + W3(A X)``."""
    if adj.shape != (x.shape[0], x.shape[0]) or w3.shape[0] != x.shape[1]:
        raise ShapeError(f"gconv_implicit: X {x.shape}, A {adj.shape}, W3 {w3.shape}")
    return add(x, matmul(matmul(adj, x), w3))


def log_affinity(x: Tensor, y: Tensor, a_w: Tensor, tau: float) -> Tensor:
    """``x_i ((A_w + A_w^T)/2) y_j^T / tau`` for every visual/question pair."""
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if x.shape[1] != a_w.shape[0] or y.shape[1] != a_w.shape[1]:
        raise ShapeError(f"log_affinity: X {x.shape}, Y {y.shape}, A_w {a_w.shape}")
    a_sym = scale(add(a_w, transpose(a_w)), 0.5 / tau)
    return matmul(matmul(x, a_sym), transpose(y))


def affinity_matrix(x: Tensor, y: Tensor, a_w: Tensor, tau: float) -> Tensor:
    """Strictly positive matching scores; raises NonFiniteError on overflow."""
    return exp(log_affinity(x, y, a_w, tau))


def bilateral_attention(
    s_log: Tensor, mask_m: np.ndarray, mask_n: np.ndarray, pairs: np.ndarray | None = None
) -> tuple[Tensor, Tensor]:
    """Two attention maps from the log-affinity.

    Returns ``(P_q_from_v, P_v_from_q)``: question rows attending over
    visual nodes (K2 x K1) and visual rows attending over question nodes
    (K1 x K2).
    """
    mask_m = np.asarray(mask_m, dtype=bool).reshape(-1)
    mask_n = np.asarray(mask_n, dtype=bool).reshape(-1)
    if pairs is None:
        pairs = mask_m[:, None] & mask_n[None, :]
    p_v_from_q = softmax_rows(s_log, pairs, row_mask=mask_m)
    p_q_from_v = softmax_rows(transpose(s_log), pairs.T, row_mask=mask_n)
    return p_q_from_v, p_v_from_q


def update_nodes(
    x2: Tensor,
    y2: Tensor,
    p_v_from_q: Tensor,
    p_q_from_v: Tensor,
    w4: Tensor,
    w5: Tensor,
    mask_m: np.ndarray | None = None,
    mask_n: np.ndarray | None = None,
) -> tuple[Tensor, Tensor]:
    """``V^m = W5(X'' ++ P_v<-q Y'')`` and ``V^n = W4(Y'' ++ P_q<-v X'')``."""
    d = x2.shape[1]
    if w4.shape != (2 * d, d) or w5.shape != (2 * d, d) or y2.shape[1] != d:
        raise ShapeError(f"update_nodes: W4 {w4.shape}, W5 {w5.shape} must be {(2 * d, d)}")
    v_m = matmul(concat_cols(x2, matmul(p_v_from_q, y2)), w5)
    v_n = matmul(concat_cols(y2, matmul(p_q_from_v, x2)), w4)
    if mask_m is not None:
        v_m = mul(v_m, _row_mask(mask_m, v_m.data.dtype))
    if mask_n is not None:
        v_n = mul(v_n, _row_mask(mask_n, v_n.data.dtype))
    return v_m, v_n


def gma_forward(state: GmaState, params: GmaParams, similarity: str = "negated", encoder: str = "dual") -> GmaState:
    """One module: FC, explicit GCN, implicit GCN, matching, bilateral update."""
    if encoder not in ENCODER_MODES:
        raise ValueError(f"unknown encoder mode {encoder!r}")
    x = fc_transform(state.v_m, params.fc_vis, state.mask_m)
    y = fc_transform(state.v_n, params.fc_q, state.mask_n)
    if encoder != "implicit":
        x = gconv_explicit(x, state.lap_m, params.w1, params.w2)
        y = gconv_explicit(y, state.lap_n, params.w1, params.w2)
    if encoder != "explicit":
        a_m = implicit_adjacency(x, state.mask_m, similarity, state.pair_m)
        a_n = implicit_adjacency(y, state.mask_n, similarity, state.pair_n)
        x = gconv_implicit(x, a_m, params.w3)
        y = gconv_implicit(y, a_n, params.w3)
        a_m_data, a_n_data = a_m.data, a_n.data
    else:
        a_m_data = np.zeros(state.pair_m.shape)
        a_n_data = np.zeros(state.pair_n.shape)
    s_log = log_affinity(x, y, params.a_w, params.tau)
    p_q_from_v, p_v_from_q = bilateral_attention(s_log, state.mask_m, state.mask_n, state.pair_mn)
    v_m, v_n = update_nodes(x, y, p_v_from_q, p_q_from_v, params.w4, params.w5, state.mask_m, state.mask_n)
    trace = AttentionTrace(
        np.where(state.pair_mn, s_log.data, 0.0), p_v_from_q.data, p_q_from_v.data, a_m_data, a_n_data
    )
    return state.with_features(v_m, v_n, trace)


def stack_forward(
    state: GmaState, params_list: Sequence[GmaParams], similarity: str = "negated", encoder: str = "dual"
) -> GmaState:
    if len(params_list) == 0:
        raise ValueError("stack_forward needs at least one module")
    for params in params_list:
        state = gma_forward(state, params, similarity, encoder)
    return state
