"""The full network: Bi-GRU question encoder, stacked GMA modules, answer head."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import RunConfig
from .data import Example
from .engine import GmaParams, GmaState, stack_forward
from .gru import GruParams
from .head import HeadParams, Prediction, fuse_and_pool, predict_scores, soft_loss
from .params import named_tensors
from .question import encode_questions
from .tensor import Tensor, dropout, scale
from .visual import _block_diag, stack_visual


@dataclass
class GmaNet:
    gru: GruParams
    stacks: list[GmaParams]
    head: HeadParams

    @classmethod
    def init(cls, cfg: RunConfig, seed: int | None = None) -> "GmaNet":
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        dt = cfg.np_dtype
        gru = GruParams.init(rng, cfg.d_word, cfg.d, dt)
        stacks = []
        for i in range(cfg.n_stack):
            if cfg.share_stacks and i >= 2:
                stacks.append(stacks[1])
                continue
            d_vis = cfg.d_roi + 4 if i == 0 else cfg.d
            stacks.append(GmaParams.init(rng, d_vis, cfg.d, cfg.d, cfg.tau, dt))
        head = HeadParams.init(rng, cfg.d, cfg.n_answers, cfg.head_hidden, dt)
        return cls(gru, stacks, head)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        seen: set[int] = set()
        out = []
        for name, t in named_tensors(self):
            if id(t) not in seen:
                seen.add(id(t))
                out.append((name, t))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]


@dataclass
class Forward:
    prediction: Prediction
    state: GmaState
    q: Tensor
    h: Tensor


def forward(net: GmaNet, examples: Sequence[Example], cfg: RunConfig, training: bool = False,
            rng: np.random.Generator | None = None) -> Forward:
    """Batched forward pass; examples are stacked block-diagonally."""
    if not examples:
        raise ValueError("forward needs at least one example")
    dt = cfg.np_dtype
    B = len(examples)
    feats, e_m, mask_m = stack_visual([ex.visual for ex in examples])
    v_m = dropout(Tensor(feats.astype(dt)), cfg.dropout_image, training, rng)

    word_drop = None
    if training and cfg.dropout_word > 0:
        keep = 1.0 - cfg.dropout_word

        def word_drop(vecs):
            return vecs * (rng.random(vecs.shape) < keep) / keep

    layouts = [ex.question for ex in examples]
    v_n, q = encode_questions(layouts, net.gru, word_drop)
    v_n = dropout(v_n, cfg.dropout_question, training, rng)
    q = dropout(q, cfg.dropout_question, training, rng)
    e_n = _block_diag([lay.edges for lay in layouts])
    mask_n = np.concatenate([lay.node_mask for lay in layouts])
    seg_m = np.repeat(np.arange(B), [ex.visual.node_mask.shape[0] for ex in examples])
    seg_n = np.repeat(np.arange(B), [lay.K2 for lay in layouts])
    state = GmaState(v_m, v_n, e_m, e_n, mask_m, mask_n, seg_m, seg_n)
    state = stack_forward(state, net.stacks, cfg.similarity, cfg.encoder)
    h = fuse_and_pool(state.v_m, state.v_n, mask_m, mask_n, seg_m, seg_n, B)
    h = dropout(h, cfg.dropout_reasoning, training, rng)
    return Forward(predict_scores(h, q, net.head), state, q, h)


def batch_loss(fw: Forward, examples: Sequence[Example], n_answers: int) -> Tensor:
    """Soft loss averaged over the examples of the batch."""
    targets = np.stack([ex.targets(n_answers) for ex in examples])
    return scale(soft_loss(fw.prediction.logits, targets), 1.0 / len(examples))
