"""Seeded random inputs shared by the engine, head and acceptance tests."""
import numpy as np

from gmavqa.engine import GmaParams, GmaState
from gmavqa.params import Linear
from gmavqa.tensor import Tensor


def random_mask(rng, k):
    mask = rng.random(k) < 0.75
    mask[rng.integers(k)] = True
    return mask


def random_visual_edges(rng, mask):
    k = mask.shape[0]
    e = (rng.random((k, k)) < 0.4).astype(float)
    e = np.maximum(e, e.T)
    np.fill_diagonal(e, 1.0)
    return e * mask[:, None] * mask[None, :]


def random_tree_edges(rng, mask):
    """Directed head->dependent edges over the valid nodes, with self-loops."""
    k = mask.shape[0]
    valid = np.flatnonzero(mask)
    e = np.zeros((k, k))
    for pos, j in enumerate(valid):
        e[j, j] = 1.0
        if pos > 0:
            e[valid[rng.integers(pos)], j] = 1.0
    return e


def random_state(rng, K1=5, K2=4, d_vis=7, d_q=6, masks=True):
    mask_m = random_mask(rng, K1) if masks else np.ones(K1, bool)
    mask_n = random_mask(rng, K2) if masks else np.ones(K2, bool)
    v_m = rng.normal(size=(K1, d_vis)) * mask_m[:, None]
    v_n = rng.normal(size=(K2, d_q)) * mask_n[:, None]
    return GmaState(Tensor(v_m), Tensor(v_n), random_visual_edges(rng, mask_m), random_tree_edges(rng, mask_n),
                    mask_m, mask_n)


def random_params(rng, d_vis=7, d_q=6, d=8, tau=None):
    return GmaParams.init(rng, d_vis, d_q, d, tau=np.sqrt(d) if tau is None else tau)


def permute_state(state, p1, p2):
    """Relabel visual nodes by ``p1`` and question nodes by ``p2`` (new row i = old row p[i])."""
    return GmaState(
        Tensor(state.v_m.data[p1]), Tensor(state.v_n.data[p2]),
        state.e_m[np.ix_(p1, p1)], state.e_n[np.ix_(p2, p2)],
        state.mask_m[p1], state.mask_n[p2],
    )


def zeros_like_linear(lin: Linear) -> Linear:
    return Linear(Tensor(np.zeros(lin.weight.shape)), None if lin.bias is None else Tensor(np.zeros(lin.bias.shape)))
