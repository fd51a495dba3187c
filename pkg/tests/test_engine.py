import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gmavqa.engine import (
    GmaParams,
    GmaState,
    affinity_matrix,
    bilateral_attention,
    fc_transform,
    gconv_explicit,
    gconv_implicit,
    gma_forward,
    implicit_adjacency,
    log_affinity,
    normalized_laplacian,
    stack_forward,
    symmetrize,
    update_nodes,
)
from gmavqa.gradcheck import grad_check
from gmavqa.params import Linear, named_tensors
from gmavqa.tensor import ShapeError, Tensor, mul, total

from instances import permute_state, random_params, random_state


def T(x):
    return Tensor(np.asarray(x, dtype=np.float64))


def weighted_total(*outs, seed=0):
    """A generic scalar that touches every output entry with a distinct weight."""
    rng = np.random.default_rng(seed)
    acc = None
    for o in outs:
        term = total(mul(o, Tensor(rng.normal(size=o.shape))))
        acc = term if acc is None else acc + term
    return acc


# ------------------------------------------------------------------- FC

def test_fc_identity_and_bias():
    x = T([[1.0, -2.0], [3.0, 4.0]])
    ident = Linear(T(np.eye(2)), T([[0.0, 0.0]]))
    np.testing.assert_array_equal(fc_transform(x, ident).data, x.data)
    lin = Linear(T(np.ones((2, 3))), T([[1.0, 2.0, 3.0]]))
    np.testing.assert_array_equal(fc_transform(T(np.zeros((2, 2))), lin).data, [[1, 2, 3], [1, 2, 3]])


def test_fc_masks_padded_rows_and_checks_dims():
    lin = Linear(T(np.ones((2, 3))), T([[1.0, 2.0, 3.0]]))
    out = fc_transform(T(np.ones((2, 2))), lin, np.array([True, False]))
    assert (out.data[1] == 0).all()
    with pytest.raises(ShapeError):
        fc_transform(T(np.ones((2, 4))), lin)


def test_fc_gradient():
    rng = np.random.default_rng(0)
    lin = Linear.init(rng, 4, 3)
    x = T(rng.normal(size=(5, 4)))
    r = grad_check(lambda x, w, b: weighted_total(fc_transform(x, Linear(w, b))), [x, lin.weight, lin.bias])
    assert r.max_rel_error < 1e-4


# -------------------------------------------------------------- Laplacian

def test_laplacian_hand_cases():
    np.testing.assert_array_equal(normalized_laplacian(np.array([[1.0]])), [[1.0]])
    np.testing.assert_allclose(normalized_laplacian(np.ones((2, 2))), np.full((2, 2), 0.5), atol=1e-15)


def test_laplacian_star_graph():
    e = np.array([[1, 1, 1], [1, 1, 0], [1, 0, 1]], dtype=float)  # degrees 3, 2, 2
    lap = normalized_laplacian(e)
    expected = [[1 / 3, 1 / math.sqrt(6), 1 / math.sqrt(6)],
                [1 / math.sqrt(6), 1 / 2, 0],
                [1 / math.sqrt(6), 0, 1 / 2]]
    np.testing.assert_allclose(lap, expected, rtol=0, atol=1e-15)


def test_laplacian_masked_rows_zero():
    e = np.ones((3, 3))
    lap = normalized_laplacian(e, np.array([True, True, False]))
    np.testing.assert_allclose(lap[:2, :2], 0.5)
    assert (lap[2] == 0).all() and (lap[:, 2] == 0).all()


def test_laplacian_errors():
    with pytest.raises(ValueError, match="zero degree"):
        normalized_laplacian(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(ValueError, match="symmetric"):
        normalized_laplacian(np.array([[1.0, 1.0], [0.0, 1.0]]))


def test_symmetrize_directed_edges():
    e = np.array([[1, 1, 0], [0, 1, 0], [0, 1, 1]], dtype=float)
    np.testing.assert_array_equal(symmetrize(e), [[1, 1, 0], [1, 1, 1], [0, 1, 1]])


# -------------------------------------------------------------- explicit

def test_gconv_explicit_zero_input():
    rng = np.random.default_rng(1)
    out = gconv_explicit(T(np.zeros((3, 4))), np.eye(3), T(rng.normal(size=(4, 4))), T(rng.normal(size=(4, 4))))
    assert (out.data == 0).all()


def test_gconv_explicit_identity_doubles():
    x = np.abs(np.random.default_rng(2).normal(size=(3, 4)))
    out = gconv_explicit(T(x), np.eye(3), T(np.eye(4)), T(np.eye(4)))
    np.testing.assert_allclose(out.data, 2 * x, rtol=0, atol=1e-15)


def test_gconv_explicit_shape_error():
    with pytest.raises(ShapeError):
        gconv_explicit(T(np.ones((3, 4))), np.eye(2), T(np.eye(4)), T(np.eye(4)))


def test_gconv_explicit_gradient():
    rng = np.random.default_rng(3)
    e = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]], dtype=float)
    lap = normalized_laplacian(e)
    x, w1, w2 = (T(rng.normal(size=s)) for s in [(3, 4), (4, 4), (4, 4)])
    r = grad_check(lambda x, a, b: weighted_total(gconv_explicit(x, lap, a, b)), [x, w1, w2])
    assert r.max_rel_error < 1e-4


# -------------------------------------------------------------- implicit

@pytest.mark.parametrize("mode", ["negated", "literal"])
def test_implicit_adjacency_identical_rows(mode):
    a = implicit_adjacency(T([[1.0, 2.0], [1.0, 2.0]]), np.array([True, True]), mode)
    np.testing.assert_allclose(a.data, np.full((2, 2), 0.5), atol=1e-15)


def test_implicit_adjacency_scalar_oracle():
    a = implicit_adjacency(T([[0.0], [1.0], [2.0]]), np.ones(3, bool))
    z = np.exp([0.0, -1.0, -4.0])
    np.testing.assert_allclose(a.data[0], z / z.sum(), rtol=0, atol=1e-12)
    np.testing.assert_allclose(a.data[0], [0.7214, 0.2654, 0.0132], atol=1e-4)
    # the often-quoted (0.7054, 0.2595, 0.0351) is softmax(-[0, 1, 3]): plain distances, not squared
    w = np.exp([0.0, -1.0, -3.0])
    np.testing.assert_allclose(w / w.sum(), [0.7054, 0.2595, 0.0351], atol=1e-4)


def test_implicit_adjacency_literal_mode_prefers_far_nodes():
    a = implicit_adjacency(T([[0.0], [1.0], [2.0]]), np.ones(3, bool), "literal")
    z = np.exp([0.0, 1.0, 4.0])
    np.testing.assert_allclose(a.data[0], z / z.sum(), rtol=0, atol=1e-12)


def test_implicit_adjacency_masking():
    a = implicit_adjacency(T([[0.0], [1.0], [5.0]]), np.array([True, False, True]))
    assert (a.data[1] == 0).all() and (a.data[:, 1] == 0).all()
    np.testing.assert_allclose(a.data.sum(axis=1), [1, 0, 1], atol=1e-12)
    with pytest.raises(ValueError):
        implicit_adjacency(T([[0.0]]), np.array([False]))
    with pytest.raises(ValueError):
        implicit_adjacency(T([[0.0]]), np.array([True]), "cosine")


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_implicit_adjacency_rows_sum_to_one(k, d, seed):
    rng = np.random.default_rng(seed)
    a = implicit_adjacency(T(rng.normal(size=(k, d)) * 3), np.ones(k, bool)).data
    np.testing.assert_allclose(a.sum(axis=1), 1.0, rtol=0, atol=1e-9)


def test_gconv_implicit_cases():
    rng = np.random.default_rng(4)
    x = T(rng.normal(size=(3, 4)))
    a = T(rng.random((3, 3)))
    np.testing.assert_array_equal(gconv_implicit(x, a, T(np.zeros((4, 4)))).data, x.data)
    np.testing.assert_allclose(gconv_implicit(x, T(np.eye(3)), T(np.eye(4))).data, 2 * x.data, atol=1e-15)
    with pytest.raises(ShapeError):
        gconv_implicit(x, T(np.eye(2)), T(np.eye(4)))


def test_gconv_implicit_gradient_through_adjacency():
    rng = np.random.default_rng(5)
    mask = np.array([True, True, False, True])
    x, w3 = T(rng.normal(size=(4, 3))), T(rng.normal(size=(3, 3)))

    def f(x, w3):
        return weighted_total(gconv_implicit(x, implicit_adjacency(x, mask), w3))

    assert grad_check(f, [x, w3]).max_rel_error < 1e-4


# -------------------------------------------------------------- affinity

def test_affinity_orthogonal_and_parallel():
    assert affinity_matrix(T([[1.0, 0.0]]), T([[0.0, 1.0]]), T(np.eye(2)), 1.0).item() == 1.0
    assert affinity_matrix(T([[1.0, 0.0]]), T([[1.0, 0.0]]), T(np.eye(2)), 1.0).item() == pytest.approx(math.e, abs=1e-12)


def test_affinity_positive_and_tau_checked():
    rng = np.random.default_rng(6)
    s = affinity_matrix(T(rng.normal(size=(3, 2))), T(rng.normal(size=(4, 2))), T(rng.normal(size=(2, 2))), 2.0)
    assert (s.data > 0).all() and s.shape == (3, 4)
    with pytest.raises(ValueError):
        log_affinity(T(np.ones((1, 2))), T(np.ones((1, 2))), T(np.eye(2)), 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_affinity_transpose_identity(seed):
    rng = np.random.default_rng(seed)
    x, y, a = rng.normal(size=(4, 5)), rng.normal(size=(3, 5)), rng.normal(size=(5, 5))
    s1 = log_affinity(T(x), T(y), T(a), 0.7).data
    s2 = log_affinity(T(x), T(y), T(a.T), 0.7).data
    np.testing.assert_allclose(s1, s2, rtol=0, atol=1e-12)


# ---------------------------------------------------------------- attention

def test_bilateral_uniform():
    p_q, p_v = bilateral_attention(T(np.zeros((2, 3))), np.ones(2, bool), np.ones(3, bool))
    np.testing.assert_allclose(p_v.data, np.full((2, 3), 1 / 3), atol=1e-15)
    np.testing.assert_allclose(p_q.data, np.full((3, 2), 1 / 2), atol=1e-15)


def test_bilateral_saturates():
    s = np.zeros((2, 3))
    s[:, 1] = 50.0
    _, p_v = bilateral_attention(T(s), np.ones(2, bool), np.ones(3, bool))
    np.testing.assert_allclose(p_v.data, [[0, 1, 0], [0, 1, 0]], atol=1e-9)


def test_bilateral_masked_question_node_gets_zero():
    rng = np.random.default_rng(7)
    mask_n = np.array([True, False, True])
    p_q, p_v = bilateral_attention(T(rng.normal(size=(2, 3))), np.ones(2, bool), mask_n)
    assert (p_v.data[:, 1] == 0).all()
    assert (p_q.data[1] == 0).all()


def test_tau_homogeneity():
    rng = np.random.default_rng(8)
    x, y, a = T(rng.normal(size=(4, 3))), T(rng.normal(size=(5, 3))), T(rng.normal(size=(3, 3)))
    m, n = np.ones(4, bool), np.ones(5, bool)
    base = bilateral_attention(log_affinity(x, y, a, 0.5), m, n)
    c = 3.0
    s_scaled = log_affinity(x, y, a, 0.5 * c)  # = base log-affinity / c
    rescaled = bilateral_attention(T(s_scaled.data * c), m, n)
    for p, q in zip(base, rescaled):
        np.testing.assert_allclose(p.data, q.data, rtol=0, atol=1e-9)


# -------------------------------------------------------------- update

def test_update_select_residual():
    rng = np.random.default_rng(9)
    d = 3
    x2, y2 = T(rng.normal(size=(4, d))), T(rng.normal(size=(2, d)))
    p_v = T(np.full((4, 2), 0.5))
    p_q = T(np.full((2, 4), 0.25))
    select_first = T(np.vstack([np.eye(d), np.zeros((d, d))]))
    select_second = T(np.vstack([np.zeros((d, d)), np.eye(d)]))
    v_m, _ = update_nodes(x2, y2, p_v, p_q, select_first, select_first)
    np.testing.assert_array_equal(v_m.data, x2.data)
    v_m, v_n = update_nodes(x2, y2, p_v, p_q, select_second, select_second)
    np.testing.assert_allclose(v_m.data, np.tile(y2.data.mean(axis=0), (4, 1)), atol=1e-15)
    np.testing.assert_allclose(v_n.data, np.tile(x2.data.mean(axis=0), (2, 1)), atol=1e-15)


def test_update_shape_error():
    z = T(np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        update_nodes(z, z, T(np.eye(2)), T(np.eye(2)), T(np.zeros((3, 3))), T(np.zeros((3, 3))))


def test_update_gradient():
    rng = np.random.default_rng(10)
    mask_m, mask_n = np.array([True, True, False]), np.array([True, True])

    def f(x2, y2, s, w4, w5):
        p_q, p_v = bilateral_attention(s, mask_m, mask_n)
        return weighted_total(*update_nodes(x2, y2, p_v, p_q, w4, w5, mask_m, mask_n))

    args = [T(rng.normal(size=s)) for s in [(3, 2), (2, 2), (3, 2), (4, 2), (4, 2)]]
    assert grad_check(f, args).max_rel_error < 1e-4


# ---------------------------------------------------------------- module

def test_gma_forward_shapes_and_trace():
    rng = np.random.default_rng(11)
    state = random_state(rng, K1=5, K2=4)
    out = gma_forward(state, random_params(rng))
    assert out.v_m.shape == (5, 8) and out.v_n.shape == (4, 8)
    (tr,) = out.traces
    assert tr.S_log.shape == (5, 4) and tr.P_v_from_q.shape == (5, 4) and tr.P_q_from_v.shape == (4, 5)
    assert tr.A_m.shape == (5, 5) and tr.A_n.shape == (4, 4)
    assert out.e_m is state.e_m and out.e_n is state.e_n
    assert (out.v_m.data[~state.mask_m] == 0).all()
    doc = tr.to_json(0)
    assert set(doc) == {"module", "S_log", "P_v_from_q", "P_q_from_v", "A_m", "A_n"}


def test_gma_params_validation():
    p = random_params(np.random.default_rng(0))
    with pytest.raises(ValueError):
        GmaParams(p.fc_vis, p.fc_q, p.w1, p.w2, p.w3, p.a_w, p.w4, p.w5, tau=0.0)


def test_state_requires_valid_nodes():
    rng = np.random.default_rng(12)
    s = random_state(rng)
    with pytest.raises(ValueError):
        GmaState(s.v_m, s.v_n, s.e_m, s.e_n, np.zeros(5, bool), s.mask_n)
    with pytest.raises(ShapeError):
        GmaState(s.v_m, s.v_n, s.e_m[:3, :3], s.e_n, s.mask_m, s.mask_n)


def test_permutation_equivariance():
    rng = np.random.default_rng(13)
    state, params = random_state(rng, 6, 5), random_params(rng)
    p1, p2 = rng.permutation(6), rng.permutation(5)
    a = gma_forward(state, params)
    b = gma_forward(permute_state(state, p1, p2), params)
    np.testing.assert_allclose(b.v_m.data, a.v_m.data[p1], rtol=0, atol=1e-6)
    np.testing.assert_allclose(b.v_n.data, a.v_n.data[p2], rtol=0, atol=1e-6)
    np.testing.assert_allclose(b.traces[0].S_log, a.traces[0].S_log[np.ix_(p1, p2)], rtol=0, atol=1e-6)


def test_visual_permutation_leaves_question_side_unchanged():
    rng = np.random.default_rng(14)
    state, params = random_state(rng, 6, 5), random_params(rng)
    p1 = rng.permutation(6)
    a = gma_forward(state, params)
    b = gma_forward(permute_state(state, p1, np.arange(5)), params)
    np.testing.assert_allclose(b.v_n.data, a.v_n.data, rtol=0, atol=1e-6)


@pytest.mark.parametrize("encoder", ["explicit", "implicit"])
def test_single_stage_encoders(encoder):
    rng = np.random.default_rng(15)
    state, params = random_state(rng), random_params(rng)
    out = gma_forward(state, params, encoder=encoder)
    assert out.v_m.shape == (5, 8)
    assert (out.traces[0].A_m == 0).all() == (encoder == "explicit")
    with pytest.raises(ValueError):
        gma_forward(state, params, encoder="neither")


def test_stack_single_module_is_gma_forward():
    rng = np.random.default_rng(16)
    state, params = random_state(rng), random_params(rng)
    a = gma_forward(state, params)
    b = stack_forward(state, [params])
    assert np.array_equal(a.v_m.data, b.v_m.data) and np.array_equal(a.v_n.data, b.v_n.data)


def test_stack_three_modules():
    rng = np.random.default_rng(17)
    state = random_state(rng, d_vis=8, d_q=8)
    params = [random_params(rng, d_vis=8, d_q=8) for _ in range(3)]
    out = stack_forward(state, params)
    assert out.v_m.shape == (5, 8) and out.v_n.shape == (4, 8) and len(out.traces) == 3
    with pytest.raises(ValueError):
        stack_forward(state, [])


def module_grad_check(n_stack, K1=5, K2=4, d=8, seed=18):
    rng = np.random.default_rng(seed)
    state = random_state(rng, K1, K2, d_vis=6, d_q=5)
    params = [random_params(rng, d_vis=6 if i == 0 else d, d_q=5 if i == 0 else d, d=d) for i in range(n_stack)]
    named = [(f"stack{i}.{n}", t) for i, p in enumerate(params) for n, t in named_tensors(p)]
    inputs = [state.v_m, state.v_n] + [t for _, t in named]

    def f(*_):
        out = stack_forward(state, params)
        return weighted_total(out.v_m, out.v_n)

    return grad_check(f, inputs, names=["v_m", "v_n"] + [n for n, _ in named])


def test_gma_forward_gradient():
    assert module_grad_check(1).max_rel_error < 1e-4


def test_stack_gradient_three_modules():
    report = module_grad_check(3, K1=6, K2=5)
    assert report.max_rel_error < 1e-4, report.per_input
