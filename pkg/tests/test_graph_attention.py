import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.controllers.gradcheck_controller import graph_attention_case
from src.models.configs import GraphAttentionConfig
from src.models.errors import ShapeMismatchError, ValidationError
from src.services.autodiff_service import Tensor, softmax
from src.services.gradcheck_service import finite_difference_check
from src.services.graph_attention_service import (AdjacencyGraph, GraphAttentionParams,
                                                  GraphAttentionService, aggregate,
                                                  graph_attention_forward,
                                                  relation_coefficients, topk_mask)
from src.services.optimizer_service import ParameterStore


def make_params(rng, d, k=25, slope=0.2, use_topk=True, separate=False):
    return GraphAttentionParams(
        W_phi=Tensor(rng.standard_normal((d, d))),
        W_theta=Tensor(rng.standard_normal((1, 2 * d))),
        leaky_slope=slope, k=k, use_topk=use_topk,
        W_agg=Tensor(rng.standard_normal((d, d))) if separate else None,
    )


def scalar_relation(x, w_phi, w_theta, slope):
    t, d = x.shape
    e = np.zeros((t, t))
    for i in range(t):
        for j in range(t):
            hi = [sum(w_phi[a, b] * x[i, b] for b in range(d)) for a in range(d)]
            hj = [sum(w_phi[a, b] * x[j, b] for b in range(d)) for a in range(d)]
            z = sum(w_theta[0, a] * v for a, v in enumerate(hi + hj))
            e[i, j] = z if z >= 0 else slope * z
    return e


def scalar_aggregate(adj, x, w):
    t, d = x.shape
    out = x.copy()
    for i in range(t):
        for c in range(d):
            out[i, c] += sum(adj[i, j] * x[j, b] * w[c, b] for j in range(t) for b in range(d))
    return out


def stable_topk_oracle(row, k):
    kept = sorted(range(len(row)), key=lambda j: (-row[j], j))[:k]
    return [row[j] if j in kept else 0.0 for j in range(len(row))]


def as_graph(rows):
    rows = np.asarray(rows, dtype=np.float64)
    return AdjacencyGraph(values=Tensor(rows), k_used=rows.shape[-1])


# *** relation_coefficients ***
def test_zero_theta_gives_zero_relations(rng):
    params = make_params(rng, 3)
    params.W_theta = Tensor(np.zeros((1, 6)))
    assert_array_equal(relation_coefficients(Tensor(rng.standard_normal((4, 3))), params).data, 0.0)


def test_single_node_relation_is_1x1(rng):
    assert relation_coefficients(Tensor(rng.standard_normal((1, 3))), make_params(rng, 3)).shape == (1, 1)


def test_relation_matches_scalar_evaluation(rng):
    x = rng.standard_normal((3, 2))
    params = make_params(rng, 2)
    expected = scalar_relation(x, params.W_phi.data, params.W_theta.data, 0.2)
    assert np.max(np.abs(relation_coefficients(Tensor(x), params).data - expected)) < 1e-12


def test_relation_dimension_mismatch(rng):
    with pytest.raises(ShapeMismatchError):
        relation_coefficients(Tensor(rng.standard_normal((4, 3))), make_params(rng, 2))


def test_params_validate_shapes(rng):
    params = make_params(rng, 3)
    params.W_theta = Tensor(np.zeros((1, 5)))
    with pytest.raises(ShapeMismatchError):
        params.validate()


# *** topk_mask ***
def test_topk_keeping_everything_returns_input():
    rows = np.array([[0.5, 0.3, 0.2], [0.1, 0.1, 0.8]])
    adj = topk_mask(Tensor(rows), 5)
    assert adj.k_used == 3
    assert_array_equal(adj.numpy(), rows)


def test_topk_examples():
    assert_array_equal(topk_mask(Tensor([[0.5, 0.3, 0.2]]), 2).numpy(), [[0.5, 0.3, 0.0]])
    assert_array_equal(topk_mask(Tensor([[0.4, 0.4, 0.2]]), 1).numpy(), [[0.4, 0.0, 0.0]])


def test_topk_ties_keep_lowest_column(rng):
    for _ in range(20):
        # 少量离散取值，制造大量并列
        raw = rng.integers(1, 4, size=(5, 6)).astype(np.float64)
        rows = raw / raw.sum(axis=1, keepdims=True)
        k = int(rng.integers(1, 7))
        out = topk_mask(Tensor(rows), k).numpy()
        for row, got in zip(rows, out):
            assert list(got) == stable_topk_oracle(list(row), k)


def test_topk_errors():
    with pytest.raises(ValidationError):
        topk_mask(Tensor([[0.5, 0.5]]), 0)
    with pytest.raises(ValidationError):
        topk_mask(Tensor([[0.5, 0.6]]), 1)


def test_gradient_flows_only_through_kept_entries(rng):
    attention = softmax(Tensor(rng.standard_normal((5, 5))), axis=-1)
    rows = Tensor(attention.data, requires_grad=True)
    kept = topk_mask(rows, 2)
    kept.values.sum().backward()
    assert_array_equal(rows.grad, (kept.numpy() != 0).astype(np.float64))


def test_underflowed_weights_still_count_as_kept():
    logits = np.array([[0.0, -300.0, -200.0, -1.0]], dtype=np.float32)
    attention = softmax(Tensor(logits), axis=-1)
    assert np.count_nonzero(attention.data) == 2
    out = topk_mask(attention, 3, logits).numpy()
    assert out.dtype == np.float32
    # 按 logits 选择：-200 排在 -300 之前
    assert_array_equal(out != 0, [[True, False, True, True]])
    assert out[0, 2] == np.finfo(np.float32).tiny


def test_extreme_relations_keep_k_nonzeros_in_float32(rng):
    params = make_params(rng, 4, k=3)
    params.W_phi = Tensor(params.W_phi.data.astype(np.float32))
    params.W_theta = Tensor((params.W_theta.data * 1e3).astype(np.float32))
    x = Tensor(rng.standard_normal((6, 4)).astype(np.float32))
    attention = softmax(relation_coefficients(x, params), axis=-1).data
    assert np.any(np.count_nonzero(attention, axis=1) < 3)
    _, adj = graph_attention_forward(x, params)
    values = adj.numpy()
    assert values.dtype == np.float32
    assert np.all(np.count_nonzero(values, axis=1) == 3)
    assert np.all(values <= 1.0)


def test_topk_scores_must_match_shape():
    with pytest.raises(ShapeMismatchError):
        topk_mask(Tensor([[0.5, 0.3, 0.2]]), 2, np.zeros((1, 2)))


def test_selection_is_stable_under_small_perturbation(rng):
    x = rng.standard_normal((6, 4))
    params = make_params(rng, 4, k=3)
    _, adj = graph_attention_forward(Tensor(x), params)
    pattern = adj.numpy() != 0
    attention = softmax(relation_coefficients(Tensor(x), params), axis=-1).data
    ranked = np.sort(attention, axis=1)[:, ::-1]
    margin = np.min(ranked[:, 2] - ranked[:, 3])
    # 把被屏蔽的元素抬高不到选择间隔，再整行平移保持行和为 1
    delta = np.where(pattern, 0.0, margin / 4)
    delta -= delta.sum(axis=1, keepdims=True) / 6
    perturbed = topk_mask(Tensor(attention + delta), 3).numpy()
    assert_array_equal(perturbed != 0, pattern)


# *** aggregate ***
def test_zero_adjacency_is_residual_identity(rng):
    x = rng.standard_normal((4, 3))
    params = make_params(rng, 3)
    assert_array_equal(aggregate(as_graph(np.zeros((4, 4))), Tensor(x), params).data, x)


def test_identity_weights_double_the_input(rng):
    x = rng.standard_normal((4, 3))
    params = make_params(rng, 3)
    params.W_phi = Tensor(np.eye(3))
    assert_allclose(aggregate(as_graph(np.eye(4)), Tensor(x), params).data, 2 * x, rtol=0, atol=1e-15)


def test_aggregate_matches_scalar_loop(rng):
    x = rng.standard_normal((4, 3))
    adj = rng.random((4, 4))
    params = make_params(rng, 3)
    expected = scalar_aggregate(adj, x, params.W_phi.data)
    assert np.max(np.abs(aggregate(as_graph(adj), Tensor(x), params).data - expected)) < 1e-12


def test_aggregate_uses_separate_weight_when_configured(rng):
    x = rng.standard_normal((4, 3))
    adj = rng.random((4, 4))
    params = make_params(rng, 3, separate=True)
    expected = scalar_aggregate(adj, x, params.W_agg.data)
    assert_allclose(aggregate(as_graph(adj), Tensor(x), params).data, expected, atol=1e-12)


def test_aggregate_shape_mismatch(rng):
    with pytest.raises(ShapeMismatchError):
        aggregate(as_graph(np.zeros((3, 3))), Tensor(rng.standard_normal((4, 3))), make_params(rng, 3))


# *** graph_attention_forward ***
def test_single_node_forward(rng):
    x = rng.standard_normal((1, 3))
    params = make_params(rng, 3)
    x_hat, adj = graph_attention_forward(Tensor(x), params)
    assert_array_equal(adj.numpy(), [[1.0]])
    assert adj.k_used == 1
    assert_allclose(x_hat.data[0], x[0] + params.W_phi.data @ x[0], atol=1e-14)


def test_zero_theta_gives_uniform_graph(rng):
    x = rng.standard_normal((5, 3))
    params = make_params(rng, 3, k=5)
    params.W_theta = Tensor(np.zeros((1, 6)))
    x_hat, adj = graph_attention_forward(Tensor(x), params)
    assert_allclose(adj.numpy(), np.full((5, 5), 0.2), atol=1e-15)
    expected = x.mean(axis=0) @ params.W_phi.data.T + x
    assert_allclose(x_hat.data, expected, atol=1e-12)


def test_forward_matches_scalar_composition(rng):
    for _ in range(50):
        t, d = int(rng.integers(1, 9)), int(rng.integers(1, 7))
        k = int(rng.integers(1, 10))
        x = rng.standard_normal((t, d))
        params = make_params(rng, d, k=k)
        e = scalar_relation(x, params.W_phi.data, params.W_theta.data, 0.2)
        attention = np.exp(e - e.max(axis=1, keepdims=True))
        attention /= attention.sum(axis=1, keepdims=True)
        adj = np.array([stable_topk_oracle(list(row), min(k, t)) for row in attention])
        x_hat, graph = graph_attention_forward(Tensor(x), params)
        assert np.max(np.abs(graph.numpy() - adj)) < 1e-12
        assert np.max(np.abs(x_hat.data - scalar_aggregate(adj, x, params.W_phi.data))) < 1e-12


def test_adjacency_invariants(rng):
    for _ in range(100):
        t = int(rng.integers(1, 12))
        k = int(rng.integers(1, 8))
        x = Tensor(rng.standard_normal((t, 4)))
        params = make_params(rng, 4, k=k)
        attention = softmax(relation_coefficients(x, params), axis=-1).data
        assert_allclose(attention.sum(axis=1), 1.0, atol=1e-9)
        x_hat, adj = graph_attention_forward(x, params)
        values = adj.numpy()
        assert x_hat.shape == (t, 4)
        assert adj.k_used == min(k, t)
        assert np.all((np.count_nonzero(values, axis=1) == min(k, t)))
        assert np.all((values >= 0) & (values <= 1))
        sums = values.sum(axis=1)
        assert np.all((sums > 0) & (sums <= 1 + 1e-9))


def test_without_topk_graph_is_dense(rng):
    x = Tensor(rng.standard_normal((6, 4)))
    _, adj = graph_attention_forward(x, make_params(rng, 4, k=2, use_topk=False))
    assert np.all(adj.numpy() > 0)
    assert adj.k_used == 6


def test_asymmetry_witness(rng):
    found_e = found_adj = False
    for _ in range(20):
        x = Tensor(rng.standard_normal((5, 4)))
        params = make_params(rng, 4, k=2)
        e = relation_coefficients(x, params).data
        _, adj = graph_attention_forward(x, params)
        found_e |= not np.allclose(e, e.T)
        found_adj |= not np.allclose(adj.numpy(), adj.numpy().T)
    assert found_e and found_adj


def test_permutation_equivariance(rng):
    x = rng.standard_normal((7, 4))
    params = make_params(rng, 4, k=3)
    e = relation_coefficients(Tensor(x), params).data
    x_hat, adj = graph_attention_forward(Tensor(x), params)
    for _ in range(20):
        perm = rng.permutation(7)
        px = x[perm]
        assert np.max(np.abs(relation_coefficients(Tensor(px), params).data - e[perm][:, perm])) < 1e-10
        px_hat, padj = graph_attention_forward(Tensor(px), params)
        assert np.max(np.abs(px_hat.data - x_hat.data[perm])) < 1e-10
        assert np.max(np.abs(padj.numpy() - adj.numpy()[perm][:, perm])) < 1e-10


def test_batched_forward_matches_single(rng):
    x = rng.standard_normal((3, 5, 4))
    params = make_params(rng, 4, k=2)
    batched, _ = graph_attention_forward(Tensor(x), params)
    for b in range(3):
        single, _ = graph_attention_forward(Tensor(x[b]), params)
        assert_allclose(batched.data[b], single.data, atol=1e-12)


def test_end_to_end_gradcheck():
    loss_fn, params = graph_attention_case(np.random.default_rng(42))
    assert finite_difference_check(loss_fn, params, h=1e-5) < 1e-4


def test_service_registers_parameters(rng):
    params = ParameterStore(np.float64)
    GraphAttentionService(GraphAttentionConfig(share_phi=False), 4, params, rng)
    assert params.names() == ['graph.W_phi', 'graph.W_theta', 'graph.W_agg']
    assert params['graph.W_theta'].shape == (1, 8)
