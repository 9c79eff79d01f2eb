import numpy as np
import pytest

from mer_util.ccc import (
    CccParams,
    ChannelGraph,
    build_knn_graph,
    ccc_forward,
    cosine_similarity,
    edge_feature,
    init_ccc_params,
)
from mer_util.errors import ConfigurationError, DimensionError
from mer_util.parameters import identity_conv
from mer_util.tensor import Tensor


def oracle_ccc(x, v1, v2, neighbors, post_kernel, post_bias):
    c, h, w = x.shape
    flat = x.reshape(c, h * w)
    aggregated = np.empty_like(flat)
    for i in range(c):
        for s in range(h * w):
            aggregated[i, s] = max(
                max(0.0, v1[s] @ flat[i] + v2[s] @ (flat[j] - flat[i])) for j in neighbors[i]
            )
    mixed = post_kernel[:, :, 0, 0] @ aggregated + post_bias[:, None]
    return mixed.reshape(c, h, w)


def test_knn_graph_example():
    x = Tensor(np.array([[[1.0, 0.0]], [[1.0, 0.0]], [[0.0, 1.0]]]))
    graph = build_knn_graph(x, 1)
    assert graph.edges == ((1,), (0,), (0,))


def test_knn_graph_ties_prefer_lower_index():
    x = Tensor(np.array([[[0.0, 1.0]], [[1.0, 0.0]], [[1.0, 0.0]], [[1.0, 0.0]]]))
    assert build_knn_graph(x, 2).edges[0] == (1, 2)


def test_knn_graph_excludes_self_and_is_complete_for_k_max():
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((5, 2, 3)))
    graph = build_knn_graph(x, 4)
    for i, neighbours in enumerate(graph.edges):
        assert sorted(neighbours) == [j for j in range(5) if j != i]


def test_knn_graph_is_scale_invariant():
    rng = np.random.default_rng(1)
    values = rng.standard_normal((6, 3, 3))
    assert build_knn_graph(Tensor(values), 2) == build_knn_graph(Tensor(values * 3.7), 2)


@pytest.mark.parametrize("k", [0, 5])
def test_knn_graph_rejects_k_out_of_range(k):
    with pytest.raises(ConfigurationError):
        build_knn_graph(Tensor(np.ones((5, 2, 2))), k)


def test_cosine_similarity_of_zero_channel_is_zero():
    sims = cosine_similarity(np.array([[0.0, 0.0], [1.0, 1.0]]))
    assert sims[0].tolist() == [0.0, 0.0]
    assert sims[1, 1] == pytest.approx(1.0)


def test_neighbor_array_is_sorted_per_row():
    graph = ChannelGraph(2, ((2, 1), (0, 2), (1, 0)))
    assert graph.neighbor_array().tolist() == [[1, 2], [0, 2], [0, 1]]


def test_edge_feature_special_cases():
    f_i, f_j = Tensor([1.0, -2.0]), Tensor([3.0, 1.0])
    eye, zero = Tensor(np.eye(2)), Tensor(np.zeros((2, 2)))

    only_centre = CccParams(eye, zero, identity_conv(1))
    assert edge_feature(f_i, f_j, only_centre).data.tolist() == [1.0, 0.0]

    only_difference = CccParams(zero, eye, identity_conv(1))
    assert edge_feature(f_i, f_j, only_difference).data.tolist() == [2.0, 3.0]


def test_edge_feature_rejects_mismatched_lengths():
    p = CccParams(Tensor(np.eye(2)), Tensor(np.eye(2)), identity_conv(1))
    with pytest.raises(DimensionError):
        edge_feature(Tensor([1.0, 2.0, 3.0]), Tensor([1.0, 2.0, 3.0]), p)


def oracle_knn(x, k):
    c = x.shape[0]
    flat = x.reshape(c, -1)
    edges = []
    for i in range(c):
        scores = []
        for j in range(c):
            if j == i:
                continue
            norms = np.sqrt(flat[i] @ flat[i]) * np.sqrt(flat[j] @ flat[j])
            scores.append((-(flat[i] @ flat[j]) / norms if norms > 0 else 0.0, j))
        edges.append([j for _, j in sorted(scores)[:k]])
    return edges


@pytest.mark.parametrize("k", [1, 2, 5])
def test_ccc_matches_brute_force(k):
    rng = np.random.default_rng(2)
    x = rng.standard_normal((6, 2, 3))
    p = init_ccc_params(rng, 6, 2, 3)
    p.post_mix.bias.data[...] = rng.standard_normal(6)

    out = ccc_forward(Tensor(x), p, k)
    expected = oracle_ccc(
        x, p.v1.data, p.v2.data, oracle_knn(x, k), p.post_mix.kernel.data, p.post_mix.bias.data
    )

    assert out.shape == (6, 2, 3)
    assert np.allclose(out.data, expected, atol=1e-12, rtol=0)


def test_ccc_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(12)
    for _ in range(100):
        c = int(rng.integers(2, 7))
        h, w = (int(v) for v in rng.integers(1, 7, size=2))
        k = int(rng.integers(1, c))
        x = rng.standard_normal((c, h, w))
        p = init_ccc_params(rng, c, h, w)
        p.post_mix.bias.data[...] = rng.standard_normal(c)

        graph = build_knn_graph(Tensor(x), k)
        assert [sorted(n) for n in graph.edges] == [sorted(n) for n in oracle_knn(x, k)]

        expected = oracle_ccc(
            x, p.v1.data, p.v2.data, oracle_knn(x, k), p.post_mix.kernel.data, p.post_mix.bias.data
        )
        assert np.allclose(ccc_forward(Tensor(x), p, k).data, expected, atol=1e-12, rtol=0)


def test_ccc_uses_precomputed_graph():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((3, 2, 2))
    p = init_ccc_params(rng, 3, 2, 2)
    graph = ChannelGraph(1, ((2,), (2,), (0,)))

    out = ccc_forward(Tensor(x), p, 1, graph)
    expected = oracle_ccc(
        x, p.v1.data, p.v2.data, graph.edges, p.post_mix.kernel.data, p.post_mix.bias.data
    )
    assert np.allclose(out.data, expected, atol=1e-12, rtol=0)


def test_ccc_rejects_wrong_projection_size():
    rng = np.random.default_rng(4)
    p = init_ccc_params(rng, 3, 2, 2)
    with pytest.raises(DimensionError):
        ccc_forward(Tensor(np.ones((3, 3, 3))), p, 1)


def test_edge_feature_matches_formula_on_random_vectors():
    rng = np.random.default_rng(13)
    for _ in range(100):
        n = int(rng.integers(1, 37))
        f_i, f_j = rng.standard_normal(n), rng.standard_normal(n)
        v1, v2 = rng.standard_normal((n, n)), rng.standard_normal((n, n))
        p = CccParams(Tensor(v1), Tensor(v2), identity_conv(1))

        expected = [max(0.0, sum(v1[s, q] * f_i[q] + v2[s, q] * (f_j[q] - f_i[q]) for q in range(n))) for s in range(n)]
        assert np.allclose(edge_feature(Tensor(f_i), Tensor(f_j), p).data, expected, atol=1e-12, rtol=0)


def test_edge_feature_of_equal_vectors_drops_the_difference_term():
    rng = np.random.default_rng(14)
    f = rng.standard_normal(4)
    v1 = rng.standard_normal((4, 4))
    p = CccParams(Tensor(v1), Tensor(rng.standard_normal((4, 4))), identity_conv(1))
    assert np.allclose(edge_feature(Tensor(f), Tensor(f), p).data, np.maximum(v1 @ f, 0.0), atol=1e-12, rtol=0)
    assert not edge_feature(Tensor(np.zeros(4)), Tensor(np.zeros(4)), p).data.any()


def test_ccc_without_difference_weights_ignores_the_graph():
    rng = np.random.default_rng(15)
    x = Tensor(rng.standard_normal((4, 2, 3)))
    p = init_ccc_params(rng, 4, 2, 3)
    p.v2.data[...] = 0.0

    nearest = ccc_forward(x, p, 2)
    other = ccc_forward(x, p, 2, ChannelGraph(2, ((2, 3), (0, 3), (0, 1), (1, 2))))
    assert np.array_equal(nearest.data, other.data)


def test_ccc_is_invariant_to_neighbour_order():
    rng = np.random.default_rng(16)
    x = Tensor(rng.standard_normal((5, 3, 2)))
    p = init_ccc_params(rng, 5, 3, 2)
    graph = build_knn_graph(x, 3)
    reversed_graph = ChannelGraph(3, tuple(tuple(reversed(n)) for n in graph.edges))

    assert np.array_equal(ccc_forward(x, p, 3, graph).data, ccc_forward(x, p, 3, reversed_graph).data)
