import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from strategic_dsgd.topology import (Graph, TopologyError, build_from_graph, build_ring, complete_graph,
                                     path_graph, ring_graph, spectral_gap, star_graph)

from oracles import circulant_ring_eigs, metropolis, rho_from_eigs


def test_ring_five_rho_frozen():
    W = build_ring(5, 0.3)
    assert W.rho == pytest.approx(0.5854101966249685, abs=1e-12)
    assert W.rho == pytest.approx(0.4 + 0.6 * math.cos(2 * math.pi / 5), abs=1e-12)
    assert W.min_degree == 2


def test_ring_four_rho_is_half():
    assert build_ring(4, 0.25).rho == pytest.approx(0.5, abs=1e-12)


@given(st.integers(3, 30), st.floats(0.01, 0.49))
def test_ring_rho_matches_circulant_eigenvalues(n, w):
    W = build_ring(n, w)
    assert W.rho == pytest.approx(rho_from_eigs(circulant_ring_eigs(n, w)), abs=1e-10)


def test_path_metropolis_matches_oracle():
    W = build_from_graph(path_graph(4), "metropolis")
    ref = metropolis(4, [(0, 1), (1, 2), (2, 3)])
    assert np.allclose(W.weights, ref, atol=1e-15)
    assert W.weights[0, 1] == pytest.approx(1 / 3)
    assert W.weights[0, 0] == pytest.approx(2 / 3)
    assert W.weights[1, 1] == pytest.approx(1 / 3)


def test_star_uniform_rejects_heavy_hub():
    with pytest.raises(TopologyError, match="degree-5"):
        build_from_graph(star_graph(6), "uniform", 0.2)
    W = build_from_graph(star_graph(6), "uniform", 0.15)
    assert W.weights[0, 0] == pytest.approx(0.25)


@pytest.mark.parametrize("w", [0.5, 0.6, 0.0, -0.1])
def test_ring_weight_bounds(w):
    with pytest.raises(TopologyError):
        build_ring(5, w)


def test_disconnected_and_bad_graphs():
    with pytest.raises(TopologyError, match="disconnected"):
        build_from_graph(Graph.from_edges(4, [(0, 1), (2, 3)]))
    with pytest.raises(TopologyError):
        Graph.from_edges(3, [(0, 0)])
    with pytest.raises(TopologyError):
        Graph.from_edges(3, [(0, 3)])
    with pytest.raises(TopologyError):
        ring_graph(2)


def test_bipartite_without_self_weight_rejected():
    with pytest.raises(TopologyError):
        spectral_gap(np.array([[0.0, 1.0], [1.0, 0.0]]))


def test_two_agent_complete_graph():
    W = build_from_graph(complete_graph(2))
    assert np.allclose(W.weights, [[0.5, 0.5], [0.5, 0.5]])
    assert W.rho == pytest.approx(0.0, abs=1e-15)


def _random_connected(n, extra, seed):
    gen = np.random.default_rng(seed)
    perm = gen.permutation(n)
    edges = {tuple(sorted((int(perm[k]), int(perm[gen.integers(0, k)])))) for k in range(1, n)}
    for _ in range(extra):
        i, j = gen.choice(n, 2, replace=False)
        edges.add(tuple(sorted((int(i), int(j)))))
    return Graph.from_edges(n, edges)


@given(st.integers(2, 12), st.integers(0, 10), st.integers(0, 10**6))
def test_metropolis_invariants(n, extra, seed):
    g = _random_connected(n, extra, seed)
    W = build_from_graph(g)
    w = W.weights
    assert np.array_equal(w, w.T)
    assert np.all(w >= 0)
    assert np.all(np.diag(w) > 0)
    assert np.max(np.abs(w.sum(axis=1) - 1)) < 1e-12
    for i in range(n):
        for j in range(n):
            if i != j:
                assert (w[i, j] > 0) == ((min(i, j), max(i, j)) in g.edges)
    assert 0 <= W.rho < 1


@given(st.integers(2, 10), st.integers(0, 8), st.integers(0, 10**6), st.integers(0, 10**6))
def test_rho_is_permutation_invariant(n, extra, seed, pseed):
    g = _random_connected(n, extra, seed)
    W = build_from_graph(g)
    perm = np.random.default_rng(pseed).permutation(n)
    g2 = Graph.from_edges(n, [(int(perm[i]), int(perm[j])) for i, j in g.edges])
    assert build_from_graph(g2).rho == pytest.approx(W.rho, abs=1e-10)


def test_mix_matches_dense_product():
    W = build_from_graph(_random_connected(7, 5, 1))
    theta = np.random.default_rng(0).standard_normal((3, 7, 4))
    assert np.allclose(W.mix(theta), W.weights @ theta, atol=1e-14)
    agent = W.mix_agent(2, list(theta[0]))
    assert np.array_equal(agent, W.mix(theta[0])[2])


def test_mix_preserves_average():
    W = build_ring(6, 0.2)
    theta = np.random.default_rng(1).standard_normal((6, 3))
    assert np.allclose(W.mix(theta).mean(axis=0), theta.mean(axis=0), atol=1e-14)
