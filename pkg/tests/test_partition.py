import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entropart.datagen import GenSpec, generate
from entropart.graph import Graph, NodeFeatures
from entropart.partition import (EdgeWeights, PartitionAssignment, PartitionError, PartitionerConfig,
                                 assign_edge_weights, coarsen, edge_cut, initial_partition, partition, refine)
from corpus import edge_triples, random_weighted, two_cliques
from oracles import exhaustive_bisection


def star_with_leaves(d):
    """Node 0 adjacent to d leaves, so |N(0)| = d."""
    return Graph.from_edges(d + 1, np.zeros(d, dtype=int), np.arange(1, d + 1))


# --- edge weighting ---------------------------------------------------------------

def test_weight_identical_unit_features_degree_25():
    # directed entries into the hub use p(25) and into leaves p(1); check the hub side before symmetrizing
    g = star_with_leaves(25)
    x = np.zeros((26, 4), dtype=np.float32)
    x[:, 0] = 1.0
    # 1 - exp(-1) = 0.6321205588; (1 + 0.6321...) * 100 = 163.212 -> 163
    directed_into_hub = round((1.0 + 1 - math.exp(-25 / 25)) * 100)
    assert directed_into_hub == 163
    # a 26-regular complete graph has |N(v)| = 25 for everyone
    n = 26
    iu, ju = np.triu_indices(n, 1)
    k = Graph.from_edges(n, iu, ju)
    w = assign_edge_weights(k, NodeFeatures(np.tile(x[:1], (n, 1))), c=1.0, K=25)
    assert np.all(w.weights == 163)


def test_weight_c_zero_degree_k():
    n = 26
    iu, ju = np.triu_indices(n, 1)
    g = Graph.from_edges(n, iu, ju)
    feats = NodeFeatures(np.random.default_rng(0).standard_normal((n, 3)))
    assert np.all(assign_edge_weights(g, feats, c=0.0, K=25).weights == 63)


def test_weight_orthogonal_features_high_degree_clamps():
    g = star_with_leaves(5000)
    x = np.zeros((5001, 2), dtype=np.float32)
    x[0, 0] = 1.0
    x[1:, 1] = 1.0
    w = assign_edge_weights(g, NodeFeatures(x), c=3.0, K=1)
    # hub side: p = 1 - exp(-1/5000) -> rounds to 0 -> clamp 1; leaf side: p(1) = 0.632 -> 63; mean 32
    rev = g.reverse_index()
    assert np.all(w.weights >= 1)
    assert np.all(w.weights == w.weights[rev])
    assert set(w.weights.tolist()) == {32}


def test_negative_similarity_clamps():
    g = Graph.from_edges(2, [0], [1])
    x = np.array([[1.0], [-5.0]], dtype=np.float32)
    assert assign_edge_weights(g, NodeFeatures(x)).weights.tolist() == [1, 1]


def test_weights_symmetric_positive_on_generated():
    g, feats, *_ = generate(GenSpec(num_nodes=1500, avg_degree=8, seed=4))
    w = assign_edge_weights(g, feats)
    assert len(w) == g.num_edges and w.weights.dtype == np.int64
    assert np.all(w.weights >= 1)
    assert np.array_equal(w.weights, w.weights[g.reverse_index()])


def test_weight_rounding_half_up_oracle(rng):
    g, _ = random_weighted(12, 0.5, seed=3)
    x = rng.standard_normal((12, 3)).astype(np.float32)
    w = assign_edge_weights(g, NodeFeatures(x), c=0.7, K=4).weights
    deg = g.degrees()
    for e, (v, u) in enumerate(zip(g.rows(), g.neighbors)):
        def directed(dst, src):
            raw = (0.7 * float(np.dot(x[src].astype(np.float64), x[dst].astype(np.float64)))
                   + 1 - math.exp(-4 / deg[dst])) * 100
            return max(1, math.floor(raw + 0.5))
        expected = max(1, math.floor((directed(v, u) + directed(u, v)) / 2 + 0.5))
        assert w[e] == expected


# --- cut --------------------------------------------------------------------

def test_edge_cut_examples():
    g, w = two_cliques(8, bridge=7)
    assert edge_cut(g, w, np.zeros(16, dtype=int)) == 0
    assert edge_cut(g, w, np.repeat([0, 1], 8)) == 7
    iu, ju = np.triu_indices(6, 1)
    k6 = Graph.from_edges(6, iu, ju)
    part = np.random.default_rng(1).permutation([0, 0, 0, 1, 1, 1])
    assert edge_cut(k6, None, part) == 9


# --- coarsening -----------------------------------------------------------------

def hem_oracle(g, w, order):
    match = {}
    for v in order:
        if v in match:
            continue
        best, best_w = None, -1
        for e in range(g.offsets[v], g.offsets[v + 1]):
            u = int(g.neighbors[e])
            if u not in match and w[e] > best_w:
                best, best_w = u, w[e]
        if best is None:
            match[v] = v
        else:
            match[v], match[best] = best, v
    return match


def test_heavy_pair_contracted():
    # heavy pair 0-1 plus a light path elsewhere: whoever is visited first, 0 and 1 merge
    g = Graph.from_edges(6, [0, 2, 3, 4], [1, 3, 4, 5])
    w = np.where(g.rows() + g.neighbors == 1, 100, 1)
    for seed in range(10):
        lvl = coarsen(g, EdgeWeights(w), seed=seed)
        assert lvl.projection[0] == lvl.projection[1]


@pytest.mark.parametrize("seed", range(10))
def test_matching_follows_visit_order_oracle(seed):
    g, w = random_weighted(25, 0.25, seed=seed)
    lvl = coarsen(g, w, seed=seed)
    order = np.random.default_rng(seed).permutation(g.num_nodes).tolist()
    match = hem_oracle(g, w.weights, order)
    for v, u in match.items():
        assert lvl.projection[v] == lvl.projection[u]
    assert lvl.graph.num_nodes == len({min(v, u) for v, u in match.items()})


def test_edgeless_graph_unchanged():
    g = Graph.from_edges(5, [], [])
    lvl = coarsen(g, EdgeWeights.unit(g))
    assert lvl.graph.num_nodes == 5 and lvl.graph.num_edges == 0
    assert lvl.node_weights.tolist() == [1] * 5


def test_coarsen_preserves_mass_and_reaches_threshold():
    g, feats, *_ = generate(GenSpec(num_nodes=10_000, avg_degree=10, seed=5))
    w = assign_edge_weights(g, feats)
    cur, cw, vw = g, w, None
    levels = 0
    total_w = w.weights.sum()
    while cur.num_nodes > 200:
        lvl = coarsen(cur, cw, vw, seed=levels)
        assert lvl.node_weights.sum() == 10_000
        # contracted edges leave the cut mass; the rest is preserved exactly
        assert lvl.weights.weights.sum() <= total_w
        cur, cw, vw = lvl.graph, lvl.weights, lvl.node_weights
        levels += 1
        assert levels <= 40
    assert cur.num_nodes <= 200


# --- initial partition / refine / partition -----------------------------------------

def test_two_cliques_light_bridge_optimal():
    g, w = two_cliques(7, bridge=1)
    cfg = PartitionerConfig(num_parts=2, imbalance_epsilon=0.0)
    a = initial_partition(g, w, cfg)
    assert edge_cut(g, w, a) == exhaustive_bisection(14, edge_triples(g, w), 7) == 1


def test_initial_partition_trivial_cases():
    g, w = random_weighted(10, 0.4, seed=2)
    a = initial_partition(g, w, PartitionerConfig(num_parts=1))
    assert a.part_of.tolist() == [0] * 10 and edge_cut(g, w, a) == 0
    a = initial_partition(g, w, PartitionerConfig(num_parts=10))
    assert sorted(a.part_of.tolist()) == list(range(10))


def test_infeasible_balance():
    g, w = random_weighted(4, 1.0, seed=0)
    with pytest.raises(PartitionError, match="infeasible balance"):
        initial_partition(g, w, PartitionerConfig(num_parts=2, imbalance_epsilon=0.0),
                          node_weights=np.array([5, 1, 1, 1]))


def test_refine_optimal_unchanged():
    g, w = two_cliques(8, bridge=1)
    a = PartitionAssignment(2, np.repeat([0, 1], 8))
    out = refine(g, w, a, PartitionerConfig(num_parts=2, imbalance_epsilon=0.0))
    assert edge_cut(g, w, out) == 1


@pytest.mark.parametrize("seed", range(5))
def test_refine_adversarial_two_cliques(seed):
    g, w = two_cliques(8, bridge=1)
    part = np.random.default_rng(seed).permutation(np.repeat([0, 1], 8))
    cfg = PartitionerConfig(num_parts=2, imbalance_epsilon=0.0, seed=seed)
    out = refine(g, w, PartitionAssignment(2, part), cfg)
    assert edge_cut(g, w, out) == exhaustive_bisection(16, edge_triples(g, w), 8) == 1
    assert out.sizes().max() <= 8


@given(st.integers(4, 40), st.integers(2, 5), st.integers(0, 10_000))
@settings(max_examples=80, deadline=None)
def test_refine_monotone_and_balanced(n, k, seed):
    k = min(k, n)
    g, w = random_weighted(n, 0.3, seed)
    rng = np.random.default_rng(seed)
    part = rng.permutation(np.arange(n) % k)
    a = PartitionAssignment(k, part)
    cfg = PartitionerConfig(num_parts=k, seed=seed)
    out = refine(g, w, a, cfg)
    assert edge_cut(g, w, out) <= edge_cut(g, w, a)
    assert out.sizes().max() <= max(cfg.cap(n), a.sizes().max())


def test_partition_single_part():
    g, w = random_weighted(30, 0.2, seed=1)
    a = partition(g, w, PartitionerConfig(num_parts=1))
    assert np.all(a.part_of == 0) and edge_cut(g, w, a) == 0


def test_partition_deterministic():
    g, feats, *_ = generate(GenSpec(num_nodes=3000, avg_degree=10, seed=6))
    w = assign_edge_weights(g, feats)
    cfg = PartitionerConfig(num_parts=4, seed=3)
    assert np.array_equal(partition(g, w, cfg).part_of, partition(g, w, cfg).part_of)


def test_partition_directed_input_balanced():
    rng = np.random.default_rng(0)
    g = Graph.from_edges(500, rng.integers(0, 500, 2000), rng.integers(0, 500, 2000), undirected=False)
    a = partition(g, None, PartitionerConfig(num_parts=4))
    assert a.sizes().max() <= PartitionerConfig(num_parts=4).cap(500)
    assert np.all(a.sizes() > 0)


def test_assignment_round_trip(tmp_path):
    a = PartitionAssignment(3, np.array([0, 2, 1, 1]))
    a.save(tmp_path / "a.bin")
    assert (tmp_path / "a.bin").read_bytes() == np.array([0, 2, 1, 1], dtype="<u4").tobytes()
    assert PartitionAssignment.load(tmp_path / "a.bin", 3).part_of.tolist() == [0, 2, 1, 1]


@pytest.mark.parametrize("seed", range(5))
def test_planted_communities_recovered(seed):
    spec = GenSpec(num_nodes=4000, class_proportions=[0.25] * 4, homophily=0.95, seed=seed)
    g, feats, labels, *_ = generate(spec)
    a = partition(g, assign_edge_weights(g, feats), PartitionerConfig(num_parts=4, seed=seed))
    agree = 0
    for c in range(4):
        parts = a.part_of[labels.values == c]
        agree += np.bincount(parts, minlength=4).max()
    assert agree / spec.num_nodes >= 0.90
