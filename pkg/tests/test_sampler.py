import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from entropart.graph import Graph, LabelSet, SplitMasks, induce_local_partition
from entropart.partition import PartitionAssignment
from entropart.sampler import (cbs_probabilities, class_frequencies, make_batches, sample_block,
                               sample_mini_epoch, sample_neighbors)
from corpus import random_weighted
from oracles import dense_cbs


def whole_graph_view(g, train=None):
    n = g.num_nodes
    train = np.arange(n) if train is None else np.asarray(train)
    splits = SplitMasks(train, np.zeros(0, int), np.zeros(0, int))
    return induce_local_partition(g, PartitionAssignment(1, np.zeros(n, int)), 0, 2, splits)


def ring_lattice(n, half):
    src = np.repeat(np.arange(n), half)
    dst = (src + np.tile(np.arange(1, half + 1), n)) % n
    return Graph.from_edges(n, src, dst)


def test_path_probabilities():
    g = Graph.from_edges(3, [0, 1], [1, 2])
    labels = LabelSet("single", 2, [0, 0, 1])
    p = cbs_probabilities(whole_graph_view(g), labels)
    # column norms^2 [0.5, 4, 0.5] over CF [2, 2, 1] -> scores [0.25, 2, 0.5] / 2.75
    assert np.allclose(p, [0.25 / 2.75, 2 / 2.75, 0.5 / 2.75], atol=1e-12)
    assert np.allclose(p, [0.0909, 0.7273, 0.1818], atol=1e-4)


@pytest.mark.parametrize("norm", ["as-written", "symmetric"])
def test_matches_dense_oracle(norm, rng):
    for seed in range(5):
        g, _ = random_weighted(15, 0.3, seed=seed)
        classes = rng.integers(0, 3, 15)
        p = cbs_probabilities(whole_graph_view(g), LabelSet("single", 3, classes), norm)
        A = np.zeros((15, 15))
        A[g.rows(), g.neighbors] = 1
        ref = dense_cbs(A, classes.tolist(), norm)
        # isolated nodes get the floor score instead of zero
        iso = g.degrees() == 0
        assert np.allclose(p[~iso] / p[~iso].sum(), ref[~iso] / ref[~iso].sum(), atol=1e-12)
        assert abs(p.sum() - 1) < 1e-9


def test_regular_single_class_uniform():
    g = ring_lattice(50, 2)
    p = cbs_probabilities(whole_graph_view(g), LabelSet("single", 1, np.zeros(50, int)))
    assert np.allclose(p, 1 / 50, atol=1e-15)


def test_regular_two_class_equal_mass():
    g = ring_lattice(100, 3)
    labels = LabelSet("single", 2, (np.arange(100) >= 90).astype(int))
    p = cbs_probabilities(whole_graph_view(g), labels)
    assert p[:90].sum() == pytest.approx(0.5, abs=1e-12)
    assert p[90:].sum() == pytest.approx(0.5, abs=1e-12)
    assert p[90] > p[0]


def test_isolated_node_floor_and_multilabel_cf():
    g = Graph.from_edges(4, [0, 1], [1, 2])
    vals = np.array([[1, 0], [1, 1], [0, 0], [1, 0]])
    labels = LabelSet("multi", 2, vals)
    lp = whole_graph_view(g)
    assert class_frequencies(labels, lp.train_ids).tolist() == [3, 1]
    p = cbs_probabilities(lp, labels)
    # node 1 uses CF=1 (rarest positive), node 2 (no positives) uses |train|=4, node 3 is isolated
    norms = np.array([0.5, 4.0, 0.5, 1e-9])
    scores = norms / np.array([3, 1, 4, 3])
    assert np.allclose(p, scores / scores.sum(), rtol=1e-12)
    assert p[3] > 0


def test_no_train_nodes_rejected():
    g = ring_lattice(10, 1)
    with pytest.raises(ValueError):
        cbs_probabilities(whole_graph_view(g, []), LabelSet("single", 1, np.zeros(10, int)))


def test_smaller_class_gets_higher_probability():
    g = ring_lattice(40, 2)
    labels = LabelSet("single", 3, np.r_[np.zeros(25), np.ones(10), np.full(5, 2)].astype(int))
    p = cbs_probabilities(whole_graph_view(g), labels)
    assert p[0] < p[30] < p[39]


# --- mini-epochs ----------------------------------------------------------------

def test_mini_epoch_full_fraction_is_permutation(rng):
    ids = np.arange(100, 140)
    sub = sample_mini_epoch(ids, np.full(40, 1 / 40), 1.0, rng)
    assert sorted(sub.tolist()) == ids.tolist()


def test_mini_epoch_size_and_distinct(rng):
    ids = np.arange(103)
    sub = sample_mini_epoch(ids, rng.dirichlet(np.ones(103)), 0.25, rng)
    assert len(sub) == 26 and len(set(sub.tolist())) == 26
    with pytest.raises(ValueError):
        sample_mini_epoch(ids, np.ones(103) / 103, 0.0, rng)


def test_mini_epoch_first_draw_marginal():
    probs = np.r_[0.97, np.full(30, 0.03 / 30)]
    rng = np.random.default_rng(0)
    hits = sum(sample_mini_epoch(np.arange(31), probs, 1 / 31, rng)[0] == 0 for _ in range(10_000))
    assert abs(hits / 10_000 - 0.97) <= 0.02


def test_mini_epoch_matches_sequential_draw_law():
    # exact law of ordered pairs under draw-renormalize-draw, compared by chi-square
    probs = np.array([0.5, 0.3, 0.15, 0.05])
    rng = np.random.default_rng(1)
    counts = {}
    trials = 20_000
    for _ in range(trials):
        key = tuple(sample_mini_epoch(np.arange(4), probs, 0.5, rng).tolist())
        counts[key] = counts.get(key, 0) + 1
    pairs = [(i, j) for i in range(4) for j in range(4) if i != j]
    expected = np.array([probs[i] * probs[j] / (1 - probs[i]) for i, j in pairs]) * trials
    observed = np.array([counts.get(p, 0) for p in pairs])
    assert stats.chisquare(observed, expected).pvalue > 0.01


def test_mini_epoch_rng_streams():
    probs = np.full(50, 1 / 50)
    a = sample_mini_epoch(np.arange(50), probs, 0.3, np.random.default_rng(9))
    b = sample_mini_epoch(np.arange(50), probs, 0.3, np.random.default_rng(9))
    assert np.array_equal(a, b)


@pytest.mark.parametrize("n, bs, sizes", [(10, 4, [4, 4, 2]), (5, 8, [5]), (6, 6, [6])])
def test_make_batches(n, bs, sizes, rng):
    batches = make_batches(np.arange(n), bs, rng)
    assert [len(b) for b in batches] == sizes
    assert sorted(np.concatenate(batches).tolist()) == list(range(n))


# --- neighbor sampling ----------------------------------------------------------

def test_full_neighborhood_when_fanout_large():
    g, _ = random_weighted(30, 0.15, seed=2)
    block = sample_block(g, np.array([0, 5]), [50, 50], np.random.default_rng(0))
    outer = block.layers[1]
    got = {(int(outer.src_nodes[s]), int(outer.dst_nodes[d])) for s, d in zip(outer.edge_src, outer.edge_dst)}
    want = {(int(u), v) for v in (0, 5) for u in g.neighbors_of(v)}
    assert got == want
    two_hop = set(block.layers[0].src_nodes.tolist())
    expect = {0, 5} | {int(u) for v in (0, 5) for u in g.neighbors_of(v)}
    expect |= {int(x) for u in list(expect) for x in g.neighbors_of(u)}
    assert two_hop == expect


def test_star_center_fanout_one():
    g = Graph.from_edges(11, np.zeros(10, int), np.arange(1, 11))
    src, dpos = sample_neighbors(g, np.array([0]), 1, np.random.default_rng(0))
    assert len(src) == 1 and dpos.tolist() == [0] and 1 <= src[0] <= 10


@given(st.integers(5, 40), st.integers(1, 6), st.integers(1, 6), st.integers(0, 1000))
@settings(max_examples=60, deadline=None)
def test_block_invariants(n, f1, f2, seed):
    g, _ = random_weighted(n, 0.3, seed)
    rng = np.random.default_rng(seed)
    batch = rng.choice(n, size=min(4, n), replace=False)
    block = sample_block(g, batch, [f1, f2], rng)
    assert np.array_equal(block.layers[-1].dst_nodes, batch)
    for i, (layer, fan) in enumerate(zip(block.layers, [f1, f2])):
        if i > 0:
            assert set(layer.dst_nodes.tolist()) <= set(block.layers[i - 1].src_nodes.tolist())
            assert np.array_equal(layer.dst_nodes, block.layers[i - 1].src_nodes[: layer.num_dst])
        src = layer.src_nodes[layer.edge_src]
        dst = layer.dst_nodes[layer.edge_dst]
        assert np.all(g.entry_index(dst, src) >= 0)
        per = np.bincount(layer.edge_dst, minlength=layer.num_dst)
        assert np.all(per == np.minimum(g.degrees()[layer.dst_nodes], fan))
        assert len({(a, b) for a, b in zip(src.tolist(), dst.tolist())}) == len(src)
        assert len(set(layer.src_nodes.tolist())) == layer.num_src


def test_neighbor_sampling_uniform_chi_square():
    g = Graph.from_edges(9, np.zeros(8, int), np.arange(1, 9))
    rng = np.random.default_rng(3)
    counts = np.zeros(9)
    for _ in range(10_000):
        src, _ = sample_neighbors(g, np.array([0]), 3, rng)
        counts[src] += 1
    assert stats.chisquare(counts[1:]).pvalue > 0.01
