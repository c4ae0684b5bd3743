"""Class-balanced mini-epoch sampling and layered neighbor sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from entropart.graph import Graph, LabelSet, LocalPartition

ISOLATED_SCORE = 1e-9
NORMALIZATIONS = ("as-written", "symmetric")


def class_frequencies(labels: LabelSet, train_global: np.ndarray) -> np.ndarray:
    """Count of each class among the given training nodes (multi mode counts every positive)."""
    vals = labels.values[np.asarray(train_global, dtype=np.int64)]
    if labels.is_multi:
        return vals.sum(axis=0).astype(np.int64)
    return np.bincount(vals, minlength=labels.num_classes)


def column_norms_sq(g: Graph, nodes: np.ndarray, normalization: str = "as-written") -> np.ndarray:
    """Squared column norms of the degree-normalized adjacency at ``nodes``.

    ``as-written`` uses D^{-1/2} A D^{1/2}, giving d_v * sum_{u in N(v)} 1/d_u;
    ``symmetric`` uses D^{-1/2} A D^{-1/2}, giving (1/d_v) * sum 1/d_u.
    """
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
    deg = g.degrees().astype(np.float64)
    inv = np.zeros_like(deg)
    inv[deg > 0] = 1.0 / deg[deg > 0]
    # column v of A has the same support as row v for the undirected local graph
    row_sum = np.bincount(g.rows(), weights=inv[g.neighbors], minlength=g.num_nodes)
    nodes = np.asarray(nodes, dtype=np.int64)
    d = deg[nodes]
    if normalization == "as-written":
        return d * row_sum[nodes]
    out = np.zeros(len(nodes))
    nz = d > 0
    out[nz] = row_sum[nodes][nz] / d[nz]
    return out


def cbs_probabilities(local: LocalPartition, labels: LabelSet, normalization: str = "as-written") -> np.ndarray:
    """Sampling probability of each local training node, in ``local.train_ids`` order.

    Score is the squared normalized-adjacency column norm divided by the
    frequency of the node's class among local training nodes. Multi-label
    nodes use their rarest positive label; nodes with no positive label use
    the training-set size. Isolated nodes get a tiny floor score so they
    remain sampleable.
    """
    train = np.asarray(local.train_ids, dtype=np.int64)
    if len(train) == 0:
        raise ValueError("local partition has no training nodes")
    cf = class_frequencies(labels, train)
    if labels.is_multi:
        rows = labels.values[train].astype(bool)
        per_node = np.where(rows, cf[None, :], np.iinfo(np.int64).max).min(axis=1)
        per_node = np.where(rows.any(axis=1), per_node, len(train)).astype(np.float64)
    else:
        per_node = cf[labels.values[train]].astype(np.float64)
    norms = column_norms_sq(local.local_graph, local.global_to_local(train), normalization)
    norms = np.where(norms > 0, norms, ISOLATED_SCORE)
    scores = norms / per_node
    return scores / scores.sum()


def sample_mini_epoch(train_ids: np.ndarray, probs: np.ndarray, fraction: float,
                      rng: np.random.Generator) -> np.ndarray:
    """Draw ceil(fraction * |train|) distinct nodes, successive sampling proportional to ``probs``.

    Exponential race keys (Efraimidis-Spirakis): sorting by E/p with E ~ Exp(1)
    yields exactly the order of sequential draws that renormalize after each
    pick, so the returned array is also in draw order.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    train_ids = np.asarray(train_ids)
    probs = np.asarray(probs, dtype=np.float64)
    size = math.ceil(fraction * len(train_ids) - 1e-12)
    keys = rng.standard_exponential(len(train_ids))
    with np.errstate(divide="ignore"):
        keys = np.where(probs > 0, keys / probs, np.inf)
    order = np.argsort(keys, kind="stable")[:size]
    return train_ids[order]


def make_batches(subset: np.ndarray, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    shuffled = rng.permutation(np.asarray(subset))
    return [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]


@dataclass(frozen=True, eq=False)
class LayerBlock:
    """Bipartite message block. The first ``num_dst`` entries of ``src_nodes`` are the destinations."""

    src_nodes: np.ndarray
    num_dst: int
    edge_src: np.ndarray  # index into src_nodes
    edge_dst: np.ndarray  # index into dst (= src_nodes[:num_dst])

    @property
    def dst_nodes(self) -> np.ndarray:
        return self.src_nodes[: self.num_dst]

    @property
    def num_src(self) -> int:
        return len(self.src_nodes)


@dataclass(frozen=True, eq=False)
class MiniBatchBlock:
    layers: list  # input side first
    seeds: np.ndarray

    @property
    def input_nodes(self) -> np.ndarray:
        return self.layers[0].src_nodes


def sample_neighbors(g: Graph, dst: np.ndarray, fanout: int | None,
                     rng: np.random.Generator | None) -> tuple[np.ndarray, np.ndarray]:
    """Up to ``fanout`` distinct in-neighbors per destination, uniformly without replacement.

    Returns (source node ids, destination positions). ``fanout=None`` keeps all.
    """
    dst = np.asarray(dst, dtype=np.int64)
    deg = g.degrees()[dst]
    total = int(deg.sum())
    seg = np.repeat(np.arange(len(dst)), deg)
    seg_start = np.concatenate([[0], np.cumsum(deg)[:-1]]).astype(np.int64)
    within = np.arange(total) - seg_start[seg]
    idx = g.offsets[dst][seg] + within
    if fanout is None or total == 0 or deg.max() <= fanout:
        return g.neighbors[idx], seg
    big = deg[seg] > fanout
    keep = ~big
    b_idx = np.flatnonzero(big)
    keys = rng.random(len(b_idx))
    order = b_idx[np.lexsort((keys, seg[b_idx]))]
    # order is grouped by segment; rank each entry within its segment
    seg_o = seg[order]
    first = np.r_[0, np.flatnonzero(np.diff(seg_o)) + 1]
    starts = np.repeat(first, np.diff(np.r_[first, len(seg_o)]))
    rank = np.arange(len(order)) - starts
    chosen = np.zeros(total, dtype=bool)
    chosen[keep] = True
    chosen[order[rank < fanout]] = True
    return g.neighbors[idx[chosen]], seg[chosen]


def sample_block(g: Graph, batch: np.ndarray, fanouts, rng: np.random.Generator | None) -> MiniBatchBlock:
    """Layered sample for a batch of local node ids.

    ``fanouts[i]`` caps the in-neighbors sampled for layer ``i`` (input side
    first); ``None`` entries mean the full neighborhood.
    """
    batch = np.asarray(batch, dtype=np.int64)
    pos = np.full(g.num_nodes, -1, dtype=np.int64)
    layers = []
    dst = batch
    for fanout in reversed(list(fanouts)):
        nbr, dpos = sample_neighbors(g, dst, fanout, rng)
        pos[dst] = np.arange(len(dst))
        fresh = np.unique(nbr[pos[nbr] < 0])
        src_nodes = np.concatenate([dst, fresh])
        pos[fresh] = np.arange(len(dst), len(src_nodes))
        layers.append(LayerBlock(src_nodes, len(dst), pos[nbr], dpos))
        pos[src_nodes] = -1
        dst = src_nodes
    layers.reverse()
    return MiniBatchBlock(layers, batch)
