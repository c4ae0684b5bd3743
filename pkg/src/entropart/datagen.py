"""Planted-community (stochastic block model) datasets with class imbalance."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from entropart.graph import Graph, LabelSet, NodeFeatures, SplitMasks


@dataclass
class GenSpec:
    num_nodes: int = 20_000
    num_classes: int = 4
    class_proportions: list[float] = field(default_factory=lambda: [0.7, 0.2, 0.07, 0.03])
    homophily: float = 0.9
    avg_degree: float = 20.0
    feature_dim: int = 64
    feature_noise: float = 0.25
    seed: int = 0

    def __post_init__(self):
        self.class_proportions = [float(p) for p in self.class_proportions]
        if len(self.class_proportions) != self.num_classes:
            raise ValueError("class_proportions must have num_classes entries")
        if any(p < 0 for p in self.class_proportions) or abs(sum(self.class_proportions) - 1.0) > 1e-9:
            raise ValueError("class_proportions must be non-negative and sum to 1")
        if not 0.0 <= self.homophily <= 1.0:
            raise ValueError("homophily must lie in [0, 1]")
        if self.feature_noise < 0:
            raise ValueError("feature_noise must be >= 0")
        if self.num_nodes < self.num_classes:
            raise ValueError("num_nodes must be >= num_classes")
        if self.avg_degree < 0 or self.avg_degree >= self.num_nodes:
            raise ValueError(f"infeasible degree: avg_degree={self.avg_degree} with {self.num_nodes} nodes")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def class_means(num_classes: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-norm class centroids, mutually orthogonal whenever ``dim >= num_classes``."""
    if dim >= num_classes:
        q, r = np.linalg.qr(rng.standard_normal((dim, num_classes)))
        return (q * np.sign(np.diag(r))).T
    while True:
        m = rng.standard_normal((num_classes, dim))
        m /= np.linalg.norm(m, axis=1, keepdims=True)
        if len({tuple(np.round(row, 12)) for row in m}) == num_classes:
            return m


def _sample_pairs(rng, a_nodes, b_nodes, count: int) -> np.ndarray:
    """``count`` distinct unordered pairs, one endpoint from each node group."""
    if count == 0:
        return np.zeros((0, 2), dtype=np.int64)
    got = np.zeros((0, 2), dtype=np.int64)
    while len(got) < count:
        need = count - len(got)
        draw = int(need * 1.1) + 16
        i = a_nodes[rng.integers(0, len(a_nodes), draw)]
        j = b_nodes[rng.integers(0, len(b_nodes), draw)]
        keep = i != j
        pairs = np.stack([np.minimum(i, j), np.maximum(i, j)], axis=1)[keep]
        merged = np.concatenate([got, pairs])
        _, first = np.unique(merged[:, 0] * (1 << 32) + merged[:, 1], return_index=True)
        got = merged[np.sort(first)]
    return got[:count]


def generate(spec: GenSpec) -> tuple[Graph, NodeFeatures, LabelSet, SplitMasks, tuple[np.ndarray, np.ndarray]]:
    """Sample a dataset. The trailing tuple is the raw (undirected) edge list."""
    rng = np.random.default_rng(spec.seed)
    n, L = spec.num_nodes, spec.num_classes
    labels = rng.choice(L, size=n, p=np.asarray(spec.class_proportions))
    members = [np.flatnonzero(labels == c) for c in range(L)]
    sizes = np.array([len(m) for m in members], dtype=np.float64)

    total_edges = n * spec.avg_degree / 2.0
    intra_pairs = float((sizes * (sizes - 1) / 2).sum())
    inter_pairs = n * (n - 1) / 2.0 - intra_pairs
    p_in = spec.homophily * total_edges / intra_pairs if intra_pairs else 0.0
    p_out = (1 - spec.homophily) * total_edges / inter_pairs if inter_pairs else 0.0
    if p_in > 1 or p_out > 1 or (spec.homophily > 0 and intra_pairs == 0 and total_edges > 0):
        raise ValueError("infeasible degree/homophily combination for these class sizes")

    chunks = []
    for a in range(L):
        for b in range(a, L):
            if a == b:
                pairs_ab, p = sizes[a] * (sizes[a] - 1) / 2, p_in
            else:
                pairs_ab, p = sizes[a] * sizes[b], p_out
            if pairs_ab == 0 or p == 0:
                continue
            m = int(rng.binomial(int(pairs_ab), p))
            chunks.append(_sample_pairs(rng, members[a], members[b], m))
    edges = np.concatenate(chunks) if chunks else np.zeros((0, 2), dtype=np.int64)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    edges = edges[order]
    g = Graph.from_edges(n, edges[:, 0], edges[:, 1], undirected=True)

    means = class_means(L, spec.feature_dim, rng)
    x = means[labels] + spec.feature_noise * rng.standard_normal((n, spec.feature_dim))
    feats = NodeFeatures(x.astype(np.float32))

    train, val, test = [], [], []
    for m in members:
        perm = rng.permutation(m)
        n_tr = int(round(0.6 * len(m)))
        n_va = int(round(0.2 * len(m)))
        train.append(perm[:n_tr])
        val.append(perm[n_tr : n_tr + n_va])
        test.append(perm[n_tr + n_va :])
    splits = SplitMasks(*(np.sort(np.concatenate(s)).astype(np.int64) for s in (train, val, test)))
    return g, feats, LabelSet("single", L, labels), splits, (edges[:, 0], edges[:, 1])
