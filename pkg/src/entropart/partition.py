"""Feature/degree edge weighting and a multilevel weighted k-way partitioner.

The partitioner follows the usual multilevel recipe: heavy-edge matching
until the graph is small, greedy graph growing on the coarsest graph, then
Fiduccia-Mattheyses boundary refinement at every level on the way back up.
Node weights count the fine nodes a coarse node stands for, so the balance
cap is always expressed in fine nodes.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np
import scipy.sparse as sp

from entropart.graph import Graph, NodeFeatures


class PartitionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EdgeWeights:
    """Positive integer weight per adjacency entry, parallel to ``Graph.neighbors``."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.int64)
        if len(w) and w.min() < 1:
            raise ValueError("edge weights must be >= 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def unit(cls, g: Graph) -> "EdgeWeights":
        return cls(np.ones(g.num_edges, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.weights)


@dataclass(frozen=True, eq=False)
class PartitionAssignment:
    num_parts: int
    part_of: np.ndarray

    def __post_init__(self):
        p = np.ascontiguousarray(self.part_of, dtype=np.int64)
        if len(p) and (p.min() < 0 or p.max() >= self.num_parts):
            raise ValueError("part id out of range")
        p.setflags(write=False)
        object.__setattr__(self, "part_of", p)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.part_of, minlength=self.num_parts)

    def owned(self, part: int) -> np.ndarray:
        return np.flatnonzero(self.part_of == part)

    def save(self, path) -> None:
        from entropart._io import atomic_write_bytes

        atomic_write_bytes(path, self.part_of.astype("<u4").tobytes())

    @classmethod
    def load(cls, path, num_parts: int | None = None) -> "PartitionAssignment":
        with open(path, "rb") as fh:
            part_of = np.frombuffer(fh.read(), dtype="<u4").astype(np.int64)
        if num_parts is None:
            num_parts = int(part_of.max()) + 1 if len(part_of) else 1
        return cls(num_parts, part_of)


@dataclass
class PartitionerConfig:
    num_parts: int = 4
    imbalance_epsilon: float = 0.05
    coarsen_stop: int = 200
    refine_passes: int = 10
    seed: int = 0
    init_trials: int = 4
    max_levels: int = 40

    def __post_init__(self):
        if self.num_parts < 1:
            raise ValueError("num_parts must be >= 1")
        if self.imbalance_epsilon < 0:
            raise ValueError("imbalance_epsilon must be >= 0")
        if self.coarsen_stop < 1 or self.refine_passes < 0 or self.init_trials < 1:
            raise ValueError("coarsen_stop, init_trials must be >= 1 and refine_passes >= 0")

    def cap(self, total_weight: int) -> int:
        return int(math.floor((1 + self.imbalance_epsilon) * math.ceil(total_weight / self.num_parts) + 1e-9))


# --- edge weighting -----------------------------------------------------------

def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5).astype(np.int64)


def assign_edge_weights(g: Graph, feats: NodeFeatures, c: float = 1.0, K: int = 25,
                        chunk: int = 1 << 16) -> EdgeWeights:
    """Weight every entry ``u -> v`` by ``(c * <x_u, x_v> + 1 - exp(-K/|N(v)|)) * 100``.

    Weights are rounded and clamped at 1, then each reciprocal pair is
    replaced by the rounded mean of its two directed weights.
    """
    if feats.dim < 1 or K < 1 or c < 0:
        raise ValueError("need feats.dim >= 1, K >= 1 and c >= 0")
    rows, cols = g.rows(), g.neighbors
    deg = g.degrees().astype(np.float64)
    p_of = np.zeros(g.num_nodes)
    nz = deg > 0
    p_of[nz] = 1.0 - np.exp(-K / deg[nz])
    x = feats.data
    directed = np.empty(g.num_edges, dtype=np.int64)
    for lo in range(0, g.num_edges, chunk):
        hi = min(lo + chunk, g.num_edges)
        r, s = rows[lo:hi], cols[lo:hi]
        sim = np.einsum("ij,ij->i", x[s].astype(np.float64), x[r].astype(np.float64))
        directed[lo:hi] = _round_half_up((c * sim + p_of[r]) * 100.0)
    np.maximum(directed, 1, out=directed)
    rev = g.reverse_index()
    has = rev >= 0
    out = directed.copy()
    out[has] = np.maximum(1, _round_half_up((directed[has] + directed[rev[has]]) / 2.0))
    return EdgeWeights(out)


def edge_cut(g: Graph, w: EdgeWeights | None, assignment) -> int:
    """Total weight of edges crossing parts (each undirected edge counted once)."""
    part_of = np.asarray(getattr(assignment, "part_of", assignment))
    wt = np.ones(g.num_edges, dtype=np.int64) if w is None else np.asarray(getattr(w, "weights", w))
    crossing = part_of[g.rows()] != part_of[g.neighbors]
    total = int(wt[crossing].sum())
    return total // 2 if g.undirected else total


def _symmetrized(g: Graph, w: np.ndarray) -> tuple[Graph, np.ndarray]:
    src, dst = g.edge_pairs()
    n = np.int64(g.num_nodes)
    s = np.concatenate([src, dst])
    d = np.concatenate([dst, src])
    keys, inv = np.unique(d * n + s, return_inverse=True)
    ww = np.bincount(inv, weights=np.concatenate([w, w])).astype(np.int64)
    rows, cols = keys // n, keys % n
    offsets = np.zeros(g.num_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=g.num_nodes), out=offsets[1:])
    return Graph(offsets, cols, True), ww


# --- coarsening ---------------------------------------------------------------

class CoarseLevel(NamedTuple):
    graph: Graph
    weights: EdgeWeights
    node_weights: np.ndarray
    projection: np.ndarray  # fine node -> coarse node


@numba.njit(cache=True)
def _heavy_edge_match(offsets, nbrs, ewts, vwts, order, max_vw):
    n = len(offsets) - 1
    match = np.full(n, -1, dtype=np.int64)
    for v in order:
        if match[v] != -1:
            continue
        best = -1
        best_w = -1
        for e in range(offsets[v], offsets[v + 1]):
            u = nbrs[e]
            if u != v and match[u] == -1 and vwts[u] + vwts[v] <= max_vw and ewts[e] > best_w:
                best = u
                best_w = ewts[e]
        if best >= 0:
            match[v] = best
            match[best] = v
        else:
            match[v] = v
    cmap = np.full(n, -1, dtype=np.int64)
    nc = 0
    for v in range(n):
        if cmap[v] == -1:
            cmap[v] = nc
            cmap[match[v]] = nc
            nc += 1
    return cmap, nc


def contract(g: Graph, w: np.ndarray, node_weights: np.ndarray, cmap: np.ndarray, nc: int) -> CoarseLevel:
    """Merge nodes sharing a ``cmap`` id; parallel edge weights are summed."""
    cr = cmap[g.rows()]
    cc = cmap[g.neighbors]
    keep = cr != cc
    keys, inv = np.unique(cr[keep] * np.int64(nc) + cc[keep], return_inverse=True)
    cw = np.bincount(inv, weights=w[keep]).astype(np.int64) if len(keys) else np.zeros(0, np.int64)
    rows, cols = keys // nc, keys % nc
    offsets = np.zeros(nc + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=nc), out=offsets[1:])
    vw = np.bincount(cmap, weights=node_weights, minlength=nc).astype(np.int64)
    return CoarseLevel(Graph(offsets, cols, g.undirected), EdgeWeights(cw), vw, cmap)


def coarsen(g: Graph, w: EdgeWeights, node_weights: np.ndarray | None = None, seed: int = 0,
            max_node_weight: int | None = None, rng: np.random.Generator | None = None) -> CoarseLevel:
    """One level of heavy-edge matching followed by contraction.

    Nodes are visited in random order; each unmatched node pairs with the
    unmatched neighbor behind its heaviest edge. ``max_node_weight`` forbids
    matches whose merged weight would exceed it.
    """
    vw = np.ones(g.num_nodes, dtype=np.int64) if node_weights is None else np.asarray(node_weights, dtype=np.int64)
    rng = np.random.default_rng(seed) if rng is None else rng
    order = rng.permutation(g.num_nodes).astype(np.int64)
    limit = np.iinfo(np.int64).max if max_node_weight is None else int(max_node_weight)
    cmap, nc = _heavy_edge_match(g.offsets, g.neighbors, w.weights, vw, order, limit)
    return contract(g, w.weights, vw, cmap, nc)


# --- initial partition ----------------------------------------------------------

def _grow_regions(g: Graph, w: np.ndarray, vw: np.ndarray, num_parts: int, cap: int,
                  rng: np.random.Generator) -> np.ndarray:
    n = g.num_nodes
    part = np.full(n, -1, dtype=np.int64)
    tiebreak = rng.permutation(n)
    remaining = int(vw.sum())
    unassigned = n
    for q in range(num_parts - 1):
        target = remaining / (num_parts - q)
        reserve = num_parts - q - 1  # one node for every later region
        conn: dict[int, int] = {}
        heap: list[tuple[int, int, int]] = []
        pw = 0
        while pw < target and unassigned > reserve:
            v = -1
            while heap:
                neg_c, _, u = heapq.heappop(heap)
                if part[u] == -1 and -neg_c == conn[u] and pw + vw[u] <= cap:
                    v = u
                    break
            if v == -1:
                free = np.flatnonzero((part == -1) & (pw + vw <= cap))
                if len(free) == 0:
                    break
                v = int(free[rng.integers(len(free))])
            part[v] = q
            unassigned -= 1
            pw += int(vw[v])
            for e in range(g.offsets[v], g.offsets[v + 1]):
                u = int(g.neighbors[e])
                if part[u] == -1:
                    conn[u] = conn.get(u, 0) + int(w[e])
                    heapq.heappush(heap, (-conn[u], int(tiebreak[u]), u))
        remaining -= pw
    part[part == -1] = num_parts - 1
    return part


def _part_weights(part, vw, k):
    return np.bincount(part, weights=vw, minlength=k).astype(np.int64)


def _imbalance(pw, cap) -> int:
    return int(max(0, pw.max() - cap)) if len(pw) else 0


def initial_partition(g: Graph, w: EdgeWeights, cfg: PartitionerConfig, node_weights: np.ndarray | None = None,
                      rng: np.random.Generator | None = None, refine_trials: bool = True) -> PartitionAssignment:
    """Greedy graph growing, best of ``cfg.init_trials`` random seedings.

    Each region starts at a random node and absorbs the unassigned boundary
    node with the largest connecting weight until it holds its share of the
    remaining weight, never exceeding the balance cap. The last region takes
    whatever is left. With ``refine_trials`` every trial gets FM refinement
    before the trials are compared.
    """
    n = g.num_nodes
    k = cfg.num_parts
    vw = np.ones(n, dtype=np.int64) if node_weights is None else np.asarray(node_weights, dtype=np.int64)
    cap = cfg.cap(int(vw.sum()))
    if n and vw.max() > cap:
        raise PartitionError(f"infeasible balance: node weight {int(vw.max())} exceeds cap {cap}")
    if k > n:
        raise PartitionError(f"cannot split {n} nodes into {k} non-empty parts")
    if k == 1:
        return PartitionAssignment(1, np.zeros(n, dtype=np.int64))
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    best, best_key = None, None
    for _ in range(cfg.init_trials):
        part = _grow_regions(g, w.weights, vw, k, cap, rng)
        part = _rebalance(g, w.weights, vw, part, k, cap)
        if refine_trials:
            part = refine(g, w, PartitionAssignment(k, part), cfg, node_weights=vw, rng=rng, cap=cap).part_of
        key = (_imbalance(_part_weights(part, vw, k), cap), edge_cut(g, w, part))
        if best_key is None or key < best_key:
            best, best_key = part, key
    return PartitionAssignment(k, best)


def _rebalance(g: Graph, w: np.ndarray, vw: np.ndarray, part: np.ndarray, k: int, cap: int) -> np.ndarray:
    """Move nodes out of overweight parts, choosing the least damaging moves."""
    part = part.copy()
    pw = _part_weights(part, vw, k)
    if pw.max() <= cap:
        return part
    n = g.num_nodes
    adj = sp.csr_matrix((w.astype(np.float64), g.neighbors, g.offsets), shape=(n, n))
    while pw.max() > cap:
        src = int(np.argmax(pw))
        members = np.flatnonzero(part == src)
        conn = np.asarray(adj[members] @ sp.csr_matrix(
            (np.ones(n), (np.arange(n), part)), shape=(n, k)).toarray())
        gain = conn - conn[:, [src]]
        fits = (pw[None, :] + vw[members][:, None] <= cap)
        fits[:, src] = False
        if not fits.any() or len(members) < 2:
            break
        gain = np.where(fits, gain, -np.inf)
        i, q = np.unravel_index(np.argmax(gain), gain.shape)
        v = members[i]
        part[v] = q
        pw[src] -= vw[v]
        pw[q] += vw[v]
    return part


# --- refinement -------------------------------------------------------------

@numba.njit(cache=True)
def _best_move(v, offsets, nbrs, ewts, vw, part, pw, k, limit, conn):
    for q in range(k):
        conn[q] = 0
    for e in range(offsets[v], offsets[v + 1]):
        conn[part[nbrs[e]]] += ewts[e]
    p = part[v]
    best_q = -1
    best_g = 0
    for q in range(k):
        if q == p or conn[q] == 0 or pw[q] + vw[v] > limit:
            continue
        gain = conn[q] - conn[p]
        if best_q == -1 or gain > best_g or (gain == best_g and pw[q] < pw[best_q]):
            best_q = q
            best_g = gain
    return best_q, best_g


@numba.njit(cache=True)
def _heap_push(hk, hv, hs, size, key, v, stamp):
    i = size
    hk[i] = key
    hv[i] = v
    hs[i] = stamp
    while i > 0:
        parent = (i - 1) // 2
        if hk[parent] >= hk[i]:
            break
        hk[parent], hk[i] = hk[i], hk[parent]
        hv[parent], hv[i] = hv[i], hv[parent]
        hs[parent], hs[i] = hs[i], hs[parent]
        i = parent
    return size + 1


@numba.njit(cache=True)
def _heap_pop(hk, hv, hs, size):
    key, v, stamp = hk[0], hv[0], hs[0]
    size -= 1
    hk[0], hv[0], hs[0] = hk[size], hv[size], hs[size]
    i = 0
    while True:
        left = 2 * i + 1
        right = left + 1
        big = i
        if left < size and hk[left] > hk[big]:
            big = left
        if right < size and hk[right] > hk[big]:
            big = right
        if big == i:
            break
        hk[big], hk[i] = hk[i], hk[big]
        hv[big], hv[i] = hv[i], hv[big]
        hs[big], hs[i] = hs[i], hs[big]
        i = big
    return key, v, stamp, size


@numba.njit(cache=True)
def _fm_pass(offsets, nbrs, ewts, vw, part, pw, k, cap, slack, max_stall, rank):
    """One FM pass; returns the cut change (<= 0). ``part``/``pw`` updated in place.

    Moves may temporarily overload a part by up to ``slack`` and may have
    negative gain; afterwards the pass rolls back to the best prefix by
    (overload beyond ``cap``, cut).
    """
    n = len(vw)
    m = len(nbrs)
    conn = np.zeros(k, dtype=np.int64)
    cap_heap = n + m + 1
    hk = np.empty(cap_heap, dtype=np.int64)
    hv = np.empty(cap_heap, dtype=np.int64)
    hs = np.empty(cap_heap, dtype=np.int64)
    size = 0
    stamp = np.zeros(n, dtype=np.int64)
    locked = np.zeros(n, dtype=np.bool_)
    log_v = np.empty(n, dtype=np.int64)
    log_from = np.empty(n, dtype=np.int64)
    limit = cap + slack

    for v in range(n):
        boundary = False
        for e in range(offsets[v], offsets[v + 1]):
            if part[nbrs[e]] != part[v]:
                boundary = True
                break
        if boundary:
            q, g = _best_move(v, offsets, nbrs, ewts, vw, part, pw, k, limit, conn)
            if q >= 0:
                size = _heap_push(hk, hv, hs, size, g * n + rank[v], v, stamp[v])

    overload = 0
    for q in range(k):
        if pw[q] - cap > overload:
            overload = pw[q] - cap
    best_over = overload
    delta = 0
    best_delta = 0
    best_len = 0
    nmoves = 0
    stall = 0
    while size > 0:
        key, v, s, size = _heap_pop(hk, hv, hs, size)
        if locked[v] or s != stamp[v]:
            continue
        q, g = _best_move(v, offsets, nbrs, ewts, vw, part, pw, k, limit, conn)
        if q < 0:
            continue
        if g * n + rank[v] != key:
            stamp[v] += 1
            size = _heap_push(hk, hv, hs, size, g * n + rank[v], v, stamp[v])
            continue
        p = part[v]
        if pw[p] - vw[v] <= 0:
            continue
        part[v] = q
        pw[p] -= vw[v]
        pw[q] += vw[v]
        locked[v] = True
        log_v[nmoves] = v
        log_from[nmoves] = p
        nmoves += 1
        delta -= g
        overload = 0
        for r in range(k):
            if pw[r] - cap > overload:
                overload = pw[r] - cap
        if overload < best_over or (overload == best_over and delta < best_delta):
            best_over = overload
            best_delta = delta
            best_len = nmoves
            stall = 0
        else:
            stall += 1
            if stall > max_stall:
                break
        for e in range(offsets[v], offsets[v + 1]):
            u = nbrs[e]
            if locked[u]:
                continue
            stamp[u] += 1
            q2, g2 = _best_move(u, offsets, nbrs, ewts, vw, part, pw, k, limit, conn)
            if q2 >= 0:
                size = _heap_push(hk, hv, hs, size, g2 * n + rank[u], u, stamp[u])

    for i in range(nmoves - 1, best_len - 1, -1):
        v = log_v[i]
        q = part[v]
        p = log_from[i]
        part[v] = p
        pw[q] -= vw[v]
        pw[p] += vw[v]
    return best_delta


def refine(g: Graph, w: EdgeWeights, assignment: PartitionAssignment, cfg: PartitionerConfig,
           node_weights: np.ndarray | None = None, rng: np.random.Generator | None = None,
           cap: int | None = None) -> PartitionAssignment:
    """Boundary FM refinement; never increases the cut or the heaviest part beyond the cap.

    The cap is ``cfg``'s balance cap, raised to the input's heaviest part if
    the input is already over it.
    """
    k = assignment.num_parts
    vw = np.ones(g.num_nodes, dtype=np.int64) if node_weights is None else np.asarray(node_weights, dtype=np.int64)
    part = assignment.part_of.copy()
    if k == 1 or g.num_edges == 0:
        return PartitionAssignment(k, part)
    pw = _part_weights(part, vw, k)
    limit = cfg.cap(int(vw.sum())) if cap is None else cap
    limit = max(limit, int(pw.max()))
    slack = int(vw.max())
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    max_stall = max(50, g.num_nodes // 20)
    for _ in range(cfg.refine_passes):
        rank = rng.permutation(g.num_nodes).astype(np.int64)
        before = pw.copy()
        delta = _fm_pass(g.offsets, g.neighbors, w.weights, vw, part, pw, k, limit, slack, max_stall, rank)
        if delta == 0 and np.array_equal(before, pw):
            break
    return PartitionAssignment(k, part)


def partition(g: Graph, w: EdgeWeights | None, cfg: PartitionerConfig) -> PartitionAssignment:
    """Multilevel k-way partition minimizing the weighted cut under the balance cap."""
    k = cfg.num_parts
    n = g.num_nodes
    if k < 1:
        raise PartitionError("num_parts must be >= 1")
    if k == 1:
        return PartitionAssignment(1, np.zeros(n, dtype=np.int64))
    if k > n:
        raise PartitionError(f"cannot split {n} nodes into {k} non-empty parts")
    weights = np.ones(g.num_edges, dtype=np.int64) if w is None else w.weights
    if not g.undirected:
        g, weights = _symmetrized(g, weights)
    rng = np.random.default_rng(cfg.seed)
    cap = cfg.cap(n)
    max_vw = max(1, min(math.ceil(1.5 * n / cfg.coarsen_stop), cap // 2))

    cur_g, cur_w, cur_vw = g, EdgeWeights(weights), np.ones(n, dtype=np.int64)
    stack = []
    while cur_g.num_nodes > cfg.coarsen_stop and len(stack) < cfg.max_levels:
        lvl = coarsen(cur_g, cur_w, cur_vw, max_node_weight=max_vw, rng=rng)
        if lvl.graph.num_nodes > 0.95 * cur_g.num_nodes:
            break
        stack.append((cur_g, cur_w, cur_vw, lvl.projection))
        cur_g, cur_w, cur_vw = lvl.graph, lvl.weights, lvl.node_weights

    assign = initial_partition(cur_g, cur_w, cfg, node_weights=cur_vw, rng=rng)
    assign = refine(cur_g, cur_w, assign, cfg, node_weights=cur_vw, rng=rng, cap=cap)
    part = assign.part_of
    while stack:
        fg, fw, fvw, proj = stack.pop()
        part = part[proj]
        part = _rebalance(fg, fw.weights, fvw, part, k, cap)
        part = refine(fg, fw, PartitionAssignment(k, part), cfg, node_weights=fvw, rng=rng, cap=cap).part_of
    return PartitionAssignment(k, part)
