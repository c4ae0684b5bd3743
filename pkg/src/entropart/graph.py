"""CSR graphs, node data, dataset I/O and partition-local views.

Row ``v`` of the CSR lists ``N(v)``: the sources ``u`` of the edges ``u -> v``.
For undirected graphs every entry is mirrored, so the distinction only
matters for directed inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from entropart._io import atomic_write_bytes, atomic_write_text

__all__ = [
    "DatasetError",
    "Graph",
    "NodeFeatures",
    "LabelSet",
    "SplitMasks",
    "LocalPartition",
    "load_dataset",
    "save_dataset",
    "induce_local_partition",
    "validate",
]


class DatasetError(ValueError):
    """Raised when an on-disk dataset or an in-memory one is malformed."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    offsets: np.ndarray
    neighbors: np.ndarray
    undirected: bool = True

    def __post_init__(self):
        object.__setattr__(self, "offsets", _frozen(np.asarray(self.offsets, dtype=np.int64)))
        object.__setattr__(self, "neighbors", _frozen(np.asarray(self.neighbors, dtype=np.int64)))

    @property
    def num_nodes(self) -> int:
        return len(self.offsets) - 1

    @property
    def num_edges(self) -> int:
        return len(self.neighbors)

    def degrees(self) -> np.ndarray:
        return np.diff(self.offsets)

    def neighbors_of(self, v: int) -> np.ndarray:
        return self.neighbors[self.offsets[v] : self.offsets[v + 1]]

    def rows(self) -> np.ndarray:
        """Row (destination) index of every adjacency entry."""
        return np.repeat(np.arange(self.num_nodes, dtype=np.int64), self.degrees())

    @classmethod
    def from_edges(cls, num_nodes: int, src, dst, undirected: bool = True) -> "Graph":
        """Build a CSR graph from an edge list ``src[i] -> dst[i]``.

        Self-loops are dropped and duplicates collapsed; with ``undirected``
        every edge is mirrored first.
        """
        src = np.asarray(src, dtype=np.int64).ravel()
        dst = np.asarray(dst, dtype=np.int64).ravel()
        if src.shape != dst.shape:
            raise DatasetError("edge endpoint arrays differ in length")
        if len(src) and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= num_nodes):
            raise DatasetError("edge endpoint out of range")
        if undirected:
            src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
        keep = src != dst
        src, dst = src[keep], dst[keep]
        # rows are destinations; sort by (row, col) and dedupe
        keys = np.unique(dst * np.int64(num_nodes) + src)
        rows = keys // num_nodes
        cols = keys % num_nodes
        offsets = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=num_nodes), out=offsets[1:])
        return cls(offsets, cols, undirected)

    def edge_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """(src, dst) arrays of all directed adjacency entries."""
        return self.neighbors.copy(), self.rows()

    def entry_index(self, dst: np.ndarray, src: np.ndarray) -> np.ndarray:
        """Position of entry ``src -> dst`` in ``neighbors``, or -1 if absent."""
        n = np.int64(self.num_nodes)
        keys = self.rows() * n + self.neighbors
        want = np.asarray(dst, dtype=np.int64) * n + np.asarray(src, dtype=np.int64)
        pos = np.searchsorted(keys, want)
        pos_c = np.minimum(pos, max(len(keys) - 1, 0))
        found = (pos < len(keys)) & (keys[pos_c] == want) if len(keys) else np.zeros(len(want), bool)
        return np.where(found, pos_c, -1)

    def reverse_index(self) -> np.ndarray:
        """For each entry ``u -> v``, the position of ``v -> u`` (-1 if missing)."""
        return self.entry_index(self.neighbors, self.rows())

    def is_symmetric(self) -> bool:
        return bool(np.all(self.reverse_index() >= 0))

    def subgraph(self, nodes: np.ndarray) -> "Graph":
        """Induced subgraph; local id ``i`` corresponds to ``nodes[i]``."""
        nodes = np.asarray(nodes, dtype=np.int64)
        g2l = np.full(self.num_nodes, -1, dtype=np.int64)
        g2l[nodes] = np.arange(len(nodes))
        deg = self.degrees()[nodes]
        starts = self.offsets[nodes]
        idx = np.repeat(starts - np.concatenate([[0], np.cumsum(deg)[:-1]]), deg) + np.arange(deg.sum())
        local_rows = np.repeat(np.arange(len(nodes)), deg)
        local_cols = g2l[self.neighbors[idx]]
        keep = local_cols >= 0
        local_rows, local_cols = local_rows[keep], local_cols[keep]
        order = np.lexsort((local_cols, local_rows))
        offsets = np.zeros(len(nodes) + 1, dtype=np.int64)
        np.cumsum(np.bincount(local_rows, minlength=len(nodes)), out=offsets[1:])
        return Graph(offsets, local_cols[order], self.undirected)


@dataclass(frozen=True, eq=False)
class NodeFeatures:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise DatasetError("features must be a 2-D matrix")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def num_nodes(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True, eq=False)
class LabelSet:
    """Per-node labels: a class-id vector (``single``) or a 0/1 matrix (``multi``)."""

    mode: str
    num_classes: int
    values: np.ndarray

    def __post_init__(self):
        if self.mode == "single":
            values = np.asarray(self.values, dtype=np.int64)
            if values.ndim != 1:
                raise DatasetError("single-label values must be a vector")
            if len(values) and (values.min() < 0 or values.max() >= self.num_classes):
                raise DatasetError(f"label id >= L ({self.num_classes})")
        elif self.mode == "multi":
            values = np.asarray(self.values, dtype=np.uint8)
            if values.ndim != 2 or values.shape[1] != self.num_classes:
                raise DatasetError("multi-label values must be an n x L matrix")
            if np.any(values > 1):
                raise DatasetError("multi-label entries must be 0 or 1")
        else:
            raise DatasetError(f"unknown label mode {self.mode!r}")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def is_multi(self) -> bool:
        return self.mode == "multi"

    def __len__(self) -> int:
        return self.values.shape[0]

    def one_hot(self, nodes=None) -> np.ndarray:
        vals = self.values if nodes is None else self.values[np.asarray(nodes)]
        if self.is_multi:
            return vals.astype(np.float64)
        out = np.zeros((len(vals), self.num_classes))
        out[np.arange(len(vals)), vals] = 1.0
        return out


@dataclass(frozen=True, eq=False)
class SplitMasks:
    train_ids: np.ndarray
    val_ids: np.ndarray
    test_ids: np.ndarray

    def __post_init__(self):
        for name in ("train_ids", "val_ids", "test_ids"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=np.int64)))

    def problems(self, num_nodes: int) -> list[str]:
        out = []
        sets = {}
        for name in ("train_ids", "val_ids", "test_ids"):
            ids = getattr(self, name)
            if len(ids) and (ids.min() < 0 or ids.max() >= num_nodes):
                out.append(f"{name}: node id out of range")
            if np.any(np.diff(ids) <= 0):
                out.append(f"{name}: not sorted or has duplicates")
            sets[name] = set(ids.tolist())
        if (sets["train_ids"] & sets["val_ids"]) or (sets["train_ids"] & sets["test_ids"]) or (
            sets["val_ids"] & sets["test_ids"]
        ):
            out.append("splits overlap")
        return out


@dataclass(frozen=True, eq=False)
class LocalPartition:
    """A worker's view: owned nodes first, then halo nodes, in local id order."""

    part_id: int
    owned_ids: np.ndarray
    halo_ids: np.ndarray
    local_graph: Graph
    train_ids: np.ndarray
    val_ids: np.ndarray
    test_ids: np.ndarray
    g2l: np.ndarray = field(repr=False, default=None)

    @property
    def nodes(self) -> np.ndarray:
        return np.concatenate([self.owned_ids, self.halo_ids])

    @property
    def num_owned(self) -> int:
        return len(self.owned_ids)

    def global_to_local(self, ids) -> np.ndarray:
        local = self.g2l[np.asarray(ids, dtype=np.int64)]
        if np.any(local < 0):
            raise KeyError("node is not in this local view")
        return local

    def local_train(self) -> np.ndarray:
        return self.global_to_local(self.train_ids)

    def local_val(self) -> np.ndarray:
        return self.global_to_local(self.val_ids)

    def local_test(self) -> np.ndarray:
        return self.global_to_local(self.test_ids)


def _within_hops(g: Graph, seeds: np.ndarray, depth: int) -> np.ndarray:
    seen = np.zeros(g.num_nodes, dtype=bool)
    seen[seeds] = True
    frontier = np.asarray(seeds, dtype=np.int64)
    for _ in range(depth):
        if not len(frontier):
            break
        deg = g.degrees()[frontier]
        idx = np.repeat(g.offsets[frontier] - np.concatenate([[0], np.cumsum(deg)[:-1]]), deg) + np.arange(deg.sum())
        nxt = np.unique(g.neighbors[idx])
        nxt = nxt[~seen[nxt]]
        seen[nxt] = True
        frontier = nxt
    return seen


def induce_local_partition(g: Graph, assignment, part: int, halo_depth: int, splits: SplitMasks | None = None) -> LocalPartition:
    """Owned nodes of ``part`` plus every node within ``halo_depth`` hops of them.

    The local graph is the subgraph induced on owned plus halo nodes, which
    contains every edge into an owned node from within the halo.
    """
    part_of = np.asarray(getattr(assignment, "part_of", assignment), dtype=np.int64)
    num_parts = getattr(assignment, "num_parts", int(part_of.max()) + 1 if len(part_of) else 0)
    if not 0 <= part < num_parts:
        raise ValueError(f"part {part} out of range for {num_parts} parts")
    if halo_depth < 0:
        raise ValueError("halo_depth must be non-negative")
    owned = np.flatnonzero(part_of == part)
    reach = _within_hops(g, owned, halo_depth)
    reach[owned] = False
    halo = np.flatnonzero(reach)
    nodes = np.concatenate([owned, halo])
    local = g.subgraph(nodes)
    g2l = np.full(g.num_nodes, -1, dtype=np.int64)
    g2l[nodes] = np.arange(len(nodes))
    own_mask = part_of == part

    def _own(ids):
        if ids is None:
            return np.zeros(0, dtype=np.int64)
        ids = np.asarray(ids, dtype=np.int64)
        return ids[own_mask[ids]]

    return LocalPartition(
        part_id=part,
        owned_ids=_frozen(owned),
        halo_ids=_frozen(halo),
        local_graph=local,
        train_ids=_frozen(_own(splits.train_ids if splits else None)),
        val_ids=_frozen(_own(splits.val_ids if splits else None)),
        test_ids=_frozen(_own(splits.test_ids if splits else None)),
        g2l=_frozen(g2l),
    )


def validate(g: Graph, feats: NodeFeatures | None = None, labels: LabelSet | None = None,
             splits: SplitMasks | None = None) -> list[str]:
    """List every violated dataset invariant; an empty list means valid."""
    report = []
    off, nb, n = g.offsets, g.neighbors, g.num_nodes
    if len(off) == 0 or off[0] != 0:
        report.append("offsets[0] != 0")
    if np.any(np.diff(off) < 0):
        report.append("offsets not non-decreasing")
    if len(off) and off[-1] != len(nb):
        report.append("offsets[-1] != num_edges")
    if len(nb) and (nb.min() < 0 or nb.max() >= n):
        report.append("neighbor id out of range")
    elif len(nb) and np.any(nb == g.rows()):
        report.append("self-loop present")
    if g.undirected and len(nb) and not report:
        missing = int(np.count_nonzero(g.reverse_index() < 0))
        if missing:
            report.append(f"asymmetric adjacency: {missing} entries lack a reverse")
    if feats is not None:
        if feats.num_nodes != n:
            report.append("feature rows != num_nodes")
        bad = int(np.count_nonzero(~np.isfinite(feats.data)))
        if bad:
            report.append(f"non-finite features: {bad} values")
    if labels is not None and len(labels) != n:
        report.append("label rows != num_nodes")
    if splits is not None:
        report.extend(splits.problems(n))
    return report


# --- on-disk format -------------------------------------------------------

_FILES = ("meta.json", "edges.bin", "features.bin", "labels.bin", "splits.json")


def save_dataset(path, g: Graph, feats: NodeFeatures, labels: LabelSet, splits: SplitMasks,
                 edges: tuple[np.ndarray, np.ndarray] | None = None) -> Path:
    """Write the five-file dataset directory.

    ``edges`` may supply the pre-symmetrization edge list; otherwise one
    direction of each undirected pair (or every entry of a directed graph)
    is written.
    """
    path = Path(path)
    path.mkdir(exist_ok=True)
    if edges is None:
        src, dst = g.edge_pairs()
        if g.undirected:
            keep = src < dst
            src, dst = src[keep], dst[keep]
    else:
        src, dst = (np.asarray(a, dtype=np.int64) for a in edges)
    pairs = np.empty((len(src), 2), dtype="<u8")
    pairs[:, 0], pairs[:, 1] = src, dst
    meta = {
        "num_nodes": g.num_nodes,
        "num_edges": int(len(src)),
        "feature_dim": feats.dim,
        "num_classes": labels.num_classes,
        "label_mode": labels.mode,
        "undirected": bool(g.undirected),
    }
    atomic_write_bytes(path / "edges.bin", pairs.tobytes())
    atomic_write_bytes(path / "features.bin", feats.data.astype("<f4").tobytes())
    lab = labels.values.astype("<u4" if labels.mode == "single" else "u1")
    atomic_write_bytes(path / "labels.bin", lab.tobytes())
    atomic_write_text(path / "splits.json", json.dumps({
        "train": splits.train_ids.tolist(),
        "val": splits.val_ids.tolist(),
        "test": splits.test_ids.tolist(),
    }))
    atomic_write_text(path / "meta.json", json.dumps(meta, indent=2))
    return path


def _read_payload(path: Path, dtype: str, count: int) -> np.ndarray:
    raw = path.read_bytes()
    itemsize = np.dtype(dtype).itemsize
    if len(raw) != count * itemsize:
        raise DatasetError(f"payload size mismatch in {path.name}: expected {count * itemsize} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype=dtype)


def load_dataset(path) -> tuple[Graph, NodeFeatures, LabelSet, SplitMasks]:
    path = Path(path)
    for name in _FILES:
        if not (path / name).is_file():
            raise DatasetError(f"missing file: {path / name}")
    meta = json.loads((path / "meta.json").read_text())
    n, m = int(meta["num_nodes"]), int(meta["num_edges"])
    d, num_classes = int(meta["feature_dim"]), int(meta["num_classes"])
    mode = meta.get("label_mode", "single")
    undirected = bool(meta.get("undirected", True))

    pairs = _read_payload(path / "edges.bin", "<u8", 2 * m).reshape(m, 2).astype(np.int64)
    g = Graph.from_edges(n, pairs[:, 0], pairs[:, 1], undirected=undirected)
    feats = NodeFeatures(_read_payload(path / "features.bin", "<f4", n * d).reshape(n, d).copy())
    if mode == "single":
        lab = _read_payload(path / "labels.bin", "<u4", n).astype(np.int64)
    else:
        lab = _read_payload(path / "labels.bin", "u1", n * num_classes).reshape(n, num_classes).copy()
    labels = LabelSet(mode, num_classes, lab)
    raw = json.loads((path / "splits.json").read_text())
    splits = SplitMasks(*(np.asarray(raw[k], dtype=np.int64) for k in ("train", "val", "test")))
    problems = splits.problems(n)
    if problems:
        raise DatasetError("; ".join(problems))
    bad = validate(g, feats, labels)
    if bad:
        raise DatasetError("; ".join(bad))
    return g, feats, labels, splits
