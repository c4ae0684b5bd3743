"""Slow, obviously-correct reimplementations used as test oracles.

Nothing here imports the package under test except plain data containers.
"""

import itertools
import math
from collections import Counter, deque

import numpy as np


def bfs_within(adj: dict, seeds, depth: int) -> set:
    seen = set(seeds)
    frontier = deque((s, 0) for s in seeds)
    while frontier:
        v, d = frontier.popleft()
        if d == depth:
            continue
        for u in adj.get(v, ()):
            if u not in seen:
                seen.add(u)
                frontier.append((u, d + 1))
    return seen


def adjacency_dict(src, dst) -> dict:
    adj = {}
    for a, b in zip(src, dst):
        if a == b:
            continue
        adj.setdefault(int(a), set()).add(int(b))
        adj.setdefault(int(b), set()).add(int(a))
    return adj


def entropy_bits(probs) -> float:
    return -sum(p * math.log(p, 2) for p in probs if p > 0)


def total_entropy_bruteforce(labels, part_of) -> float:
    n = len(labels)
    out = 0.0
    for part in set(part_of):
        members = [labels[i] for i in range(n) if part_of[i] == part]
        counts = Counter(members)
        out += len(members) / n * entropy_bits([c / len(members) for c in counts.values()])
    return out


def cut_weight(edges, part_of) -> int:
    return sum(w for u, v, w in edges if part_of[u] != part_of[v])


def exhaustive_bisection(n: int, edges, cap: int) -> int:
    """Minimum cut over all 2-way splits with both sides non-empty and <= cap nodes."""
    best = None
    for bits in itertools.product((0, 1), repeat=n - 1):
        part = (0,) + bits
        ones = sum(part)
        if ones == 0 or ones > cap or n - ones > cap:
            continue
        c = cut_weight(edges, part)
        best = c if best is None else min(best, c)
    return best


def dense_sage_logits(A: np.ndarray, X: np.ndarray, W1: np.ndarray, W2: np.ndarray) -> np.ndarray:
    """Full-neighborhood two-layer mean-aggregator model on a dense adjacency (rows = destinations)."""
    deg = A.sum(axis=1, keepdims=True)
    M = np.divide(A, deg, out=np.zeros_like(A, dtype=float), where=deg > 0)
    H1 = np.maximum(np.hstack([M @ X, X]) @ W1.T, 0)
    return np.hstack([M @ H1, H1]) @ W2.T


def dense_cbs(A: np.ndarray, classes, normalization: str = "as-written") -> np.ndarray:
    d = A.sum(axis=1)
    right = np.diag(d ** 0.5) if normalization == "as-written" else np.diag(np.where(d > 0, d, 1.0) ** -0.5)
    left = np.diag(np.where(d > 0, d, 1.0) ** -0.5)
    Ahat = left @ A @ right
    norms = (Ahat ** 2).sum(axis=0)
    cf = Counter(classes)
    scores = np.array([norms[i] / cf[c] for i, c in enumerate(classes)])
    return scores / scores.sum()


def f1_by_hand(pred, truth):
    classes = sorted(set(truth) | set(pred))
    per, support = [], []
    for c in classes:
        tp = sum(1 for p, t in zip(pred, truth) if p == c and t == c)
        fp = sum(1 for p, t in zip(pred, truth) if p == c and t != c)
        fn = sum(1 for p, t in zip(pred, truth) if p != c and t == c)
        per.append(0.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn))
        support.append(tp + fn)
    acc = sum(1 for p, t in zip(pred, truth) if p == t) / len(truth)
    weighted = sum(s * f for s, f in zip(support, per)) / sum(support)
    return acc, weighted


def loop_mean(tensors, n):
    flat = [t.ravel().tolist() for t in tensors]
    out = []
    for i in range(len(flat[0])):
        acc = np.float32(0) if tensors[0].dtype == np.float32 else 0.0
        for f in flat:
            acc = tensors[0].dtype.type(acc + tensors[0].dtype.type(f[i]))
        out.append(tensors[0].dtype.type(acc / tensors[0].dtype.type(n)))
    return np.array(out, dtype=tensors[0].dtype).reshape(tensors[0].shape)


def central_difference_errors(loss_fn, weights, grads, h=1e-4):
    """Max relative error |analytic - central difference| / (|analytic| + 1e-8) per tensor."""
    errs = []
    for w, g in zip(weights, grads):
        worst = 0.0
        for idx in np.ndindex(w.shape):
            orig = w[idx]
            w[idx] = orig + h
            up = loss_fn()
            w[idx] = orig - h
            down = loss_fn()
            w[idx] = orig
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(g[idx] - fd) / (abs(g[idx]) + 1e-8))
        errs.append(worst)
    return errs
