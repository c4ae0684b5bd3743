"""Two-layer GraphSAGE (mean aggregator) with hand-written reverse mode.

Layer rule, for destination ``v`` of a block::

    agg_v = mean(h_u for sampled u in N(v))     # zero vector if none sampled
    h_v   = act(W @ concat(agg_v, h_v_prev))

with ReLU after the first layer and identity (logits) after the last.
``W`` has shape ``out x (2 * in)``; the first ``in`` columns act on the
neighbor mean, the rest on the node's own previous embedding.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from entropart._io import atomic_write_bytes
from entropart.sampler import MiniBatchBlock, sample_block


@dataclass
class ModelParams:
    weights: list

    @classmethod
    def init(cls, dims, seed: int = 0, dtype=np.float32) -> "ModelParams":
        """Glorot-uniform weights for layer widths ``dims`` (e.g. ``(D, hidden, L)``)."""
        rng = np.random.default_rng(seed)
        weights = []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / (2 * d_in + d_out))
            weights.append(rng.uniform(-limit, limit, size=(d_out, 2 * d_in)).astype(dtype))
        return cls(weights)

    @property
    def dims(self) -> tuple:
        return (self.weights[0].shape[1] // 2,) + tuple(w.shape[0] for w in self.weights)

    @property
    def dtype(self):
        return self.weights[0].dtype

    def copy(self) -> "ModelParams":
        return ModelParams([w.copy() for w in self.weights])

    def flat(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.weights])

    def zeros_like(self) -> list:
        return [np.zeros_like(w) for w in self.weights]

    def bitwise_equal(self, other: "ModelParams") -> bool:
        return all(a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in zip(self.weights, other.weights))

    # checkpoint: b"EPCK", u32 layer count, u32 dims[layers + 1], then float32 tensors in layer order
    def save(self, path) -> Path:
        dims = self.dims
        header = b"EPCK" + struct.pack(f"<{len(dims) + 1}I", len(self.weights), *dims)
        body = b"".join(w.astype("<f4").tobytes() for w in self.weights)
        return atomic_write_bytes(path, header + body)

    @classmethod
    def load(cls, path) -> "ModelParams":
        raw = Path(path).read_bytes()
        if raw[:4] != b"EPCK":
            raise ValueError(f"{path}: not a checkpoint file")
        (layers,) = struct.unpack_from("<I", raw, 4)
        dims = struct.unpack_from(f"<{layers + 1}I", raw, 8)
        off = 8 + 4 * (layers + 1)
        weights = []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            count = d_out * 2 * d_in
            w = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(d_out, 2 * d_in)
            weights.append(w.astype(np.float32))
            off += 4 * count
        if off != len(raw):
            raise ValueError(f"{path}: checkpoint size does not match its header")
        return cls(weights)


@dataclass
class ForwardTrace:
    block: MiniBatchBlock
    inputs: list = field(default_factory=list)  # h_prev per layer (src rows)
    means: list = field(default_factory=list)  # sparse mean operators per layer
    concats: list = field(default_factory=list)
    preacts: list = field(default_factory=list)
    logits: np.ndarray | None = None


def mean_operator(layer, dtype) -> sp.csr_matrix:
    """Sparse (num_dst x num_src) matrix averaging each destination's sampled sources."""
    counts = np.bincount(layer.edge_dst, minlength=layer.num_dst)
    vals = (1.0 / counts[layer.edge_dst]).astype(dtype)
    return sp.csr_matrix((vals, (layer.edge_dst, layer.edge_src)), shape=(layer.num_dst, layer.num_src))


def forward(params: ModelParams, block: MiniBatchBlock, feats: np.ndarray) -> ForwardTrace:
    """Run the model on a block. ``feats`` rows are indexed by local node id."""
    if feats.shape[1] != params.dims[0]:
        raise ValueError(f"feature width {feats.shape[1]} != model input width {params.dims[0]}")
    if len(block.layers) != len(params.weights):
        raise ValueError("block depth does not match the number of layers")
    dtype = params.dtype
    trace = ForwardTrace(block)
    h = np.asarray(feats[block.input_nodes], dtype=dtype)
    last = len(params.weights) - 1
    for i, (w, layer) in enumerate(zip(params.weights, block.layers)):
        m = mean_operator(layer, dtype)
        cat = np.hstack([m @ h, h[: layer.num_dst]])
        z = cat @ w.T
        trace.inputs.append(h)
        trace.means.append(m)
        trace.concats.append(cat)
        trace.preacts.append(z)
        h = z if i == last else np.maximum(z, 0)
    trace.logits = h
    return trace


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(z))


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def cross_entropy(logits: np.ndarray, labels: np.ndarray, multi: bool = False) -> float:
    """Mean over the batch; multi-label sums per-dimension binary cross-entropy on sigmoids."""
    logits = np.asarray(logits, dtype=np.float64)
    if multi:
        y = np.asarray(labels, dtype=np.float64)
        per = np.maximum(logits, 0) - logits * y + np.log1p(np.exp(-np.abs(logits)))
        return float(per.sum(axis=1).mean())
    labels = np.asarray(labels, dtype=np.int64)
    return float(-_log_softmax(logits)[np.arange(len(labels)), labels].mean())


def proximal_term(params: ModelParams, anchor: ModelParams) -> float:
    """Squared L2 distance between flattened weight sets."""
    return float(sum(np.sum((a.astype(np.float64) - b) ** 2) for a, b in zip(params.weights, anchor.weights)))


def regularized_loss(base_loss: float, params: ModelParams, anchor: ModelParams | None, lam: float) -> float:
    if anchor is None or lam == 0:
        return float(base_loss)
    return float(base_loss) + lam * proximal_term(params, anchor)


def backward(trace: ForwardTrace, params: ModelParams, labels: np.ndarray, multi: bool = False,
             lam: float = 0.0, anchor: ModelParams | None = None) -> list:
    """Gradients of the (optionally regularized) mean loss w.r.t. every weight matrix."""
    logits = trace.logits
    n = logits.shape[0]
    if multi:
        dz = (sigmoid(logits) - np.asarray(labels, dtype=logits.dtype)) / n
    else:
        dz = softmax(logits)
        dz[np.arange(n), np.asarray(labels, dtype=np.int64)] -= 1.0
        dz /= n
    dz = dz.astype(params.dtype, copy=False)
    grads = [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        w = params.weights[i]
        if i != len(params.weights) - 1:
            dz = dz * (trace.preacts[i] > 0)
        grads[i] = dz.T @ trace.concats[i]
        if i == 0:
            break
        d_cat = dz @ w
        d_in = w.shape[1] // 2
        num_dst = trace.means[i].shape[0]
        dh = trace.means[i].T @ d_cat[:, :d_in]
        dh[:num_dst] += d_cat[:, d_in:]
        dz = dh
    if anchor is not None and lam != 0:
        for i, (w, a) in enumerate(zip(params.weights, anchor.weights)):
            grads[i] = grads[i] + (2.0 * lam) * (w - a)
    return grads


def loss_and_grads(params: ModelParams, block: MiniBatchBlock, feats: np.ndarray, labels: np.ndarray,
                   multi: bool = False, lam: float = 0.0, anchor: ModelParams | None = None):
    trace = forward(params, block, feats)
    base = cross_entropy(trace.logits, labels, multi)
    loss = regularized_loss(base, params, anchor, lam)
    return loss, backward(trace, params, labels, multi, lam, anchor)


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params: ModelParams, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0, lr, **kw)

    def copy(self) -> "AdamState":
        return AdamState([a.copy() for a in self.m], [a.copy() for a in self.v], self.step,
                         self.lr, self.beta1, self.beta2, self.eps)


def adam_step(params: ModelParams, grads: list, state: AdamState) -> None:
    """Bias-corrected Adam update, in place on ``params`` and ``state``."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for w, g, m, v in zip(params.weights, grads, state.m, state.v):
        if g.shape != w.shape:
            raise ValueError("gradient shape does not match parameter shape")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        w -= (state.lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)


def predict_scores(params: ModelParams, graph, feats: np.ndarray, nodes: np.ndarray, fanouts=None,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """Logits for ``nodes`` (local ids). ``fanouts=None`` uses full neighborhoods."""
    nodes = np.asarray(nodes, dtype=np.int64)
    if fanouts is None:
        fanouts = [None] * len(params.weights)
    return forward(params, sample_block(graph, nodes, fanouts, rng), feats).logits


def predict(params: ModelParams, graph, feats: np.ndarray, nodes: np.ndarray, multi: bool = False,
            fanouts=None, rng: np.random.Generator | None = None) -> np.ndarray:
    """Class ids (argmax) or, for multi-label, a 0/1 matrix thresholded at probability 0.5."""
    logits = predict_scores(params, graph, feats, nodes, fanouts, rng)
    if multi:
        return (logits >= 0).astype(np.uint8)
    return logits.argmax(axis=1)
