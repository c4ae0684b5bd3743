"""Label entropy of partitions and F1 scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from entropart.graph import LabelSet

LOG_BASE = 2


@dataclass(frozen=True)
class LabelDistribution:
    """Class fractions (single mode) or per-dimension positive rates (multi mode)."""

    probs: np.ndarray
    multi: bool = False


@dataclass(frozen=True)
class EntropyReport:
    per_part_entropy: np.ndarray
    per_part_sizes: np.ndarray
    total_entropy: float
    base: int = LOG_BASE

    def to_dict(self) -> dict:
        return {
            "per_part_entropy": [float(x) for x in self.per_part_entropy],
            "per_part_sizes": [int(x) for x in self.per_part_sizes],
            "total_entropy": float(self.total_entropy),
            "entropy_log_base": self.base,
        }


def _plogp(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    out = np.zeros_like(p)
    nz = p > 0
    out[nz] = p[nz] * np.log2(p[nz])
    return out


def entropy(dist) -> float:
    """Entropy in bits; multi-label distributions sum per-dimension binary entropies."""
    if isinstance(dist, LabelDistribution):
        probs, multi = dist.probs, dist.multi
    else:
        probs, multi = np.asarray(dist, dtype=np.float64), False
    if multi:
        return float(-(_plogp(probs) + _plogp(1.0 - probs)).sum())
    return float(-_plogp(probs).sum())


def label_distribution(labels: LabelSet, nodes=None) -> LabelDistribution:
    vals = labels.values if nodes is None else labels.values[np.asarray(nodes, dtype=np.int64)]
    if len(vals) == 0:
        raise ValueError("cannot compute a label distribution over zero nodes")
    if labels.is_multi:
        return LabelDistribution(vals.mean(axis=0, dtype=np.float64), multi=True)
    counts = np.bincount(vals, minlength=labels.num_classes)
    return LabelDistribution(counts / counts.sum())


def total_entropy(labels: LabelSet, assignment) -> EntropyReport:
    """Per-part entropies and their size-weighted mean."""
    part_of = np.asarray(getattr(assignment, "part_of", assignment), dtype=np.int64)
    num_parts = getattr(assignment, "num_parts", int(part_of.max()) + 1)
    sizes = np.bincount(part_of, minlength=num_parts)
    if labels.is_multi:
        pos = np.zeros((num_parts, labels.num_classes))
        np.add.at(pos, part_of, labels.values.astype(np.float64))
        rates = pos / np.maximum(sizes, 1)[:, None]
        ents = -(_plogp(rates) + _plogp(1.0 - rates)).sum(axis=1)
    else:
        counts = np.zeros((num_parts, labels.num_classes))
        np.add.at(counts, (part_of, labels.values), 1.0)
        fr = counts / np.maximum(sizes, 1)[:, None]
        ents = -_plogp(fr).sum(axis=1)
    total = float((sizes / sizes.sum()) @ ents)
    return EntropyReport(ents, sizes, total)


# --- classification scores -------------------------------------------------

def _as_indicator(y, num_classes: int | None) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim == 2:
        return y >= 0.5 if y.dtype.kind == "f" else y.astype(bool)
    out = np.zeros((len(y), num_classes), dtype=bool)
    out[np.arange(len(y)), y] = True
    return out


def confusion_counts(pred, truth, num_classes: int | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class (tp, fp, fn). Multi-label inputs are thresholded at 0.5."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    if len(pred) != len(truth):
        raise ValueError("pred and truth differ in length")
    if len(truth) == 0:
        raise ValueError("empty input")
    if truth.ndim == 1 and num_classes is None:
        num_classes = int(max(pred.max(), truth.max())) + 1
    p = _as_indicator(pred, num_classes)
    t = _as_indicator(truth, num_classes)
    tp = (p & t).sum(axis=0)
    fp = (p & ~t).sum(axis=0)
    fn = (~p & t).sum(axis=0)
    return tp, fp, fn


def _f1(tp, fp, fn):
    tp, fp, fn = (np.asarray(a, dtype=np.float64) for a in (tp, fp, fn))
    denom = 2 * tp + fp + fn
    return np.divide(2 * tp, denom, out=np.zeros_like(denom), where=denom > 0)


def micro_f1_from_counts(tp, fp, fn) -> float:
    return float(_f1(np.sum(tp), np.sum(fp), np.sum(fn)))


def weighted_f1_from_counts(tp, fp, fn) -> float:
    support = np.asarray(tp, dtype=np.float64) + np.asarray(fn, dtype=np.float64)
    if support.sum() == 0:
        return 0.0
    return float((support / support.sum()) @ _f1(tp, fp, fn))


def micro_f1(pred, truth, num_classes: int | None = None) -> float:
    return micro_f1_from_counts(*confusion_counts(pred, truth, num_classes))


def weighted_f1(pred, truth, num_classes: int | None = None) -> float:
    return weighted_f1_from_counts(*confusion_counts(pred, truth, num_classes))
