"""Two-phase multi-worker training: synchronous generalization, then independent personalization.

Workers are simulated inside one process. In phase 0 every iteration ends
at a reduction barrier, after which each replica applies the same averaged
gradient, so replicas stay bitwise identical. Phase 1 workers never touch
the reduction channel.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from entropart import gnn
from entropart.graph import Graph, LabelSet, LocalPartition, NodeFeatures, SplitMasks, induce_local_partition
from entropart.metrics import confusion_counts, micro_f1_from_counts, weighted_f1_from_counts
from entropart.sampler import NORMALIZATIONS, cbs_probabilities, make_batches, sample_block, sample_mini_epoch


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    num_workers: int = 4
    lr: float = 1e-3
    hidden: int = 256
    fanouts: tuple = (25, 25)
    batch_size: int = 1024
    fraction: float = 0.25
    lam: float = 1e-4
    patience: int = 5
    phase0_max_epochs: int = 100
    phase1_max_epochs: int = 100
    phase_switch: str = "auto"  # "auto" | "fixed"
    switch_window: int = 5
    switch_threshold: float = 0.01
    switch_fraction: float = 0.5
    sampler_enabled: bool = True
    normalization: str = "as-written"
    personalize: bool = True
    halo_depth: int = 2
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        self.fanouts = tuple(None if f is None else int(f) for f in self.fanouts)
        if self.num_workers < 1:
            raise ValueError("num_workers must be >= 1")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0 < self.fraction <= 1:
            raise ValueError("fraction must lie in (0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.phase_switch not in ("auto", "fixed"):
            raise ValueError("phase_switch must be 'auto' or 'fixed'")
        if self.switch_window < 2:
            raise ValueError("switch_window must be >= 2")
        if not 0 <= self.switch_fraction <= 1:
            raise ValueError("switch_fraction must lie in [0, 1]")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
        if len(self.fanouts) != 2:
            raise ValueError("fanouts must have one entry per layer (2)")
        if self.halo_depth < len(self.fanouts):
            raise ValueError("halo_depth must be >= the number of layers")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if self.phase0_max_epochs < 0 or self.phase1_max_epochs < 0:
            raise ValueError("epoch limits must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fanouts"] = list(self.fanouts)
        return d


@dataclass
class HistoryRecord:
    phase: int
    worker_id: int  # -1 for rows describing all workers
    mini_epoch: int
    wall_time: float  # simulated per-worker clock, seconds
    train_loss: float
    val_micro_f1: float
    event: str = ""

    FIELDS = ("phase", "worker_id", "mini_epoch", "train_loss", "val_micro_f1", "event")

    def row(self) -> list:
        return [self.phase, self.worker_id, self.mini_epoch, _fmt(self.train_loss), _fmt(self.val_micro_f1), self.event]


def _fmt(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


class EarlyStopper:
    """Keeps the best-scoring params; ``should_stop`` once ``patience`` epochs pass without improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_score = -math.inf
        self.best_epoch = -1
        self.epochs_since_best = 0
        self.best_params: gnn.ModelParams | None = None

    def observe(self, score: float, params: gnn.ModelParams, epoch: int) -> bool:
        if score > self.best_score:
            self.best_score = score
            self.best_epoch = epoch
            self.best_params = params.copy()
            self.epochs_since_best = 0
            return True
        self.epochs_since_best += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.epochs_since_best >= self.patience


class ReduceChannel:
    """In-memory gradient exchange. Counts every message so isolation can be asserted."""

    def __init__(self, num_workers: int):
        self.num_workers = num_workers
        self.messages = 0

    def all_reduce(self, grad_sets: list) -> list:
        self.messages += len(grad_sets)
        return all_reduce_mean(grad_sets, self.num_workers)


def all_reduce_mean(grad_sets: list, num_workers: int | None = None) -> list:
    """Element-wise mean, summed in worker-id order. ``None`` entries count as zeros."""
    n = len(grad_sets) if num_workers is None else num_workers
    ref = next((g for g in grad_sets if g is not None), None)
    if ref is None:
        raise ValueError("all_reduce_mean needs at least one gradient set")
    for g in grad_sets:
        if g is not None and [a.shape for a in g] != [a.shape for a in ref]:
            raise ValueError("gradient sets differ in shape")
    out = []
    for t in range(len(ref)):
        acc = np.zeros_like(ref[t])
        for g in grad_sets:
            if g is not None:
                acc = acc + g[t]
        out.append(acc / ref[t].dtype.type(n))
    return out


def switch_trigger(losses, cfg: TrainConfig, epochs_done: int | None = None) -> bool:
    """Whether phase 0 should hand over to personalization.

    Auto mode fires when the mean per-epoch relative loss decrease across the
    last ``switch_window`` mini-epochs drops below ``switch_threshold``.
    """
    losses = list(losses)
    if cfg.phase_switch == "fixed":
        done = len(losses) if epochs_done is None else epochs_done
        return done >= round(cfg.phase0_max_epochs * cfg.switch_fraction)
    w = cfg.switch_window
    if len(losses) < w:
        return False
    first, last = losses[-w], losses[-1]
    if first == 0:
        return True
    return (first - last) / (abs(first) * (w - 1)) < cfg.switch_threshold


@dataclass
class Worker:
    wid: int
    local: LocalPartition
    feats: np.ndarray  # rows in local id order
    labels: np.ndarray  # rows in local id order
    multi: bool
    num_classes: int
    probs: np.ndarray  # CBS probabilities over local.train_ids
    rng: np.random.Generator
    params: gnn.ModelParams
    opt: gnn.AdamState
    clock: float = 0.0
    train_local: np.ndarray = field(default=None)
    val_local: np.ndarray = field(default=None)
    test_local: np.ndarray = field(default=None)

    def __post_init__(self):
        self.train_local = self.local.global_to_local(self.local.train_ids)
        self.val_local = self.local.global_to_local(self.local.val_ids)
        self.test_local = self.local.global_to_local(self.local.test_ids)

    def draw_batches(self, cfg: TrainConfig, use_sampler: bool) -> list:
        if use_sampler and len(self.train_local):
            subset = sample_mini_epoch(self.train_local, self.probs, cfg.fraction, self.rng)
        else:
            subset = self.train_local
        return make_batches(subset, cfg.batch_size, self.rng) if len(subset) else []

    def grads(self, batch, cfg: TrainConfig, anchor=None):
        block = sample_block(self.local.local_graph, batch, cfg.fanouts, self.rng)
        return gnn.loss_and_grads(self.params, block, self.feats, self.labels[batch], self.multi,
                                  cfg.lam if anchor is not None else 0.0, anchor)

    def counts(self, params, nodes):
        if len(nodes) == 0:
            z = np.zeros(self.num_classes, dtype=np.int64)
            return z, z, z
        pred = gnn.predict(params, self.local.local_graph, self.feats, nodes, self.multi)
        return confusion_counts(pred, self.labels[nodes], self.num_classes)

    def val_score(self, params=None) -> float:
        return micro_f1_from_counts(*self.counts(self.params if params is None else params, self.val_local))


def build_workers(g: Graph, feats: NodeFeatures, labels: LabelSet, splits: SplitMasks, assignment,
                  cfg: TrainConfig) -> list[Worker]:
    """One worker per part, each with a halo-complete local view and its own rng stream."""
    num_parts = getattr(assignment, "num_parts", None)
    if num_parts is not None and num_parts != cfg.num_workers:
        raise ValueError(f"assignment has {num_parts} parts but num_workers={cfg.num_workers}")
    dtype = np.dtype(cfg.dtype)
    init = gnn.ModelParams.init((feats.dim, cfg.hidden, labels.num_classes), seed=cfg.seed, dtype=dtype)
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.num_workers)
    workers = []
    for p in range(cfg.num_workers):
        local = induce_local_partition(g, assignment, p, cfg.halo_depth, splits)
        nodes = local.nodes
        probs = (cbs_probabilities(local, labels, cfg.normalization) if len(local.train_ids)
                 else np.zeros(0))
        params = init.copy()
        workers.append(Worker(p, local, feats.data[nodes].astype(dtype), labels.values[nodes],
                              labels.is_multi, labels.num_classes, probs,
                              np.random.default_rng(streams[p]), params,
                              gnn.AdamState.zeros(params, cfg.lr)))
    return workers


def thread_count(num_workers: int) -> int:
    env = os.environ.get("ENTROPART_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(num_workers, cap))


def _check_finite(loss: float, wid: int, phase: int):
    if not math.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss on worker {wid} in phase {phase}")


def _timed(fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - t0


def train_phase0(workers: list[Worker], cfg: TrainConfig, channel: ReduceChannel | None = None,
                 use_sampler: bool | None = None, allow_switch: bool = True, on_step=None):
    """Synchronous data-parallel training with one shared early stopper.

    Returns (W^G, history, info). ``on_step(iteration, workers)`` runs after
    every synchronized update.
    """
    channel = channel or ReduceChannel(len(workers))
    use_sampler = cfg.sampler_enabled if use_sampler is None else use_sampler
    stopper = EarlyStopper(cfg.patience)
    history: list[HistoryRecord] = []
    mean_losses: list[float] = []
    iteration = 0
    switched = False
    epoch = -1
    with ThreadPoolExecutor(thread_count(len(workers))) as pool:
        for epoch in range(cfg.phase0_max_epochs):
            batches = [w.draw_batches(cfg, use_sampler) for w in workers]
            steps = max((len(b) for b in batches), default=0)
            losses = [[] for _ in workers]

            def work(i, t):
                w = workers[i]
                if t >= len(batches[i]):
                    return None, 0.0
                return _timed(w.grads, batches[i][t], cfg)

            for t in range(steps):
                results = list(pool.map(work, range(len(workers)), [t] * len(workers)))
                grad_sets = []
                for w, ((res), dt) in zip(workers, results):
                    if res is None:
                        grad_sets.append(None)
                        continue
                    loss, grads = res
                    _check_finite(loss, w.wid, 0)
                    losses[w.wid].append(loss)
                    grad_sets.append(grads)
                step_time = max(dt for _, dt in results)
                avg = channel.all_reduce(grad_sets)
                for w in workers:
                    gnn.adam_step(w.params, avg, w.opt)
                    w.clock += step_time
                iteration += 1
                if on_step is not None:
                    on_step(iteration, workers)

            scores = []
            for w in workers:
                score, dt = _timed(w.val_score)
                w.clock += dt
                scores.append(score)
                history.append(HistoryRecord(0, w.wid, epoch, w.clock, float(np.mean(losses[w.wid])) if losses[w.wid] else math.nan, score))
            epoch_loss = [np.mean(l) for l in losses if l]
            mean_losses.append(float(np.mean(epoch_loss)) if epoch_loss else math.nan)
            stopper.observe(float(np.mean(scores)), workers[0].params, epoch)
            if stopper.should_stop:
                break
            if allow_switch and switch_trigger(mean_losses, cfg, epoch + 1):
                switched = True
                break
    if stopper.best_params is None:
        stopper.best_params = workers[0].params.copy()
    info = {"epochs": epoch + 1, "iterations": iteration, "best_epoch": stopper.best_epoch,
            "best_val_micro_f1": stopper.best_score if stopper.best_epoch >= 0 else None,
            "switch_triggered": switched, "wall_time": max(w.clock for w in workers)}
    return stopper.best_params, history, info


def _personalize(w: Worker, anchor: gnn.ModelParams, cfg: TrainConfig, use_sampler: bool):
    w.params = anchor.copy()
    w.opt = gnn.AdamState.zeros(w.params, cfg.lr)
    start = w.clock
    stopper = EarlyStopper(cfg.patience)
    t0 = time.perf_counter()
    stopper.observe(w.val_score(), w.params, -1)
    w.clock = start + (time.perf_counter() - t0)
    history = []
    for epoch in range(cfg.phase1_max_epochs):
        t0 = time.perf_counter()
        losses = []
        for batch in w.draw_batches(cfg, use_sampler):
            loss, grads = w.grads(batch, cfg, anchor)
            _check_finite(loss, w.wid, 1)
            losses.append(loss)
            gnn.adam_step(w.params, grads, w.opt)
        score = w.val_score()
        w.clock += time.perf_counter() - t0
        history.append(HistoryRecord(1, w.wid, epoch, w.clock, float(np.mean(losses)) if losses else math.nan, score))
        stopper.observe(score, w.params, epoch)
        if stopper.should_stop:
            break
    return stopper.best_params, history, {"epochs": len(history), "best_epoch": stopper.best_epoch,
                                          "best_val_micro_f1": stopper.best_score,
                                          "wall_time": w.clock - start}


def train_phase1(workers: list[Worker], global_params: gnn.ModelParams, cfg: TrainConfig,
                 use_sampler: bool | None = None):
    """Independent per-worker fine-tuning anchored at ``global_params``.

    Each worker keeps its own stopper, seeded with the global model's local
    validation score, so a worker that never improves returns ``global_params``.
    """
    use_sampler = cfg.sampler_enabled if use_sampler is None else use_sampler
    with ThreadPoolExecutor(thread_count(len(workers))) as pool:
        results = list(pool.map(lambda w: _personalize(w, global_params, cfg, use_sampler), workers))
    models = [r[0] for r in results]
    history = [rec for r in results for rec in r[1]]
    infos = [r[2] for r in results]
    return models, history, infos


def evaluate_all(models: list, workers: list[Worker], split: str = "test") -> dict:
    """Per-worker scores on each local split plus pooled aggregates."""
    per_worker = []
    tot = None
    for params, w in zip(models, workers):
        nodes = getattr(w, f"{split}_local")
        tp, fp, fn = w.counts(params, nodes)
        tot = (tp, fp, fn) if tot is None else (tot[0] + tp, tot[1] + fp, tot[2] + fn)
        per_worker.append({"worker_id": w.wid, "num_nodes": int(len(nodes)),
                           "micro_f1": micro_f1_from_counts(tp, fp, fn),
                           "weighted_f1": weighted_f1_from_counts(tp, fp, fn)})
    return {"per_worker": per_worker,
            "mean_micro_f1": float(np.mean([p["micro_f1"] for p in per_worker])),
            "micro_f1": micro_f1_from_counts(*tot),
            "weighted_f1": weighted_f1_from_counts(*tot)}


def time_training_pass(worker: Worker, cfg: TrainConfig, use_sampler: bool, repeats: int = 3) -> float:
    """Median wall time of one training pass (sampled mini-epoch or full epoch) on scratch copies."""
    times = []
    for r in range(repeats):
        w = Worker(worker.wid, worker.local, worker.feats, worker.labels, worker.multi, worker.num_classes,
                   worker.probs, np.random.default_rng(r), worker.params.copy(), worker.opt.copy())
        t0 = time.perf_counter()
        for batch in w.draw_batches(cfg, use_sampler):
            _, grads = w.grads(batch, cfg)
            gnn.adam_step(w.params, grads, w.opt)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


@dataclass
class RunResult:
    history: list
    metrics: dict
    timing: dict
    global_params: gnn.ModelParams
    personal_params: list | None


def run_training(g: Graph, feats: NodeFeatures, labels: LabelSet, splits: SplitMasks, assignment,
                 cfg: TrainConfig, baseline: bool = False, on_step=None) -> RunResult:
    """Full pipeline. ``baseline`` disables CBS and personalization."""
    workers = build_workers(g, feats, labels, splits, assignment, cfg)
    channel = ReduceChannel(len(workers))
    use_sampler = cfg.sampler_enabled and not baseline
    personalize = cfg.personalize and not baseline
    t_start = time.perf_counter()
    wg, history, info0 = train_phase0(workers, cfg, channel, use_sampler, allow_switch=personalize, on_step=on_step)
    messages_phase0 = channel.messages
    global_eval = evaluate_all([wg] * len(workers), workers)
    metrics = {"config": cfg.to_dict(), "baseline": baseline,
               "phase0": {k: v for k, v in info0.items() if k != "wall_time"},
               "global_model": global_eval}
    timing = {"phase0_wall_time": info0["wall_time"]}
    personal = None
    if personalize:
        history.append(HistoryRecord(1, -1, info0["epochs"], info0["wall_time"], math.nan, math.nan, "phase_switch"))
        personal, hist1, infos = train_phase1(workers, wg, cfg, use_sampler)
        history.extend(hist1)
        metrics["phase1"] = [{k: v for k, v in i.items() if k != "wall_time"} for i in infos]
        metrics["personalized"] = evaluate_all(personal, workers)
        metrics["final"] = metrics["personalized"]
        timing["phase1_wall_time"] = max(i["wall_time"] for i in infos)
        timing["phase1_worker_wall_time"] = [i["wall_time"] for i in infos]
    else:
        metrics["final"] = global_eval
    metrics["messages"] = {"phase0": messages_phase0, "phase1": channel.messages - messages_phase0}
    timing["train_time"] = timing["phase0_wall_time"] + timing.get("phase1_wall_time", 0.0)
    timing["process_wall_time"] = time.perf_counter() - t_start
    return RunResult(history, metrics, timing, wg, personal)
