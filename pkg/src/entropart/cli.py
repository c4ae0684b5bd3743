"""``entropart`` command line: gen -> partition -> train -> report.

Exit codes: 0 ok, 1 usage, 2 invalid input, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

from entropart._io import atomic_write_text
from entropart.config import ConfigError, RunConfig, read_config_file
from entropart.datagen import GenSpec, generate
from entropart.graph import DatasetError, load_dataset, save_dataset
from entropart.metrics import entropy, label_distribution, total_entropy
from entropart.partition import (EdgeWeights, PartitionAssignment, PartitionerConfig, PartitionError,
                                 assign_edge_weights, edge_cut, partition)
from entropart.trainer import HistoryRecord, TrainingDiverged, run_training

log = logging.getLogger("entropart")

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dump_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# --- gen ----------------------------------------------------------------------

def cmd_gen(args) -> int:
    data = read_config_file(args.spec) if args.spec else {}
    data = data.get("datagen", data)
    if args.seed is not None:
        data["seed"] = args.seed
    try:
        spec = GenSpec(**data)
    except TypeError as exc:
        raise ConfigError(f"bad generator spec: {exc}") from exc
    g, feats, labels, splits, edges = generate(spec)
    out = save_dataset(args.out, g, feats, labels, splits, edges)
    log.info("wrote %s: %d nodes, %d directed entries", out, g.num_nodes, g.num_edges)
    return EXIT_OK


# --- partition ------------------------------------------------------------------

def partition_report(g, feats, labels, scheme: str, cfg: PartitionerConfig, c: float, fanout_k: int) -> tuple:
    t0 = time.perf_counter()
    w = assign_edge_weights(g, feats, c=c, K=fanout_k) if scheme == "ew" else EdgeWeights.unit(g)
    assignment = partition(g, w, cfg)
    wall = time.perf_counter() - t0
    ent = total_entropy(labels, assignment)
    report = {
        "scheme": scheme,
        "num_nodes": g.num_nodes,
        "num_parts": cfg.num_parts,
        "epsilon": cfg.imbalance_epsilon,
        "seed": cfg.seed,
        "c": c,
        "fanout_k": fanout_k,
        "cut": int(edge_cut(g, w, assignment)),
        "unit_cut": int(edge_cut(g, None, assignment)),
        "dataset_entropy": entropy(label_distribution(labels)),
        "wall_time": wall,
        **ent.to_dict(),
    }
    return assignment, report


def cmd_partition(args) -> int:
    g, feats, labels, _ = load_dataset(args.dataset)
    cfg = PartitionerConfig(num_parts=args.num_parts, imbalance_epsilon=args.epsilon, seed=args.seed)
    if args.c < 0 or args.fanout_k < 1:
        raise ConfigError("--c must be >= 0 and --fanout-k >= 1")
    assignment, report = partition_report(g, feats, labels, args.scheme, cfg, args.c, args.fanout_k)
    out = Path(args.out)
    out.mkdir(exist_ok=True)
    assignment.save(out / "assignment.bin")
    _dump_json(out / "partition_report.json", report)
    log.info("%s partition: cut=%d total_entropy=%.4f (%.2fs)", args.scheme, report["cut"],
             report["total_entropy"], report["wall_time"])
    return EXIT_OK


# --- train ----------------------------------------------------------------------

def _history_csv(history: list[HistoryRecord]) -> str:
    return _csv_text(HistoryRecord.FIELDS, [h.row() for h in history])


def _timing_csv(history: list[HistoryRecord]) -> str:
    rows = [[h.phase, h.worker_id, h.mini_epoch, repr(h.wall_time), h.event] for h in history]
    return _csv_text(("phase", "worker_id", "mini_epoch", "wall_time", "event"), rows)


def cmd_train(args) -> int:
    overrides = list(args.override or [])
    if args.num_workers is not None:
        overrides.append(f"trainer.num_workers={args.num_workers}")
    run = RunConfig.load(args.config, overrides)
    cfg = run.train_config()
    g, feats, labels, splits = load_dataset(args.dataset)
    assignment = PartitionAssignment.load(args.assignment, cfg.num_workers)
    if len(assignment.part_of) != g.num_nodes:
        raise DatasetError(f"{args.assignment}: {len(assignment.part_of)} entries for {g.num_nodes} nodes")
    if (assignment.sizes() == 0).any():
        raise DatasetError(f"{args.assignment}: some parts are empty")

    result = run_training(g, feats, labels, splits, assignment, cfg, baseline=args.baseline)

    out = Path(args.out)
    out.mkdir(exist_ok=True)
    (out / "checkpoints").mkdir(exist_ok=True)
    result.global_params.save(out / "checkpoints" / "global.ckpt")
    for i, p in enumerate(result.personal_params or []):
        p.save(out / "checkpoints" / f"worker{i}.ckpt")
    atomic_write_text(out / "history.csv", _history_csv(result.history))
    atomic_write_text(out / "history_timing.csv", _timing_csv(result.history))
    _dump_json(out / "metrics.json", result.metrics)
    _dump_json(out / "timing.json", result.timing)
    _dump_json(out / "config.json", run.to_dict())
    report = Path(args.assignment).with_name("partition_report.json")
    if report.is_file():
        atomic_write_text(out / "partition_report.json", report.read_text())
    final = result.metrics["final"]
    log.info("test micro-F1 %.4f weighted-F1 %.4f, train time %.1fs", final["micro_f1"],
             final["weighted_f1"], result.timing["train_time"])
    return EXIT_OK


# --- report ---------------------------------------------------------------------

def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise DatasetError(f"missing file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"malformed JSON in {path}: {exc}") from exc


def _fmt_table(header, rows) -> str:
    cells = [list(map(str, header))] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def collect_runs(run_dirs) -> tuple[list, list, list]:
    """Rows for the model comparison, the partition comparison and per-part detail."""
    runs, parts, per_part = [], [], []
    for d in map(Path, run_dirs):
        metrics = _read_json(d / "metrics.json")
        timing = _read_json(d / "timing.json") if (d / "timing.json").exists() else {}
        try:
            final = metrics["final"]
            runs.append({"run": d.name, "micro_f1": float(final["micro_f1"]),
                         "weighted_f1": float(final["weighted_f1"]),
                         "train_time": float(timing["train_time"]) if "train_time" in timing else None})
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"malformed metrics in {d / 'metrics.json'}: missing {exc}") from exc
        if (d / "partition_report.json").exists():
            rep = _read_json(d / "partition_report.json")
            try:
                parts.append({"run": d.name, "scheme": rep["scheme"], "num_parts": rep["num_parts"],
                              "total_entropy": rep["total_entropy"], "cut": rep["cut"],
                              "wall_time": rep["wall_time"]})
                for i, (size, ent) in enumerate(zip(rep["per_part_sizes"], rep["per_part_entropy"])):
                    per_part.append([d.name, i, size, ent])
            except KeyError as exc:
                raise DatasetError(f"malformed partition report {d / 'partition_report.json'}: missing {exc}") from exc
    return runs, parts, per_part


def render_report(runs, parts) -> tuple[str, list, list]:
    ref = runs[0]["train_time"] if runs else None
    with_ratio = len(runs) > 1
    header = ["run", "micro_f1", "weighted_f1", "train_time_s"] + (["speedup"] if with_ratio else [])
    rows = []
    for r in runs:
        t = r["train_time"]
        row = [r["run"], f"{r['micro_f1']:.4f}", f"{r['weighted_f1']:.4f}", "" if t is None else f"{t:.2f}"]
        if with_ratio:
            row.append(f"{ref / t:.2f}" if ref and t else "")
        rows.append(row)
    text = _fmt_table(header, rows)
    prow = [[p["run"], p["scheme"], p["num_parts"], f"{p['total_entropy']:.4f}", p["cut"], f"{p['wall_time']:.2f}"]
            for p in parts]
    pheader = ["run", "scheme", "num_parts", "total_entropy", "cut", "partition_time_s"]
    if parts:
        text += "\n\n" + _fmt_table(pheader, prow)
    return text, [header] + rows, [pheader] + prow


def cmd_report(args) -> int:
    runs, parts, per_part = collect_runs(args.runs)
    text, table, ptable = render_report(runs, parts)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(exist_ok=True)
        atomic_write_text(out / "comparison.csv", _csv_text(table[0], table[1:]))
        if parts:
            atomic_write_text(out / "partitions.csv", _csv_text(ptable[0], ptable[1:]))
            atomic_write_text(out / "partition_parts.csv",
                              _csv_text(["run", "part", "size", "entropy"], per_part))
    return EXIT_OK


# --- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="entropart", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen", help="generate a synthetic dataset directory")
    s.add_argument("spec", nargs="?", help="YAML/JSON generator spec (flat or under 'datagen')")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("partition", help="partition a dataset and report entropy and cut")
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--num-parts", type=int, default=4)
    s.add_argument("--c", type=float, default=1.0)
    s.add_argument("--fanout-k", type=int, default=25)
    s.add_argument("--epsilon", type=float, default=0.05)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--scheme", choices=("unit", "ew"), default="ew")
    s.set_defaults(func=cmd_partition)

    s = sub.add_parser("train", help="two-phase multi-worker training")
    s.add_argument("--dataset", required=True)
    s.add_argument("--assignment", required=True)
    s.add_argument("--num-workers", type=int)
    s.add_argument("--config")
    s.add_argument("--override", action="append", metavar="KEY=VALUE")
    s.add_argument("--out", required=True)
    s.add_argument("--baseline", action="store_true", help="phase 0 only, no class-balanced sampling")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("report", help="compare finished runs")
    s.add_argument("runs", nargs="+")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DatasetError, PartitionError, ValueError) as exc:
        print(f"entropart: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, TrainingDiverged, RuntimeError) as exc:
        print(f"entropart: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
