"""Single executable exposing the pipeline:
synth -> ingest -> build-graph -> train -> evaluate -> predict -> ablate.

JSON summaries go to stdout, diagnostics to stderr; every subcommand writes
a manifest sufficient to replay it. Report paths render a figure next to
each CSV they emit.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, figures
from .corpus import (CorpusError, build_vocabulary, corpus_stats, ingest,
                     load_stoplist, read_corpus, remove_stopwords, write_corpus)
from .evaluate import (HEADS_CSV_HEADER, LABELS_CSV_HEADER,
                       TOKENIZATION_CSV_HEADER, ablate_heads,
                       ablate_label_fraction, compare_tokenization, confusion,
                       evaluate_checkpoint, metrics, repeat_evaluate,
                       split_mask, welch_t_test, write_ablation_csv,
                       write_metrics_csv, write_metrics_json,
                       write_repeat_metrics_csv)
from .graphbuild import (GraphBuildError, build_graph, count_windows,
                         load_graph, save_graph)
from .synth import generate_synthetic_corpus, write_corpus_jsonl
from .train import (TrainingError, load_checkpoint, make_train_config,
                    predict, save_checkpoint, train, write_run_log)


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _ensure_writable_file(*paths) -> None:
    for p in paths:
        parent = Path(p).resolve().parent
        if not parent.is_dir():
            raise FileNotFoundError(f"output directory does not exist: {parent}")
        if not os.access(parent, os.W_OK):
            raise PermissionError(f"output directory is not writable: {parent}")


def _ensure_out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory is not writable: {out}")
    return out


def _write_manifest(path, command: str, flags: dict) -> None:
    payload = {
        "command": command,
        "flags": {k: v for k, v in sorted(flags.items()) if v is not None},
        "package_version": __version__,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                          encoding="utf-8")


def _int_list(raw: str):
    return [int(part) for part in raw.split(",") if part.strip()]


def _float_list(raw: str):
    return [float(part) for part in raw.split(",") if part.strip()]


_CONFIG_FLAGS = (
    ("--epochs", int, "epochs"),
    ("--learning-rate", float, "learning_rate"),
    ("--hidden-units", int, "hidden_units"),
    ("--heads", int, "heads"),
    ("--dropout", float, "dropout"),
    ("--leaky-alpha", float, "leaky_alpha"),
    ("--l2", float, "l2"),
    ("--window-size", int, "window_size"),
    ("--seed", int, "seed"),
    ("--patience", int, "patience"),
    ("--output-heads", int, "output_heads"),
)


def _add_config_flags(parser: argparse.ArgumentParser, *, skip=()) -> None:
    parser.add_argument("--config", default=None,
                        help="flat key=value config file (TrainConfig keys)")
    for flag, flag_type, dest in _CONFIG_FLAGS:
        if dest in skip:
            continue
        parser.add_argument(flag, type=flag_type, default=None, dest=dest)
    parser.add_argument("--arch", choices=("gat", "gcn"), default=None)
    parser.add_argument("--l2-scope", choices=("first_layer", "all"),
                        default=None, dest="l2_scope")
    parser.add_argument("--attend-edge-weights", action=argparse.BooleanOptionalAction,
                        default=None, dest="attend_edge_weights")


def _config_from_args(args, *, skip=()) -> "TrainConfig":
    overrides = {}
    names = [dest for _, _, dest in _CONFIG_FLAGS]
    names += ["arch", "l2_scope", "attend_edge_weights"]
    for name in names:
        if name in skip:
            continue
        overrides[name] = getattr(args, name, None)
    return make_train_config(args.config, overrides)


def cmd_synth(args) -> int:
    _ensure_writable_file(args.out)
    records = generate_synthetic_corpus(
        classes=args.classes, docs_per_class=args.docs_per_class,
        vocab_per_class=args.vocab_per_class, overlap=args.overlap,
        seed=args.seed)
    write_corpus_jsonl(records, args.out)
    _write_manifest(str(args.out) + ".manifest.json", "synth", {
        "classes": args.classes, "docs_per_class": args.docs_per_class,
        "vocab_per_class": args.vocab_per_class, "overlap": args.overlap,
        "seed": args.seed, "out": str(args.out)})
    _log(f"wrote {len(records)} documents to {args.out}")
    _emit({"n_docs": len(records), "classes": args.classes, "out": str(args.out)})
    return 0


def cmd_ingest(args) -> int:
    stats_path = str(args.out) + ".stats.json"
    _ensure_writable_file(args.out, stats_path)
    corpus = ingest(args.input, args.mode)
    if args.stoplist:
        corpus = remove_stopwords(corpus, load_stoplist(args.stoplist))
    write_corpus(corpus, args.out)
    stats = corpus_stats(corpus)
    Path(stats_path).write_text(
        json.dumps(stats.to_dict(), sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    _write_manifest(str(args.out) + ".manifest.json", "ingest", {
        "input": str(args.input), "mode": args.mode,
        "stoplist": str(args.stoplist) if args.stoplist else None,
        "out": str(args.out)})
    _log(f"ingested {len(corpus)} documents ({args.mode} mode)")
    _emit({"n_docs": len(corpus), "mode": args.mode, "stats": stats.to_dict()})
    return 0


def cmd_build_graph(args) -> int:
    _ensure_writable_file(args.out)
    corpus = read_corpus(args.corpus)
    vocab = build_vocabulary(corpus)
    stats = count_windows(corpus, args.window_size)
    graph = build_graph(corpus, vocab, args.window_size, stats=stats)
    if graph.isolated_docs:
        _log("warning: document(s) without a positive TF-IDF edge: "
             + ", ".join(graph.isolated_docs))
    save_graph(graph, args.out)
    _write_manifest(str(args.out) + ".manifest.json", "build-graph", {
        "corpus": str(args.corpus), "window_size": args.window_size,
        "out": str(args.out)})
    n_edges = (graph.adjacency.nnz - graph.n_nodes) // 2
    _emit({"nodes": graph.n_nodes, "docs": graph.n_docs, "terms": graph.n_terms,
           "edges": n_edges, "total_windows": stats.total_windows})
    return 0


def cmd_train(args) -> int:
    out_dir = _ensure_out_dir(args.out_dir)
    graph = load_graph(args.graph)
    config = _config_from_args(args)
    checkpoint, run_log = train(graph, config)
    save_checkpoint(checkpoint, out_dir / "checkpoint.bin")
    write_run_log(run_log, out_dir / "run_log.csv")
    figures.plot_run_log(run_log.records, out_dir / "run_log.png")
    from dataclasses import asdict
    _write_manifest(out_dir / "manifest.json", "train", {
        "graph": str(args.graph), "out_dir": str(out_dir), **asdict(config)})
    last = run_log.records[-1]
    _log(f"trained {len(run_log)} epochs; best epoch {checkpoint.epoch}")
    _emit({"epochs_run": len(run_log), "best_epoch": checkpoint.epoch,
           "final_train_loss": last.train_loss, "final_val_loss": last.val_loss,
           "checkpoint": str(out_dir / "checkpoint.bin")})
    return 0


def cmd_evaluate(args) -> int:
    out_dir = _ensure_out_dir(args.out)
    graph = load_graph(args.graph)
    checkpoint = load_checkpoint(args.checkpoint)
    cm, report = evaluate_checkpoint(checkpoint, graph, args.split)
    extra = {"split": args.split}
    if args.repeats > 1:
        _, summary = repeat_evaluate(graph, checkpoint.config, args.repeats,
                                     args.split)
        extra["repeats"] = summary
        if args.baseline:
            baseline = json.loads(Path(args.baseline).read_text(encoding="utf-8"))
            p_values = {}
            for key in ("accuracy", "macro_f"):
                base_vals = baseline.get("repeats", {}).get(key, {}).get("values")
                if base_vals:
                    t_stat, p_val = welch_t_test(summary[key]["values"], base_vals)
                    p_values[key] = {"t": t_stat, "p": p_val}
            extra["p_values_vs_baseline"] = p_values
        write_repeat_metrics_csv(summary, out_dir / "metrics.csv")
    else:
        write_metrics_csv(report, graph.classes, out_dir / "metrics.csv")
    write_metrics_json(report, cm, graph.classes, out_dir / "metrics.json",
                       extra=extra)
    figures.plot_confusion(cm.counts, graph.classes, out_dir / "confusion.png")
    _write_manifest(out_dir / "manifest.json", "evaluate", {
        "graph": str(args.graph), "checkpoint": str(args.checkpoint),
        "split": args.split, "repeats": args.repeats,
        "baseline": str(args.baseline) if args.baseline else None,
        "out": str(out_dir)})
    _emit({"accuracy": report.accuracy, "macro_f": report.macro_f,
           "split": args.split, "out": str(out_dir)})
    return 0


def cmd_predict(args) -> int:
    _ensure_writable_file(args.out)
    graph = load_graph(args.graph)
    checkpoint = load_checkpoint(args.checkpoint)
    preds, probs = predict(checkpoint, graph)
    import csv as _csv
    with Path(args.out).open("w", encoding="utf-8", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["id", "predicted_label"]
                        + [f"prob_{c}" for c in graph.classes])
        for i, doc_id in enumerate(graph.doc_ids):
            writer.writerow([doc_id, graph.classes[preds[i]]]
                            + [repr(float(p)) for p in probs[i]])
    _write_manifest(str(args.out) + ".manifest.json", "predict", {
        "graph": str(args.graph), "checkpoint": str(args.checkpoint),
        "out": str(args.out)})
    _emit({"n_docs": len(graph.doc_ids), "out": str(args.out)})
    return 0


def cmd_ablate(args) -> int:
    out_dir = _ensure_out_dir(args.out)
    config = _config_from_args(args, skip=("heads",))
    manifest_flags = {"kind": args.kind, "out": str(out_dir), "jobs": args.jobs,
                      "config": args.config}
    if args.kind == "heads":
        if not args.graph:
            raise ValueError("--graph is required for --kind heads")
        graph = load_graph(args.graph)
        head_counts = _int_list(args.heads)
        rows = ablate_heads(graph, config, head_counts, jobs=args.jobs)
        write_ablation_csv(rows, HEADS_CSV_HEADER, out_dir / "heads.csv")
        figures.plot_head_ablation(rows, out_dir / "heads.png")
        manifest_flags.update({"graph": str(args.graph), "heads": args.heads})
    elif args.kind == "labels":
        if not args.graph:
            raise ValueError("--graph is required for --kind labels")
        graph = load_graph(args.graph)
        fractions = _float_list(args.fractions)
        rows = ablate_label_fraction(graph, config, fractions, jobs=args.jobs)
        write_ablation_csv(rows, LABELS_CSV_HEADER, out_dir / "labels.csv")
        figures.plot_label_fraction(rows, out_dir / "labels.png")
        manifest_flags.update({"graph": str(args.graph),
                               "fractions": args.fractions})
    else:
        if not (args.corpus_char and args.corpus_word):
            raise ValueError(
                "--corpus-char and --corpus-word are required for --kind tokenization")
        corpus_char = read_corpus(args.corpus_char)
        corpus_word = read_corpus(args.corpus_word)
        rows = compare_tokenization(corpus_char, corpus_word, config)
        write_ablation_csv(rows, TOKENIZATION_CSV_HEADER,
                           out_dir / "tokenization.csv")
        figures.plot_tokenization(rows, out_dir / "tokenization.png")
        manifest_flags.update({"corpus_char": str(args.corpus_char),
                               "corpus_word": str(args.corpus_word)})
    from dataclasses import asdict
    manifest_flags.update(asdict(config))
    _write_manifest(out_dir / "manifest.json", "ablate", manifest_flags)
    _emit({"kind": args.kind, "rows": rows, "out": str(out_dir)})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="textgat",
        description="Text-to-graph construction and attention-based "
                    "transductive document classification.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--docs-per-class", type=int, default=200)
    p.add_argument("--vocab-per-class", type=int, default=40)
    p.add_argument("--overlap", type=int, default=20)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="tokenize a JSON-lines corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--mode", choices=("char", "word"), required=True)
    p.add_argument("--stoplist", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build-graph", help="construct the document/term graph")
    p.add_argument("--corpus", required=True)
    p.add_argument("--window-size", type=int, default=25)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train", help="train a model on a built graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--out-dir", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics for a trained checkpoint")
    p.add_argument("--graph", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--baseline", default=None,
                   help="metrics.json of a repeated baseline run for the t-test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="per-document classes and probabilities")
    p.add_argument("--graph", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ablate", help="head/label-fraction/tokenization harnesses")
    p.add_argument("--kind", choices=("heads", "labels", "tokenization"),
                   required=True)
    p.add_argument("--graph", default=None)
    p.add_argument("--heads", default="1,4,8,12",
                   help="comma-separated head counts (kind=heads)")
    p.add_argument("--fractions", default="0.2,0.4,0.6,0.8,1.0",
                   help="comma-separated label fractions (kind=labels)")
    p.add_argument("--corpus-char", default=None, dest="corpus_char")
    p.add_argument("--corpus-word", default=None, dest="corpus_word")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    _add_config_flags(p, skip=("heads",))
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CorpusError, GraphBuildError, TrainingError, ValueError, OSError) as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
