"""Confusion matrices, the seven aggregate indicators, and ablation harnesses.

Multi-class metrics reduce the binary confusion table one-vs-rest per class;
the macro F score is derived from macro precision and macro recall
(2PR/(P+R)), not from averaging per-class F values. 0/0 cells define to 0.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .corpus import Corpus, build_vocabulary
from .graphbuild import TextGraph, build_graph
from .train import TrainConfig, predict, train

HEADS_CSV_HEADER = ("heads", "test_accuracy", "mean_epoch_ms")
LABELS_CSV_HEADER = ("fraction", "test_accuracy")
TOKENIZATION_CSV_HEADER = ("mode", "test_accuracy")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows = true class, columns = predicted class."""

    counts: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class MetricsReport:
    precision: np.ndarray
    recall: np.ndarray
    f_score: np.ndarray
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f: float

    def to_dict(self, class_names=None) -> dict:
        names = list(class_names) if class_names is not None else [
            str(i) for i in range(len(self.precision))]
        return {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f": self.macro_f,
            "per_class": {
                name: {
                    "precision": float(self.precision[i]),
                    "recall": float(self.recall[i]),
                    "f_score": float(self.f_score[i]),
                }
                for i, name in enumerate(names)
            },
        }


def confusion(preds: np.ndarray, labels: np.ndarray, mask: np.ndarray,
              n_classes: int) -> ConfusionMatrix:
    """Exact counts over masked documents."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ValueError("empty mask")
    p = np.asarray(preds)[idx]
    t = np.asarray(labels)[idx]
    if p.min() < 0 or p.max() >= n_classes or t.min() < 0 or t.max() >= n_classes:
        raise ValueError("label out of range")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts=counts)


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    """One-vs-rest precision/recall/F per class plus the macro indicators."""
    counts = cm.counts
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    c = cm.n_classes
    tp = np.diag(counts).astype(np.float64)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    precision = np.array([_safe_div(tp[i], tp[i] + fp[i]) for i in range(c)])
    recall = np.array([_safe_div(tp[i], tp[i] + fn[i]) for i in range(c)])
    f_score = np.array([
        _safe_div(2.0 * recall[i] * precision[i], recall[i] + precision[i])
        for i in range(c)
    ])
    accuracy = float(tp.sum() / cm.total)
    macro_p = float(precision.mean())
    macro_r = float(recall.mean())
    macro_f = _safe_div(2.0 * macro_p * macro_r, macro_p + macro_r)
    return MetricsReport(precision=precision, recall=recall, f_score=f_score,
                         accuracy=accuracy, macro_precision=macro_p,
                         macro_recall=macro_r, macro_f=macro_f)


def split_mask(graph: TextGraph, split: str) -> np.ndarray:
    masks = {"train": graph.train_mask, "val": graph.val_mask, "test": graph.test_mask}
    if split not in masks:
        raise ValueError(f"unknown split: {split!r}")
    return masks[split]


def evaluate_checkpoint(checkpoint, graph: TextGraph, split: str = "test"):
    """(ConfusionMatrix, MetricsReport) for a trained checkpoint on one split."""
    preds, _ = predict(checkpoint, graph)
    cm = confusion(preds, graph.labels, split_mask(graph, split), len(graph.classes))
    return cm, metrics(cm)


def _run_once(graph: TextGraph, config: TrainConfig, split: str):
    checkpoint, run_log = train(graph, config)
    cm, report = evaluate_checkpoint(checkpoint, graph, split)
    return report, run_log


def _heads_task(args):
    graph, config, k = args
    report, run_log = _run_once(graph, replace(config, heads=k), "test")
    return {"heads": k, "test_accuracy": report.accuracy,
            "mean_epoch_ms": run_log.mean_epoch_ms()}


def ablate_heads(graph: TextGraph, base_config: TrainConfig, head_counts,
                 *, jobs: int = 1):
    """One seeded run per head count; rows of accuracy and mean epoch time."""
    if not head_counts:
        raise ValueError("head_counts must be non-empty")
    tasks = [(graph, base_config, int(k)) for k in head_counts]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_heads_task, tasks))
    return [_heads_task(t) for t in tasks]


def subsample_train_mask(graph: TextGraph, fraction: float, seed: int) -> np.ndarray:
    """Class-stratified seeded subsample of the train mask.

    Per class keeps floor(fraction * n + 0.5) documents; a class rounding to
    zero is an error (every class must stay represented).
    """
    if not (0.0 < fraction <= 1.0):
        raise ValueError("fraction must be in (0, 1]")
    if fraction == 1.0:
        return graph.train_mask.copy()
    rng = np.random.Generator(np.random.PCG64(seed))
    new_mask = np.zeros_like(graph.train_mask)
    for ci in range(len(graph.classes)):
        class_idx = np.flatnonzero(graph.train_mask & (graph.labels == ci))
        n_keep = int(math.floor(fraction * class_idx.size + 0.5))
        if n_keep == 0:
            raise ValueError(
                f"fraction {fraction} leaves class {graph.classes[ci]!r} unrepresented")
        chosen = rng.choice(class_idx, size=n_keep, replace=False)
        new_mask[chosen] = True
    return new_mask


def _fraction_task(args):
    graph, config, fraction = args
    sub = graph.with_train_mask(subsample_train_mask(graph, fraction, config.seed))
    report, _ = _run_once(sub, config, "test")
    return {"fraction": fraction, "test_accuracy": report.accuracy}


def ablate_label_fraction(graph: TextGraph, config: TrainConfig, fractions,
                          *, jobs: int = 1):
    """Training-mask subsampling ablation; one seeded run per fraction."""
    if not fractions:
        raise ValueError("fractions must be non-empty")
    tasks = [(graph, config, float(f)) for f in fractions]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_fraction_task, tasks))
    return [_fraction_task(t) for t in tasks]


def compare_tokenization(corpus_char: Corpus, corpus_word: Corpus,
                         config: TrainConfig):
    """Build a graph per tokenization of the same texts, train identically."""
    rows = []
    for mode, corpus in (("char", corpus_char), ("word", corpus_word)):
        vocab = build_vocabulary(corpus)
        graph = build_graph(corpus, vocab, config.window_size)
        report, _ = _run_once(graph, config, "test")
        rows.append({"mode": mode, "test_accuracy": report.accuracy})
    return rows


def repeat_evaluate(graph: TextGraph, config: TrainConfig, repeats: int,
                    split: str = "test"):
    """Rerun training with seeds seed+0..repeats-1; per-run reports plus mean/std."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    reports = []
    for r in range(repeats):
        report, _ = _run_once(graph, replace(config, seed=config.seed + r), split)
        reports.append(report)

    def agg(getter):
        vals = np.array([getter(rep) for rep in reports])
        return {"mean": float(vals.mean()), "std": float(vals.std(ddof=1)) if repeats > 1 else 0.0,
                "values": [float(v) for v in vals]}

    summary = {
        "repeats": repeats,
        "accuracy": agg(lambda rep: rep.accuracy),
        "macro_precision": agg(lambda rep: rep.macro_precision),
        "macro_recall": agg(lambda rep: rep.macro_recall),
        "macro_f": agg(lambda rep: rep.macro_f),
    }
    return reports, summary


def welch_t_test(sample_a, sample_b):
    """Two-sample t statistic and p-value (approximation, unequal variances)."""
    from scipy import stats

    result = stats.ttest_ind(np.asarray(sample_a, dtype=np.float64),
                             np.asarray(sample_b, dtype=np.float64),
                             equal_var=False)
    return float(result.statistic), float(result.pvalue)


def write_metrics_json(report: MetricsReport, cm: ConfusionMatrix, class_names,
                       path, extra=None) -> None:
    payload = report.to_dict(class_names)
    payload["confusion"] = cm.counts.tolist()
    if extra:
        payload.update(extra)
    Path(path).write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def write_metrics_csv(report: MetricsReport, class_names, path) -> None:
    """Long-form rows: metric,class,value."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("metric", "class", "value"))
        for i, name in enumerate(class_names):
            writer.writerow(("precision", name, repr(float(report.precision[i]))))
            writer.writerow(("recall", name, repr(float(report.recall[i]))))
            writer.writerow(("f_score", name, repr(float(report.f_score[i]))))
        writer.writerow(("accuracy", "", repr(report.accuracy)))
        writer.writerow(("macro_precision", "", repr(report.macro_precision)))
        writer.writerow(("macro_recall", "", repr(report.macro_recall)))
        writer.writerow(("macro_f", "", repr(report.macro_f)))


def write_repeat_metrics_csv(summary: dict, path) -> None:
    """Aggregated rows: metric,mean,std."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("metric", "mean", "std"))
        for key in ("accuracy", "macro_precision", "macro_recall", "macro_f"):
            writer.writerow((key, repr(summary[key]["mean"]), repr(summary[key]["std"])))


def write_ablation_csv(rows, header, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([
                repr(row[k]) if isinstance(row[k], float) else row[k]
                for k in header
            ])
