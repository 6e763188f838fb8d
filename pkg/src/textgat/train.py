"""Full-batch training loop: seeded init, adaptive-moment steps, early stop,
checkpointing, and per-epoch run logging.

Given (seed, config, graph), the produced checkpoint is bit-identical across
runs; wall-clock columns in the run log are the only nondeterministic output.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .graphbuild import TextGraph, normalize_adjacency
from .layers import (GatModel, GcnModel, ModelConfig, masked_cross_entropy,
                     masked_cross_entropy_backward)
from .numcore import RngSpec, SparseMatrix, make_rng

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

CHECKPOINT_FORMAT = "textgat-checkpoint"
CHECKPOINT_FORMAT_VERSION = 1

RUN_LOG_HEADER = ("epoch", "train_loss", "val_loss", "val_acc", "wall_ms")


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss, unusable masks, bad dimensions)."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    learning_rate: float = 0.005
    hidden_units: int = 8
    heads: int = 8
    dropout: float = 0.5
    leaky_alpha: float = 0.2
    l2: float = 5e-4
    window_size: int = 25
    seed: int = 42
    patience: int = 100
    arch: str = "gat"
    output_heads: int = 1
    l2_scope: str = "first_layer"
    attend_edge_weights: bool = False
    val_fraction: float = 0.1


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    wall_ms: float


@dataclass(frozen=True)
class RunLog:
    records: tuple

    def __len__(self) -> int:
        return len(self.records)

    def mean_epoch_ms(self) -> float:
        return float(np.mean([r.wall_ms for r in self.records]))


@dataclass(frozen=True)
class Checkpoint:
    config: TrainConfig
    rng: RngSpec
    epoch: int
    input_dim: int
    n_classes: int
    params: dict


def build_model(config: TrainConfig, input_dim: int, n_classes: int, rng):
    model_config = ModelConfig(
        architecture=config.arch,
        input_dim=input_dim,
        classes=n_classes,
        hidden_units=config.hidden_units,
        heads=config.heads,
        output_heads=config.output_heads,
        dropout=config.dropout,
        leaky_alpha=config.leaky_alpha,
        attend_edge_weights=config.attend_edge_weights,
    )
    if config.arch == "gat":
        return GatModel.init(model_config, rng)
    return GcnModel.init(model_config, rng)


def resolve_masks(graph: TextGraph, config: TrainConfig, rng):
    """Train/val masks; carves a seeded val split out of train when val is empty."""
    train = graph.train_mask.copy()
    val = graph.val_mask.copy()
    if not train.any():
        raise TrainingError("empty train mask")
    if not val.any():
        train_idx = np.flatnonzero(train)
        n_val = max(1, int(round(config.val_fraction * train_idx.size)))
        if n_val >= train_idx.size:
            raise TrainingError("not enough train documents to carve a validation split")
        chosen = rng.choice(train_idx, size=n_val, replace=False)
        train[chosen] = False
        val[chosen] = True
    return train, val


def _node_mask(graph: TextGraph, doc_mask: np.ndarray) -> np.ndarray:
    out = np.zeros(graph.n_nodes, dtype=bool)
    out[:graph.n_docs] = doc_mask
    return out


def _node_labels(graph: TextGraph) -> np.ndarray:
    labels = np.full(graph.n_nodes, -1, dtype=np.int64)
    labels[:graph.n_docs] = graph.labels
    return labels


def masked_accuracy(probs: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    idx = np.flatnonzero(mask)
    preds = np.argmax(probs[idx], axis=1)
    return float(np.mean(preds == labels[idx]))


def _propagation(graph: TextGraph, config: TrainConfig):
    """What each architecture consumes: GAT the pattern (weights optional),
    GCN the normalized weighted adjacency."""
    if config.arch == "gat":
        edge_weights = graph.adjacency.data if config.attend_edge_weights else None
        return graph.adjacency, edge_weights
    return normalize_adjacency(graph), None


def train(graph: TextGraph, config: TrainConfig):
    """Run the optimization loop; returns (best-val-loss Checkpoint, RunLog)."""
    rng = make_rng(config.seed)
    train_mask, val_mask = resolve_masks(graph, config, rng)
    n_classes = len(graph.classes)
    if n_classes < 2:
        raise TrainingError("need at least 2 classes")
    model = build_model(config, graph.n_nodes, n_classes, rng)
    features = SparseMatrix.identity(graph.n_nodes)
    prop, edge_weights = _propagation(graph, config)

    labels = _node_labels(graph)
    node_train = _node_mask(graph, train_mask)
    node_val = _node_mask(graph, val_mask)

    params = model.parameters()
    l2_names = model.l2_parameter_names(config.l2_scope)
    adam_m = {name: np.zeros_like(p) for name, p in params.items()}
    adam_v = {name: np.zeros_like(p) for name, p in params.items()}

    records = []
    best_val = np.inf
    best_epoch = 0
    best_params = None
    since_improve = 0

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        probs, cache = model.forward(features, prop, training=True, rng=rng,
                                     edge_weights=edge_weights)
        l2_params = [params[n] for n in l2_names]
        train_loss = masked_cross_entropy(probs, labels, node_train,
                                          l2_params=l2_params, l2=config.l2)
        if not np.isfinite(train_loss):
            raise TrainingError(f"non-finite training loss at epoch {epoch}")
        d_probs = masked_cross_entropy_backward(probs, labels, node_train)
        grads = model.backward(d_probs, cache)
        for name in l2_names:
            grads[name] = grads[name] + 2.0 * config.l2 * params[name]
        for name, p in params.items():
            g = grads[name]
            m, v = adam_m[name], adam_v[name]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            m_hat = m / (1.0 - ADAM_BETA1 ** epoch)
            v_hat = v / (1.0 - ADAM_BETA2 ** epoch)
            p -= config.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPSILON)

        eval_probs, _ = model.forward(features, prop, training=False,
                                      edge_weights=edge_weights)
        val_loss = masked_cross_entropy(eval_probs, labels, node_val)
        if not np.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        val_acc = masked_accuracy(eval_probs, labels, node_val)
        wall_ms = (time.perf_counter() - t0) * 1000.0
        records.append(EpochRecord(epoch, train_loss, val_loss, val_acc, wall_ms))

        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = {name: p.copy() for name, p in params.items()}
            since_improve = 0
        else:
            since_improve += 1
            if config.patience > 0 and since_improve >= config.patience:
                break

    checkpoint = Checkpoint(
        config=config,
        rng=RngSpec(seed=config.seed),
        epoch=best_epoch,
        input_dim=graph.n_nodes,
        n_classes=n_classes,
        params=best_params,
    )
    return checkpoint, RunLog(records=tuple(records))


def predict(checkpoint: Checkpoint, graph: TextGraph):
    """Per-document argmax class (ties -> lowest index) and probability rows."""
    if checkpoint.input_dim != graph.n_nodes:
        raise TrainingError(
            f"checkpoint expects {checkpoint.input_dim} nodes, graph has {graph.n_nodes}")
    if checkpoint.n_classes != len(graph.classes):
        raise TrainingError(
            f"checkpoint expects {checkpoint.n_classes} classes, graph has {len(graph.classes)}")
    config = checkpoint.config
    model = build_model(config, checkpoint.input_dim, checkpoint.n_classes, make_rng(0))
    model.load_parameters(checkpoint.params)
    features = SparseMatrix.identity(graph.n_nodes)
    prop, edge_weights = _propagation(graph, config)
    probs, _ = model.forward(features, prop, training=False, edge_weights=edge_weights)
    doc_probs = probs[:graph.n_docs]
    preds = np.argmax(doc_probs, axis=1)
    return preds, doc_probs


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    """JSON header line, then float64 little-endian tensors in declared order."""
    tensors = [{"name": name, "shape": list(arr.shape)}
               for name, arr in checkpoint.params.items()]
    header = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": asdict(checkpoint.config),
        "rng": {"algorithm": checkpoint.rng.algorithm, "seed": checkpoint.rng.seed},
        "epoch": checkpoint.epoch,
        "input_dim": checkpoint.input_dim,
        "n_classes": checkpoint.n_classes,
        "tensors": tensors,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n")
        for arr in checkpoint.params.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise TrainingError(f"{path}: not a checkpoint file") from exc
        if header.get("format") != CHECKPOINT_FORMAT:
            raise TrainingError(f"{path}: not a checkpoint file")
        if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise TrainingError(f"{path}: unsupported checkpoint version")
        params = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise TrainingError(f"{path}: truncated checkpoint")
            params[spec["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    config = TrainConfig(**header["config"])
    return Checkpoint(
        config=config,
        rng=RngSpec(algorithm=header["rng"]["algorithm"], seed=header["rng"]["seed"]),
        epoch=header["epoch"],
        input_dim=header["input_dim"],
        n_classes=header["n_classes"],
        params=params,
    )


def write_run_log(run_log: RunLog, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RUN_LOG_HEADER)
        for r in run_log.records:
            writer.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss),
                             repr(r.val_accuracy), repr(r.wall_ms)])


def read_run_log(path) -> RunLog:
    records = []
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != RUN_LOG_HEADER:
            raise TrainingError(f"{path}: unexpected run log header")
        for row in reader:
            records.append(EpochRecord(int(row[0]), float(row[1]), float(row[2]),
                                       float(row[3]), float(row[4])))
    return RunLog(records=tuple(records))


def parse_flat_config(path) -> dict:
    """key=value lines; blank lines and #-comments ignored."""
    raw = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ValueError(f"{path}: line {lineno}: expected key=value")
            key, value = stripped.split("=", 1)
            raw[key.strip()] = value.strip()
    return raw


def _coerce(value: str, like):
    if isinstance(like, bool):
        lowered = value.lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    return type(like)(value)


def make_train_config(config_file=None, overrides=None) -> TrainConfig:
    """Defaults <- config file <- explicit overrides."""
    values = {}
    defaults = TrainConfig()
    valid = {f.name for f in fields(TrainConfig)}
    if config_file is not None:
        for key, raw in parse_flat_config(config_file).items():
            if key not in valid:
                raise ValueError(f"unknown config key: {key!r}")
            values[key] = _coerce(raw, getattr(defaults, key))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in valid:
            raise ValueError(f"unknown config key: {key!r}")
        values[key] = value
    return TrainConfig(**values)
