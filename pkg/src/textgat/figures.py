"""Matplotlib renderings written next to every report CSV."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_run_log(records, path) -> None:
    """Train/val loss and val accuracy versus epoch."""
    epochs = [r.epoch for r in records]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(epochs, [r.train_loss for r in records], label="train loss")
    ax1.plot(epochs, [r.val_loss for r in records], label="val loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax2.plot(epochs, [r.val_accuracy for r in records], color="tab:green")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("val accuracy")
    ax2.set_ylim(0.0, 1.05)
    _save(fig, path)


def plot_confusion(counts, class_names, path) -> None:
    counts = np.asarray(counts)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(counts, cmap="Blues")
    ax.set_xticks(range(len(class_names)), class_names, rotation=45, ha="right")
    ax.set_yticks(range(len(class_names)), class_names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for i in range(counts.shape[0]):
        for j in range(counts.shape[1]):
            ax.text(j, i, str(counts[i, j]), ha="center", va="center", fontsize=8)
    fig.colorbar(im, ax=ax, shrink=0.8)
    _save(fig, path)


def plot_head_ablation(rows, path) -> None:
    """Accuracy and mean epoch time versus head count, two panels."""
    heads = [r["heads"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(heads, [r["test_accuracy"] for r in rows], marker="o")
    ax1.set_xlabel("attention heads")
    ax1.set_ylabel("test accuracy")
    ax1.set_ylim(0.0, 1.05)
    ax2.plot(heads, [r["mean_epoch_ms"] for r in rows], marker="o", color="tab:red")
    ax2.set_xlabel("attention heads")
    ax2.set_ylabel("mean epoch time (ms)")
    _save(fig, path)


def plot_label_fraction(rows, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([r["fraction"] for r in rows], [r["test_accuracy"] for r in rows], marker="o")
    ax.set_xlabel("labeled fraction of training documents")
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0.0, 1.05)
    _save(fig, path)


def plot_tokenization(rows, path) -> None:
    fig, ax = plt.subplots(figsize=(4, 3.5))
    modes = [r["mode"] for r in rows]
    ax.bar(modes, [r["test_accuracy"] for r in rows], color=["tab:blue", "tab:orange"])
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0.0, 1.05)
    _save(fig, path)
