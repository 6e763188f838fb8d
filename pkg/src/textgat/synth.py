"""Synthetic labeled corpora for desk-scale experiments.

Each class owns a block of letters; its tokens are two-letter combinations
from that block, so the classes stay separable under both word-level and
char-level tokenization. An optional overlap pool of digit-pair tokens is
shared by all classes. Splits are stratified 80/10/10 per class.
"""
from __future__ import annotations

import json
import math
import string
from itertools import product
from pathlib import Path

import numpy as np

_LETTERS = string.ascii_lowercase + string.ascii_uppercase


def _class_vocabularies(classes: int, vocab_per_class: int):
    per_class = math.ceil(math.sqrt(vocab_per_class))
    needed = classes * per_class
    if needed > len(_LETTERS):
        raise ValueError(
            f"cannot build {classes} disjoint class alphabets of {per_class} letters")
    vocabs = []
    for ci in range(classes):
        block = _LETTERS[ci * per_class:(ci + 1) * per_class]
        tokens = ["".join(pair) for pair in product(block, repeat=2)]
        vocabs.append(tokens[:vocab_per_class])
    return vocabs


def _overlap_vocabulary(overlap: int):
    if overlap == 0:
        return []
    tokens = []
    length = 2
    while len(tokens) < overlap:
        tokens = ["".join(t) for t in product(string.digits, repeat=length)]
        length += 1
    return tokens[:overlap]


def generate_synthetic_corpus(classes: int = 5, docs_per_class: int = 200,
                              vocab_per_class: int = 40, overlap: int = 20,
                              seed: int = 42, *, class_token_rate: float = 0.8,
                              doc_length=(15, 40)):
    """Corpus records ({id, text, label, split}) with class-specific vocabularies.

    Tokens are drawn from the class vocabulary with probability
    ``class_token_rate`` and from the shared overlap pool otherwise
    (overlap=0 makes the classes token-disjoint).
    """
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if docs_per_class < 1 or vocab_per_class < 1:
        raise ValueError("docs_per_class and vocab_per_class must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    class_vocabs = _class_vocabularies(classes, vocab_per_class)
    shared = _overlap_vocabulary(overlap)
    lo, hi = doc_length

    records = []
    for ci in range(classes):
        label = f"class{ci}"
        vocab = class_vocabs[ci]
        n_train = int(round(0.8 * docs_per_class))
        n_val = int(round(0.1 * docs_per_class))
        for di in range(docs_per_class):
            length = int(rng.integers(lo, hi + 1))
            tokens = []
            for _ in range(length):
                if shared and rng.random() >= class_token_rate:
                    tokens.append(shared[int(rng.integers(len(shared)))])
                else:
                    tokens.append(vocab[int(rng.integers(len(vocab)))])
            if di < n_train:
                split = "train"
            elif di < n_train + n_val:
                split = "val"
            else:
                split = "test"
            records.append({
                "id": f"{label}_{di:04d}",
                "text": " ".join(tokens),
                "label": label,
                "split": split,
            })
    return records


def write_corpus_jsonl(records, path) -> None:
    """Raw ingest-format JSON lines (deterministic bytes for a fixed seed)."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True, separators=(",", ":"),
                                ensure_ascii=False) + "\n")
