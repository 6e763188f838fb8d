"""Heterogeneous document/term graph construction.

Nodes are the documents (corpus order) followed by the vocabulary terms
(vocabulary order). Edge weights: sliding-window PMI between term pairs
(positive values only), TF-IDF between a document and its terms (positive
values only), unit diagonal, zero otherwise. Document k is node k; term
with vocabulary index t is node n_docs + t.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, replace

import numpy as np

from .corpus import Corpus, Document, Vocabulary
from .numcore import SparseMatrix

GRAPH_FORMAT = "textgat-graph"
GRAPH_FORMAT_VERSION = 1


class GraphBuildError(ValueError):
    """Graph construction violated a structural requirement."""


@dataclass(frozen=True)
class WindowStats:
    """Sliding-window occurrence counts over the whole corpus.

    ``pair_windows`` keys are term pairs sorted lexicographically; a term or
    pair is counted at most once per window.
    """

    window_size: int
    total_windows: int
    term_windows: dict
    pair_windows: dict


@dataclass(frozen=True)
class TextGraph:
    n_docs: int
    n_terms: int
    window_size: int
    adjacency: SparseMatrix
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    classes: tuple[str, ...]
    doc_ids: tuple[str, ...]
    terms: tuple[str, ...]
    isolated_docs: tuple[str, ...] = ()

    @property
    def n_nodes(self) -> int:
        return self.n_docs + self.n_terms

    def with_train_mask(self, train_mask: np.ndarray) -> "TextGraph":
        return replace(self, train_mask=train_mask.astype(bool))


def count_windows(corpus: Corpus, window_size: int) -> WindowStats:
    """Count windows per document: positions 1..max(1, L - window_size + 1).

    A document shorter than the window contributes one window covering the
    whole document.
    """
    if window_size < 1:
        raise ValueError("window_size must be >= 1")
    total = 0
    term_w = Counter()
    pair_w = Counter()
    for doc in corpus:
        tokens = doc.tokens
        n_windows = max(1, len(tokens) - window_size + 1)
        total += n_windows
        for start in range(n_windows):
            present = sorted(set(tokens[start:start + window_size]))
            term_w.update(present)
            for a in range(len(present)):
                for b in range(a + 1, len(present)):
                    pair_w[(present[a], present[b])] += 1
    return WindowStats(
        window_size=window_size,
        total_windows=total,
        term_windows=dict(term_w),
        pair_windows=dict(pair_w),
    )


def pmi(stats: WindowStats, term_i: str, term_j: str) -> float | None:
    """log(p(i,j) / (p(i) p(j))) over window probabilities; None unless positive."""
    if term_i == term_j:
        raise ValueError("pmi is defined for distinct terms")
    key = (term_i, term_j) if term_i < term_j else (term_j, term_i)
    w_ij = stats.pair_windows.get(key, 0)
    if w_ij == 0:
        return None
    w_i = stats.term_windows[term_i]
    w_j = stats.term_windows[term_j]
    value = math.log((w_ij * stats.total_windows) / (w_i * w_j))
    return value if value > 0.0 else None


def tf_idf(corpus: Corpus, vocab: Vocabulary, doc: Document, term: str) -> float | None:
    """Raw count times ln(N / (1 + df)); None when the weight is not positive."""
    if term not in vocab.index:
        raise GraphBuildError(f"term {term!r} is not in the vocabulary")
    tf = doc.tokens.count(term)
    if tf == 0:
        return None
    weight = tf * math.log(len(corpus) / (1 + vocab.document_frequency[term]))
    return weight if weight > 0.0 else None


def build_graph(corpus: Corpus, vocab: Vocabulary, window_size: int,
                *, stats: WindowStats | None = None,
                require_document_edges: bool = False) -> TextGraph:
    """Assemble the full symmetric adjacency with unit diagonal.

    Documents whose every TF-IDF weight vanishes keep only their self-loop;
    their ids are recorded in ``isolated_docs`` (or raised when
    ``require_document_edges`` is set).
    """
    if len(corpus) == 0:
        raise GraphBuildError("cannot build a graph from an empty corpus")
    n_docs = len(corpus)
    n_terms = len(vocab)
    n_nodes = n_docs + n_terms
    if stats is None:
        stats = count_windows(corpus, window_size)
    elif stats.window_size != window_size:
        raise GraphBuildError("precomputed window stats use a different window size")

    rows, cols, vals = [], [], []
    isolated = []
    for k, doc in enumerate(corpus):
        has_edge = False
        for term in sorted(set(doc.tokens)):
            weight = tf_idf(corpus, vocab, doc, term)
            if weight is not None:
                rows.append(k)
                cols.append(n_docs + vocab.index[term])
                vals.append(weight)
                has_edge = True
        if not has_edge:
            isolated.append(doc.id)
    if isolated and require_document_edges:
        raise GraphBuildError(
            "document(s) without a positive TF-IDF edge: " + ", ".join(isolated)
        )

    for (term_a, term_b) in stats.pair_windows:
        value = pmi(stats, term_a, term_b)
        if value is not None:
            ia = n_docs + vocab.index[term_a]
            ib = n_docs + vocab.index[term_b]
            rows.append(min(ia, ib))
            cols.append(max(ia, ib))
            vals.append(value)

    # Mirror the strict upper triangle, then add the unit diagonal.
    upper_rows = np.array(rows, dtype=np.int64)
    upper_cols = np.array(cols, dtype=np.int64)
    upper_vals = np.array(vals, dtype=np.float64)
    diag = np.arange(n_nodes, dtype=np.int64)
    all_rows = np.concatenate([upper_rows, upper_cols, diag])
    all_cols = np.concatenate([upper_cols, upper_rows, diag])
    all_vals = np.concatenate([upper_vals, upper_vals, np.ones(n_nodes)])
    adjacency = SparseMatrix.from_coo(all_rows, all_cols, all_vals, (n_nodes, n_nodes))

    classes = corpus.labels
    class_index = {c: i for i, c in enumerate(classes)}
    labels = np.array([class_index[d.label] for d in corpus], dtype=np.int64)
    train_mask = np.array([d.split == "train" for d in corpus], dtype=bool)
    val_mask = np.array([d.split == "val" for d in corpus], dtype=bool)
    test_mask = np.array([d.split == "test" for d in corpus], dtype=bool)
    assert np.all(train_mask.astype(int) + val_mask.astype(int) + test_mask.astype(int) == 1)

    return TextGraph(
        n_docs=n_docs,
        n_terms=n_terms,
        window_size=window_size,
        adjacency=adjacency,
        labels=labels,
        train_mask=train_mask,
        val_mask=val_mask,
        test_mask=test_mask,
        classes=classes,
        doc_ids=tuple(d.id for d in corpus),
        terms=vocab.terms,
        isolated_docs=tuple(isolated),
    )


def normalize_adjacency(graph: TextGraph) -> SparseMatrix:
    """D^{-1/2} (A + I) D^{-1/2} with degrees from the weighted A + I."""
    adj = graph.adjacency
    n = adj.shape[0]
    rows, cols, vals = adj.to_coo()
    diag_entries = (rows == cols) & (vals == 1.0)
    if int(diag_entries.sum()) != n:
        raise GraphBuildError("adjacency must carry a unit diagonal")
    idx = np.arange(n, dtype=np.int64)
    a_tilde = SparseMatrix.from_coo(
        np.concatenate([rows, idx]),
        np.concatenate([cols, idx]),
        np.concatenate([vals, np.ones(n)]),
        (n, n),
    )
    degrees = a_tilde.row_sums()
    assert np.all(degrees > 0.0), "unit diagonal guarantees positive degrees"
    d_inv_sqrt = 1.0 / np.sqrt(degrees)
    scaled = a_tilde.data * d_inv_sqrt[a_tilde.row_ids()] * d_inv_sqrt[a_tilde.indices]
    return SparseMatrix((n, n), a_tilde.indptr, a_tilde.indices, scaled)


def save_graph(graph: TextGraph, path) -> None:
    """Versioned container: JSON header line, then little-endian arrays.

    The COO triple list stores the upper triangle plus diagonal in row-major
    order (ties by column), followed by labels and the three masks.
    """
    rows, cols, vals = graph.adjacency.to_coo()
    keep = cols >= rows
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    header = {
        "format": GRAPH_FORMAT,
        "format_version": GRAPH_FORMAT_VERSION,
        "n_docs": graph.n_docs,
        "n_terms": graph.n_terms,
        "window_size": graph.window_size,
        "n_entries": int(len(vals)),
        "classes": list(graph.classes),
        "doc_ids": list(graph.doc_ids),
        "terms": list(graph.terms),
        "isolated_docs": list(graph.isolated_docs),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":"),
                            ensure_ascii=False).encode("utf-8") + b"\n")
        fh.write(rows.astype("<i8").tobytes())
        fh.write(cols.astype("<i8").tobytes())
        fh.write(vals.astype("<f8").tobytes())
        fh.write(graph.labels.astype("<i8").tobytes())
        for mask in (graph.train_mask, graph.val_mask, graph.test_mask):
            fh.write(mask.astype("|u1").tobytes())


def load_graph(path) -> TextGraph:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise GraphBuildError(f"{path}: not a graph file") from exc
        if header.get("format") != GRAPH_FORMAT:
            raise GraphBuildError(f"{path}: not a graph file")
        if header.get("format_version") != GRAPH_FORMAT_VERSION:
            raise GraphBuildError(f"{path}: unsupported graph format version")
        n_docs = header["n_docs"]
        n_terms = header["n_terms"]
        n_nodes = n_docs + n_terms
        n_entries = header["n_entries"]

        def read_array(dtype, count):
            raw = fh.read(np.dtype(dtype).itemsize * count)
            if len(raw) != np.dtype(dtype).itemsize * count:
                raise GraphBuildError(f"{path}: truncated graph file")
            return np.frombuffer(raw, dtype=dtype).copy()

        rows = read_array("<i8", n_entries)
        cols = read_array("<i8", n_entries)
        vals = read_array("<f8", n_entries)
        labels = read_array("<i8", n_docs)
        train_mask = read_array("|u1", n_docs).astype(bool)
        val_mask = read_array("|u1", n_docs).astype(bool)
        test_mask = read_array("|u1", n_docs).astype(bool)

    off_diag = rows != cols
    all_rows = np.concatenate([rows, cols[off_diag]])
    all_cols = np.concatenate([cols, rows[off_diag]])
    all_vals = np.concatenate([vals, vals[off_diag]])
    adjacency = SparseMatrix.from_coo(all_rows, all_cols, all_vals, (n_nodes, n_nodes))
    return TextGraph(
        n_docs=n_docs,
        n_terms=n_terms,
        window_size=header["window_size"],
        adjacency=adjacency,
        labels=labels,
        train_mask=train_mask,
        val_mask=val_mask,
        test_mask=test_mask,
        classes=tuple(header["classes"]),
        doc_ids=tuple(header["doc_ids"]),
        terms=tuple(header["terms"]),
        isolated_docs=tuple(header["isolated_docs"]),
    )
