"""Corpus ingestion: tokenization, stopword filtering, vocabulary, statistics.

Input is UTF-8 JSON lines, one document per line:
``{"id": str, "text": str, "label": str, "split": "train"|"val"|"test"}``.
Word-level input is expected pre-segmented (single spaces between tokens);
no segmenter ships with this package.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

VALID_SPLITS = ("train", "val", "test")
VALID_MODES = ("char", "word")

CORPUS_FORMAT = "textgat-corpus"
CORPUS_FORMAT_VERSION = 1

_REQUIRED_FIELDS = ("id", "text", "label", "split")


class CorpusError(ValueError):
    """Malformed corpus input or a document that cannot enter a graph."""


@dataclass(frozen=True)
class Document:
    id: str
    raw_text: str
    tokens: tuple[str, ...]
    label: str
    split: str


@dataclass(frozen=True)
class Corpus:
    documents: tuple[Document, ...]
    mode: str

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    @property
    def labels(self) -> tuple[str, ...]:
        """Distinct class names, sorted."""
        return tuple(sorted({d.label for d in self.documents}))


@dataclass(frozen=True)
class Vocabulary:
    """Dense term indexing over the whole corpus (all splits; transductive)."""

    terms: tuple[str, ...]
    index: dict
    document_frequency: dict

    def __len__(self) -> int:
        return len(self.terms)


@dataclass(frozen=True)
class CorpusStats:
    n_docs: int
    min_len: int
    max_len: int
    mean_len: float
    class_counts: dict

    def to_dict(self) -> dict:
        return {
            "n_docs": self.n_docs,
            "min_len": self.min_len,
            "max_len": self.max_len,
            "mean_len": self.mean_len,
            "class_counts": dict(sorted(self.class_counts.items())),
        }


def _keep_token(token: str) -> bool:
    # Pure punctuation/symbol tokens carry no graph signal; keep a token
    # only if it contains at least one letter, ideograph, or digit.
    return any(ch.isalnum() for ch in token)


def tokenize(text: str, mode: str) -> tuple[str, ...]:
    """char: every non-whitespace character; word: split on single spaces."""
    if mode not in VALID_MODES:
        raise CorpusError(f"unknown tokenization mode: {mode!r}")
    if mode == "char":
        raw = [ch for ch in text if not ch.isspace()]
    else:
        raw = [tok for tok in text.split(" ") if tok]
    return tuple(tok for tok in raw if _keep_token(tok))


def ingest(path, mode: str) -> Corpus:
    """Parse a JSON-lines corpus file and tokenize every document."""
    if mode not in VALID_MODES:
        raise CorpusError(f"unknown tokenization mode: {mode!r}")
    path = Path(path)
    documents = []
    seen_ids = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise CorpusError(f"line {lineno}: expected a JSON object")
            for field in _REQUIRED_FIELDS:
                if field not in record or not isinstance(record[field], str):
                    raise CorpusError(f"line {lineno}: missing or non-string field {field!r}")
            doc_id = record["id"]
            if doc_id in seen_ids:
                raise CorpusError(f"line {lineno}: duplicate document id {doc_id!r}")
            seen_ids.add(doc_id)
            if record["split"] not in VALID_SPLITS:
                raise CorpusError(
                    f"line {lineno}: unknown split {record['split']!r} "
                    f"(expected one of {', '.join(VALID_SPLITS)})"
                )
            tokens = tokenize(record["text"], mode)
            if not tokens:
                raise CorpusError(
                    f"line {lineno}: document {doc_id!r} has no tokens after preprocessing"
                )
            documents.append(
                Document(
                    id=doc_id,
                    raw_text=record["text"],
                    tokens=tokens,
                    label=record["label"],
                    split=record["split"],
                )
            )
    return Corpus(documents=tuple(documents), mode=mode)


def load_stoplist(path) -> frozenset:
    """One term per line; blank lines ignored."""
    terms = set()
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            term = line.strip()
            if term:
                terms.add(term)
    return frozenset(terms)


def remove_stopwords(corpus: Corpus, stoplist) -> Corpus:
    """Delete stoplist tokens everywhere; a document emptied by this is an error."""
    stoplist = frozenset(stoplist)
    if not stoplist:
        return corpus
    filtered = []
    emptied = []
    for doc in corpus:
        tokens = tuple(tok for tok in doc.tokens if tok not in stoplist)
        if not tokens:
            emptied.append(doc.id)
        filtered.append(
            Document(doc.id, doc.raw_text, tokens, doc.label, doc.split)
        )
    if emptied:
        raise CorpusError(
            "stopword removal emptied document(s): " + ", ".join(emptied)
        )
    return Corpus(documents=tuple(filtered), mode=corpus.mode)


def build_vocabulary(corpus: Corpus) -> Vocabulary:
    """Index the distinct tokens of all documents (sorted) with document frequencies."""
    if len(corpus) == 0:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    df = Counter()
    for doc in corpus:
        df.update(set(doc.tokens))
    terms = tuple(sorted(df))
    return Vocabulary(
        terms=terms,
        index={t: i for i, t in enumerate(terms)},
        document_frequency=dict(df),
    )


def corpus_stats(corpus: Corpus) -> CorpusStats:
    if len(corpus) == 0:
        raise CorpusError("cannot compute stats for an empty corpus")
    lengths = [len(d.tokens) for d in corpus]
    counts = Counter(d.label for d in corpus)
    return CorpusStats(
        n_docs=len(corpus),
        min_len=min(lengths),
        max_len=max(lengths),
        mean_len=sum(lengths) / len(lengths),
        class_counts=dict(counts),
    )


def write_corpus(corpus: Corpus, path) -> None:
    """Serialize to the canonical tokenized form (deterministic bytes)."""
    header = {
        "format": CORPUS_FORMAT,
        "format_version": CORPUS_FORMAT_VERSION,
        "mode": corpus.mode,
        "n_docs": len(corpus),
    }
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for doc in corpus:
            record = {
                "id": doc.id,
                "text": doc.raw_text,
                "tokens": list(doc.tokens),
                "label": doc.label,
                "split": doc.split,
            }
            fh.write(json.dumps(record, sort_keys=True, separators=(",", ":"),
                                ensure_ascii=False) + "\n")


def read_corpus(path) -> Corpus:
    """Load a canonical corpus written by :func:`write_corpus`."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        first = fh.readline()
        try:
            header = json.loads(first)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path}: not a canonical corpus file") from exc
        if not isinstance(header, dict) or header.get("format") != CORPUS_FORMAT:
            raise CorpusError(
                f"{path}: not a canonical corpus file (run the ingest command first)"
            )
        if header.get("format_version") != CORPUS_FORMAT_VERSION:
            raise CorpusError(f"{path}: unsupported corpus format version")
        documents = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            record = json.loads(line)
            documents.append(
                Document(
                    id=record["id"],
                    raw_text=record["text"],
                    tokens=tuple(record["tokens"]),
                    label=record["label"],
                    split=record["split"],
                )
            )
    return Corpus(documents=tuple(documents), mode=header["mode"])
