"""Bag-of-words corpus ingestion.

Input format: UTF-8 text, one document per line, whitespace-separated
tokens. Tokens are lower-cased, stopwords (one per line in a separate file)
are removed, and the remaining types are indexed in order of first
appearance. The vocabulary sidecar has one ``index<TAB>token`` line per
type.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class BowCorpus:
    counts: np.ndarray  # (documents, vocabulary), nonnegative integers
    vocab: tuple

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or np.any(c < 0) or np.any(c != np.floor(c)):
            raise ValueError("counts must be a 2-D array of nonnegative integers")
        if c.shape[1] != len(self.vocab):
            raise ValueError("vocabulary size does not match the count matrix")

    @property
    def V(self):
        return len(self.vocab)

    def split_heldout(self, fraction=0.25, rng=None):
        """Hold out ``round(fraction * n_tokens)`` random tokens per document."""
        rng = rng if rng is not None else np.random.default_rng(0)
        counts = np.asarray(self.counts, dtype=np.int64)
        held = np.zeros_like(counts)
        for d, row in enumerate(counts):
            tokens = np.repeat(np.arange(row.size), row)
            n_held = int(round(fraction * tokens.size))
            if n_held:
                pick = rng.choice(tokens.size, size=n_held, replace=False)
                held[d] = np.bincount(tokens[pick], minlength=row.size)
        return (counts - held).astype(float), held.astype(float)


def read_stopwords(path) -> frozenset:
    text = Path(path).read_text(encoding="utf-8")
    return frozenset(w.strip().lower() for w in text.splitlines() if w.strip())


def read_corpus(path, stopwords=None) -> BowCorpus:
    stop = frozenset() if stopwords is None else frozenset(stopwords)
    index, docs = {}, []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        doc = []
        for tok in line.lower().split():
            if tok in stop:
                continue
            doc.append(index.setdefault(tok, len(index)))
        docs.append(doc)
    counts = np.zeros((len(docs), len(index)), dtype=np.int64)
    for d, doc in enumerate(docs):
        np.add.at(counts[d], doc, 1)
    vocab = tuple(sorted(index, key=index.get))
    return BowCorpus(counts, vocab)


def write_vocab(path, vocab):
    Path(path).write_text("".join(f"{i}\t{tok}\n" for i, tok in enumerate(vocab)), encoding="utf-8")


def read_vocab(path):
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        i, tok = line.split("\t")
        if int(i) != len(out):
            raise ValueError(f"{path}: vocabulary indices must be dense and ordered")
        out.append(tok)
    return tuple(out)


def bundled_corpus_paths():
    """Paths of the small corpus and stopword list shipped with the package."""
    root = resources.files("odisvi") / "data"
    return Path(str(root / "toy_corpus.txt")), Path(str(root / "stopwords.txt"))


def load_bundled_corpus() -> BowCorpus:
    corpus, stop = bundled_corpus_paths()
    return read_corpus(corpus, read_stopwords(stop))
