"""Unit-as-document bag of words: namespaced terms, vocabulary, ltc TF-IDF
vectors and cosine similarity."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .tokenize import TokenStream

log = logging.getLogger(__name__)


def term_name(channel_id: str, token: str) -> str:
    return f"{channel_id}:{token}"


def split_term(term: str) -> tuple[str, str]:
    channel, _, token = term.rpartition(":")
    return channel, token


@dataclass(frozen=True, eq=False)
class Document:
    unit_id: str
    terms: Counter
    section_counts: dict

    @property
    def n_terms(self) -> int:
        return sum(self.terms.values())


@dataclass(frozen=True, eq=False)
class Vocabulary:
    terms: tuple[str, ...]
    df: np.ndarray
    n_docs: int

    def __post_init__(self):
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.terms)})

    def __len__(self) -> int:
        return len(self.terms)

    def __contains__(self, term: str) -> bool:
        return term in self._index

    def id(self, term: str) -> int | None:
        return self._index.get(term)

    def to_dict(self) -> dict:
        return {"terms": list(self.terms), "df": self.df.tolist(), "n_docs": self.n_docs}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(tuple(d["terms"]), np.array(d["df"], dtype=np.int64), int(d["n_docs"]))


@dataclass(frozen=True, eq=False)
class BowVector:
    unit_id: str
    indices: np.ndarray
    weights: np.ndarray
    dim: int

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.weights))

    def dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.weights
        return out

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.indices.tolist(), self.weights.tolist()))


def build_documents(streams_by_unit: Mapping[str, Sequence[TokenStream]] | Sequence[Sequence[TokenStream]]) -> list[Document]:
    """One document per unit; each channel's tokens form a namespaced section."""
    if isinstance(streams_by_unit, Mapping):
        groups = list(streams_by_unit.items())
    else:
        groups = [(s[0].unit_id if s else str(i), s) for i, s in enumerate(streams_by_unit)]
    channels = None
    docs = []
    for unit_id, streams in groups:
        chans = [s.channel_id for s in streams]
        if channels is None:
            channels = chans
        elif set(chans) != set(channels):
            missing = sorted(set(channels) - set(chans))
            raise ValueError(f"unit {unit_id}: channel set {chans} differs (missing {missing})")
        terms: Counter = Counter()
        sections = {}
        for s in streams:
            terms.update(term_name(s.channel_id, t) for t in s.tokens)
            sections[s.channel_id] = len(s.tokens)
        if not terms:
            log.warning("unit %s produced an empty document", unit_id)
        docs.append(Document(str(unit_id), terms, sections))
    return docs


def build_vocabulary(docs: Sequence[Document], min_df: int = 1) -> Vocabulary:
    """Terms of the training documents, sorted, with their document frequencies."""
    df: Counter = Counter()
    for d in docs:
        df.update(d.terms.keys())
    terms = tuple(sorted(t for t, c in df.items() if c >= min_df))
    return Vocabulary(terms, np.array([df[t] for t in terms], dtype=np.int64), len(docs))


def tfidf_ltc(doc: Document, vocab: Vocabulary, n_train: int | None = None) -> BowVector:
    """``log(tf + 1) * log(N / df)`` per in-vocabulary term, then L2-normalized.

    Terms unseen in training are ignored; a term in every training document
    gets weight 0; an all-zero vector stays zero.
    """
    n_train = vocab.n_docs if n_train is None else n_train
    idx, w = [], []
    for term, tf in doc.terms.items():
        j = vocab.id(term)
        if j is None:
            continue
        weight = math.log(tf + 1.0) * math.log(n_train / vocab.df[j])
        if weight != 0.0:
            idx.append(j)
            w.append(weight)
    order = np.argsort(idx)
    idx = np.asarray(idx, dtype=np.int64)[order]
    w = np.asarray(w, dtype=float)[order]
    norm = float(np.linalg.norm(w))
    if norm > 0:
        w = w / norm
    return BowVector(doc.unit_id, idx, w, len(vocab))


def vectorize(docs: Sequence[Document], vocab: Vocabulary) -> list[BowVector]:
    return [tfidf_ltc(d, vocab) for d in docs]


def to_csr(vectors: Sequence[BowVector], dim: int | None = None) -> sp.csr_matrix:
    dim = vectors[0].dim if dim is None and vectors else (dim or 0)
    indptr = np.concatenate([[0], np.cumsum([len(v.indices) for v in vectors])]).astype(np.int64)
    indices = np.concatenate([v.indices for v in vectors]) if vectors else np.zeros(0, dtype=np.int64)
    data = np.concatenate([v.weights for v in vectors]) if vectors else np.zeros(0)
    return sp.csr_matrix((data, indices, indptr), shape=(len(vectors), dim))


def cosine_similarity_matrix(vectors: Sequence[BowVector]) -> np.ndarray:
    """Pairwise dot products of unit-norm vectors (cosine similarity)."""
    X = to_csr(vectors)
    S = (X @ X.T).toarray()
    return 0.5 * (S + S.T)


def write_bow_csv(vectors: Sequence[BowVector], vocab: Vocabulary, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["unit_id", "term", "weight"])
        for v in vectors:
            for j, x in zip(v.indices, v.weights):
                w.writerow([v.unit_id, vocab.terms[j], repr(float(x))])


def write_matrix_csv(matrix: np.ndarray, labels: Sequence[str], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["unit_id", *labels])
        for name, row in zip(labels, matrix):
            w.writerow([name, *[repr(float(x)) for x in row]])
