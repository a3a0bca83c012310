"""Term-based TF-IDF index with cosine scoring, the substrate of the CBF engine.

Weighting scheme (fixed so results are reproducible and checkable):
  tf      = raw term count
  idf(t)  = ln((N + 1) / (df_t + 1)) + 1          (df_t = 0 for unseen terms)
  w(t, .) = tf * idf(t), queries weighted with corpus idf
  score   = cosine of the two weight vectors

Query terms absent from the corpus contribute to the query norm but never
to the dot product. All per-document sums iterate terms in sorted order,
which makes scores bit-for-bit reproducible across runs and equal to a
brute-force recomputation.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .errors import (
    CorpusFormatError,
    DuplicateDocIdError,
    EmptyCorpusError,
    UnknownDocError,
    UntokenizableDocumentError,
    ValidationError,
)
from .model import Document

STOPWORDS = frozenset(
    "a an and are as at be by for from in is it of on or the to with".split()
)
MIN_TOKEN_LEN = 2

_TOKEN = re.compile(r"[^\W_]+")  # runs of alphanumerics; underscore splits too


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumerics, drop short tokens and stopwords."""
    return [
        token
        for token in _TOKEN.findall(text.lower())
        if len(token) >= MIN_TOKEN_LEN and token not in STOPWORDS
    ]


@dataclass
class CorpusIndex:
    """Immutable after build; concurrent reads need no synchronization."""

    doc_count: int
    postings: dict[str, dict[str, int]]  # term -> {doc_id: raw term count}
    doc_norms: dict[str, float]  # doc_id -> L2 norm of its TF-IDF vector
    doc_table: dict[str, Document]

    def idf(self, term: str) -> float:
        """Smoothed inverse document frequency; > 0 even for unseen terms."""
        df = len(self.postings.get(term, ()))
        return math.log((self.doc_count + 1) / (df + 1)) + 1.0

    def document(self, doc_id: str) -> Document:
        try:
            return self.doc_table[doc_id]
        except KeyError:
            raise UnknownDocError(doc_id)

    def doc_ids(self) -> list[str]:
        return sorted(self.doc_table)

    def _query_weights(self, query_tokens: list[str]) -> tuple[dict[str, float], float]:
        if not query_tokens:
            raise ValueError("query_tokens must be non-empty")
        counts = Counter(query_tokens)
        weights = {term: counts[term] * self.idf(term) for term in sorted(counts)}
        norm = math.sqrt(sum(w * w for w in weights.values()))
        return weights, norm

    def similarity(self, query_tokens: list[str], doc_id: str) -> float:
        """Cosine of the query and document TF-IDF vectors, in [0, 1]."""
        doc_norm = self.doc_norms.get(doc_id)
        if doc_norm is None:
            raise UnknownDocError(doc_id)
        weights, query_norm = self._query_weights(query_tokens)
        dot = 0.0
        for term, query_weight in weights.items():
            tf = self.postings.get(term, {}).get(doc_id, 0)
            if tf:
                dot += query_weight * (tf * self.idf(term))
        return dot / (query_norm * doc_norm)

    def score_all(self, query_tokens: list[str]) -> dict[str, float]:
        """Cosine score for every document sharing at least one term.

        Documents absent from the result have score exactly 0.
        """
        weights, query_norm = self._query_weights(query_tokens)
        dots: dict[str, float] = {}
        for term, query_weight in weights.items():
            term_postings = self.postings.get(term)
            if not term_postings:
                continue
            idf = self.idf(term)
            for doc_id, tf in term_postings.items():
                dots[doc_id] = dots.get(doc_id, 0.0) + query_weight * (tf * idf)
        return {
            doc_id: dot / (query_norm * self.doc_norms[doc_id])
            for doc_id, dot in dots.items()
        }


def build_index(corpus: Iterable[Document]) -> CorpusIndex:
    """Two-pass build: postings first, then norms (norms need global df).

    Rejects empty corpora, duplicate ids and documents whose text
    tokenizes to nothing, so corpus counts stay auditable.
    """
    doc_table: dict[str, Document] = {}
    doc_tokens: dict[str, Counter] = {}
    postings: dict[str, dict[str, int]] = {}

    for doc in corpus:
        if doc.doc_id in doc_table:
            raise DuplicateDocIdError(doc.doc_id)
        tokens = tokenize(doc.text)
        if not tokens:
            raise UntokenizableDocumentError(doc.doc_id)
        doc_table[doc.doc_id] = doc
        doc_tokens[doc.doc_id] = Counter(tokens)

    if not doc_table:
        raise EmptyCorpusError("corpus stream yielded no documents")

    for doc_id, counts in doc_tokens.items():
        for term, tf in counts.items():
            postings.setdefault(term, {})[doc_id] = tf

    n = len(doc_table)
    doc_norms: dict[str, float] = {}
    for doc_id, counts in doc_tokens.items():
        total = 0.0
        for term in sorted(counts):
            idf = math.log((n + 1) / (len(postings[term]) + 1)) + 1.0
            weight = counts[term] * idf
            total += weight * weight
        doc_norms[doc_id] = math.sqrt(total)

    return CorpusIndex(doc_count=n, postings=postings, doc_norms=doc_norms, doc_table=doc_table)


def load_corpus_jsonl(path: str | Path) -> list[Document]:
    """Read one JSON document per line; abort on the first bad line."""
    documents = []
    with open(path, encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                raise CorpusFormatError(line_number, "blank line")
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(line_number, f"bad JSON ({exc.msg})")
            if not isinstance(raw, dict):
                raise CorpusFormatError(line_number, "line is not a JSON object")
            try:
                documents.append(
                    Document(
                        doc_id=str(raw["doc_id"]),
                        title=str(raw["title"]),
                        url=str(raw["url"]),
                        abstract=str(raw["abstract"]) if raw.get("abstract") is not None else None,
                    )
                )
            except KeyError as exc:
                raise CorpusFormatError(line_number, f"missing field {exc.args[0]!r}")
            except ValidationError as exc:
                raise CorpusFormatError(line_number, str(exc))
    return documents


def save_index(index: CorpusIndex, path: str | Path) -> None:
    """Persist the full index structure as auditable JSON."""
    payload = {
        "doc_count": index.doc_count,
        "documents": [
            {
                "doc_id": doc.doc_id,
                "title": doc.title,
                "abstract": doc.abstract,
                "url": doc.url,
            }
            for doc in (index.doc_table[doc_id] for doc_id in sorted(index.doc_table))
        ],
        "postings": {
            term: sorted(entries.items())
            for term, entries in sorted(index.postings.items())
        },
        "doc_norms": dict(sorted(index.doc_norms.items())),
    }
    Path(path).write_text(json.dumps(payload, ensure_ascii=False, indent=1), encoding="utf-8")


def load_index(path: str | Path) -> CorpusIndex:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    doc_table = {
        raw["doc_id"]: Document(
            doc_id=raw["doc_id"], title=raw["title"], url=raw["url"], abstract=raw["abstract"]
        )
        for raw in payload["documents"]
    }
    return CorpusIndex(
        doc_count=payload["doc_count"],
        postings={term: dict(entries) for term, entries in payload["postings"].items()},
        doc_norms=payload["doc_norms"],
        doc_table=doc_table,
    )
