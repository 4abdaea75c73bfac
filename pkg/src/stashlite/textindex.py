"""Lexical leg: tokenizer, literal query compiler, and a BM25 index.

The index is an in-memory inverted file rebuilt lazily from the store's
persisted term streams whenever the store's content epoch moves. Queries
are compiled to a flat bag of stemmed terms and matched literally; there
is no query mini-language, which is what makes adversarial input inert.
"""

from __future__ import annotations

import heapq
import math
import re
from dataclasses import dataclass
from typing import TYPE_CHECKING

from .errors import EmptyIndexError
from .porter import stem

if TYPE_CHECKING:
    from .store import Store

# word characters minus underscore; lowercasing happens before matching
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

BM25_K1 = 1.2
BM25_B = 0.75


def tokenize(text: str) -> list[str]:
    """Lowercase and split on every non-alphanumeric run."""
    return _TOKEN_RE.findall(text.lower())


def tokenize_stem(text: str) -> list[str]:
    """Tokenize, then Porter-stem each token. Order and repeats kept."""
    return [stem(tok) for tok in tokenize(text)]


@dataclass(frozen=True)
class CompiledQuery:
    """A query reduced to literal stemmed terms, unique, first-seen order.

    Multi-term queries are a disjunction: scoring sums over whichever
    terms match. Operator-looking input ("OR", "NEAR(", quotes, minus)
    is either split away as punctuation or becomes an ordinary literal
    term, so no input string can change match semantics.
    """

    raw: str
    terms: tuple[str, ...]


def compile_query(raw: str) -> CompiledQuery:
    seen: dict[str, None] = {}
    for term in tokenize_stem(raw):
        seen.setdefault(term, None)
    return CompiledQuery(raw=raw, terms=tuple(seen))


def idf(n_chunks: int, doc_freq: int) -> float:
    """Okapi-style smoothed idf; non-negative for doc_freq <= n_chunks."""
    return math.log(1.0 + (n_chunks - doc_freq + 0.5) / (doc_freq + 0.5))


class TextIndex:
    """BM25 over chunk term streams, keyed to the store's content epoch.

    Rebuilds are whole-index: stores here are desk-scale (~10^5 chunks at
    most) and a full rebuild is cheaper to reason about than incremental
    maintenance. Telemetry writes (access counters, search events) do not
    move the epoch, so searching never invalidates the index it uses.
    """

    def __init__(self, store: "Store", k1: float = BM25_K1, b: float = BM25_B):
        self._store = store
        self._k1 = k1
        self._b = b
        self._epoch = -1
        # term -> list of (chunk_id, term_frequency), chunk_id ascending
        self._postings: dict[str, list[tuple[int, int]]] = {}
        self._lengths: dict[int, int] = {}
        self._avgdl = 0.0
        self._corpus_mean_idf = 0.0

    # -- build ---------------------------------------------------------

    def _ensure(self) -> None:
        epoch = self._store.content_epoch
        if epoch != self._epoch:
            self._build()
            self._epoch = epoch

    def _build(self) -> None:
        counts: dict[str, dict[int, int]] = {}
        lengths: dict[int, int] = {}
        for chunk_id, terms in self._store.fts_rows():
            toks = terms.split() if terms else []
            lengths[chunk_id] = len(toks)
            for tok in toks:
                per_chunk = counts.setdefault(tok, {})
                per_chunk[chunk_id] = per_chunk.get(chunk_id, 0) + 1
        self._postings = {
            term: sorted(per_chunk.items()) for term, per_chunk in counts.items()
        }
        self._lengths = lengths
        n = len(lengths)
        self._avgdl = (sum(lengths.values()) / n) if n else 0.0
        if self._postings:
            self._corpus_mean_idf = sum(
                idf(n, len(plist)) for plist in self._postings.values()
            ) / len(self._postings)
        else:
            self._corpus_mean_idf = 0.0

    # -- introspection --------------------------------------------------

    @property
    def size(self) -> int:
        self._ensure()
        return len(self._lengths)

    @property
    def vocabulary_size(self) -> int:
        self._ensure()
        return len(self._postings)

    def document_frequency(self, term: str) -> int:
        """Chunk-level df of an already-stemmed term."""
        self._ensure()
        return len(self._postings.get(term, ()))

    def term_idf(self, term: str) -> float:
        """idf of an already-stemmed term; unseen terms get the df=0 value."""
        self._ensure()
        return idf(len(self._lengths), self.document_frequency(term))

    def corpus_mean_idf(self) -> float:
        """Mean idf across the index vocabulary, cached per build."""
        self._ensure()
        return self._corpus_mean_idf

    def mean_idf(self, raw_query: str) -> float:
        """Mean idf over the query's stemmed token stream, repeats kept.

        Empty queries (no indexable tokens) return 0.0.
        """
        self._ensure()
        if not self._lengths:
            raise EmptyIndexError("text index is empty")
        toks = tokenize_stem(raw_query)
        if not toks:
            return 0.0
        n = len(self._lengths)
        return sum(idf(n, self.document_frequency(t)) for t in toks) / len(toks)

    # -- search ----------------------------------------------------------

    def bm25_search(self, query: CompiledQuery, n: int) -> list[tuple[int, float]]:
        """Top-n (chunk_id, bm25_score), score descending, ties by id.

        Unknown terms contribute nothing; a query with no matching term
        returns an empty list. An empty index is an error: the caller
        cannot distinguish "nothing matched" from "nothing indexed".
        """
        self._ensure()
        if not self._lengths:
            raise EmptyIndexError("text index is empty")
        if n <= 0 or not query.terms:
            return []
        n_chunks = len(self._lengths)
        k1, b, avgdl = self._k1, self._b, self._avgdl
        scores: dict[int, float] = {}
        for term in query.terms:
            plist = self._postings.get(term)
            if not plist:
                continue
            w = idf(n_chunks, len(plist))
            for chunk_id, tf in plist:
                dl = self._lengths[chunk_id]
                denom = tf + k1 * (1.0 - b + b * dl / avgdl)
                gain = w * tf * (k1 + 1.0) / denom
                scores[chunk_id] = scores.get(chunk_id, 0.0) + gain
        top = heapq.nsmallest(n, scores.items(), key=lambda kv: (-kv[1], kv[0]))
        return top
