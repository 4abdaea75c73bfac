"""Disagreement mining: turn the gap between the two retrieval legs into
training triples.

Run the same query through a vector-heavy and a lexical-heavy fusion and
look at who makes the top slice of one but not the other. A candidate
only the vector leg surfaces is exactly the kind of semantic look-alike
a dense model cannot tell apart from the real thing, so it becomes a
hard negative labeled dense_blind_spot; the mirror case is labeled
lexical_blind_spot. The positive is the chunk the pseudo-query was
generated from, so no human labels are involved anywhere.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from .errors import MissingPositiveError
from .retrieval import Searcher
from .textindex import TextIndex, tokenize_stem

VEC_HEAVY = (0.95, 0.05)
FTS_HEAVY = (0.05, 0.95)

DIRECTION_DENSE = "dense_blind_spot"
DIRECTION_LEXICAL = "lexical_blind_spot"

_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+")

MAX_QUERY_WORDS = 64


@dataclass(frozen=True)
class DisagreementTriple:
    query: str
    positive: str
    negative: str
    direction: str
    source: str

    def to_json(self) -> dict[str, Any]:
        return {
            "query": self.query,
            "positive": self.positive,
            "negative": self.negative,
            "direction": self.direction,
            "source": self.source,
        }


@dataclass(frozen=True)
class DisagreementRecord:
    query: str
    positive_chunk_id: int
    vec_heavy_top: tuple[int, ...]
    fts_heavy_top: tuple[int, ...]
    disagreement_count: int

    @property
    def disagrees(self) -> bool:
        return self.disagreement_count > 0


@dataclass
class MiningReport:
    records: list[DisagreementRecord]
    triples: list[DisagreementTriple]
    stats: dict[str, Any]


def _truncate_words(sentence: str, max_words: int = MAX_QUERY_WORDS) -> str:
    words = sentence.split()
    if len(words) <= max_words:
        return sentence.strip()
    return " ".join(words[:max_words])


def generate_pseudo_queries(
    text: str, text_index: TextIndex, max_queries: int = 2
) -> list[str]:
    """Up to two queries per chunk: the opening sentence, and the
    sentence whose terms are rarest corpus-wide (highest mean idf).

    Both are capped at 64 words; duplicates collapse. The opening
    sentence approximates what a topic-level query looks like, the
    rare-term sentence what a detail-level query looks like.
    """
    sentences = [s.strip() for s in _SENTENCE_RE.split(text.strip()) if s.strip()]
    queries: list[str] = []
    if not sentences:
        return queries
    first = _truncate_words(sentences[0])
    if tokenize_stem(first):
        queries.append(first)
    best: str | None = None
    best_idf = -1.0
    for sentence in sentences:
        stems = tokenize_stem(sentence)
        if not stems:
            continue
        mean = sum(text_index.term_idf(t) for t in stems) / len(stems)
        if mean > best_idf:
            best_idf = mean
            best = sentence
    if best is not None:
        candidate = _truncate_words(best)
        if candidate not in queries and tokenize_stem(candidate):
            queries.append(candidate)
    return queries[:max_queries]


def mine_disagreement(
    searcher: Searcher,
    query: str,
    positive_chunk_id: int,
    *,
    top_k: int = 10,
    triple_depth: int = 5,
) -> tuple[DisagreementRecord, list[DisagreementTriple]]:
    """Contrast the two single-leg-heavy fusions for one query.

    Records the top_k of both; mines triples from the asymmetric part of
    the top triple_depth slice. Negatives equal to the positive by
    content digest are skipped (lexically duplicated chunks would
    otherwise poison the triple).
    """
    batch = searcher.store.get_chunks([positive_chunk_id])
    if batch.missing:
        raise MissingPositiveError(f"no chunk with id {positive_chunk_id}")
    positive = batch.records[0]
    doc = searcher.store.get_document(positive.doc_id)
    source = doc.source_uri if doc else ""

    vec_ids = [
        cid for cid, _ in searcher.fused_candidates(query, *VEC_HEAVY, n=top_k)
    ]
    fts_ids = [
        cid for cid, _ in searcher.fused_candidates(query, *FTS_HEAVY, n=top_k)
    ]
    record = DisagreementRecord(
        query=query,
        positive_chunk_id=positive_chunk_id,
        vec_heavy_top=tuple(vec_ids),
        fts_heavy_top=tuple(fts_ids),
        disagreement_count=len(set(vec_ids) ^ set(fts_ids)),
    )

    vec_slice = vec_ids[:triple_depth]
    fts_slice = fts_ids[:triple_depth]
    candidates: list[tuple[int, str]] = []
    for cid in vec_slice:
        if cid not in set(fts_slice):
            candidates.append((cid, DIRECTION_DENSE))
    for cid in fts_slice:
        if cid not in set(vec_slice):
            candidates.append((cid, DIRECTION_LEXICAL))

    triples: list[DisagreementTriple] = []
    seen_digests: set[str] = set()
    if candidates:
        neg_batch = searcher.store.get_chunks([cid for cid, _ in candidates])
        by_id = {r.chunk_id: r for r in neg_batch.records}
        for cid, direction in candidates:
            rec = by_id.get(cid)
            if rec is None:
                continue
            if rec.content_digest == positive.content_digest:
                continue
            if rec.content_digest in seen_digests:
                continue
            seen_digests.add(rec.content_digest)
            triples.append(
                DisagreementTriple(
                    query=query,
                    positive=positive.text,
                    negative=rec.text,
                    direction=direction,
                    source=source,
                )
            )
    return record, triples


def mine_corpus(
    searcher: Searcher,
    *,
    max_queries_per_chunk: int = 2,
    top_k: int = 10,
    triple_depth: int = 5,
    chunk_limit: int | None = None,
) -> MiningReport:
    """Mine every chunk's pseudo-queries across the whole store.

    The summary reports the disagreement share both ways it is usually
    quoted: pooled over all queries, and as the mean of per-chunk
    shares; on a corpus where some chunks spawn one query and some two,
    the two numbers genuinely differ.
    """
    records: list[DisagreementRecord] = []
    triples: list[DisagreementTriple] = []
    seen_queries: set[str] = set()
    per_chunk_shares: list[float] = []
    queries_total = 0
    queries_with = 0

    chunks = list(searcher.store.iter_chunks())
    if chunk_limit is not None:
        chunks = chunks[:chunk_limit]
    for chunk in chunks:
        queries = generate_pseudo_queries(
            chunk.text, searcher.text_index, max_queries_per_chunk
        )
        ran = 0
        disagreed = 0
        for query in queries:
            if query in seen_queries:
                continue
            seen_queries.add(query)
            record, new_triples = mine_disagreement(
                searcher,
                query,
                chunk.chunk_id,
                top_k=top_k,
                triple_depth=triple_depth,
            )
            records.append(record)
            triples.extend(new_triples)
            ran += 1
            queries_total += 1
            if record.disagrees:
                disagreed += 1
                queries_with += 1
        if ran:
            per_chunk_shares.append(disagreed / ran)

    by_direction = {DIRECTION_DENSE: 0, DIRECTION_LEXICAL: 0}
    for t in triples:
        by_direction[t.direction] += 1
    stats = {
        "queries": queries_total,
        "queries_with_disagreement": queries_with,
        "share_queries_with_disagreement": (
            queries_with / queries_total if queries_total else 0.0
        ),
        "mean_share_per_chunk": (
            sum(per_chunk_shares) / len(per_chunk_shares)
            if per_chunk_shares
            else 0.0
        ),
        "triples": len(triples),
        "triples_dense_blind_spot": by_direction[DIRECTION_DENSE],
        "triples_lexical_blind_spot": by_direction[DIRECTION_LEXICAL],
    }
    return MiningReport(records=records, triples=triples, stats=stats)


def export_triples(
    triples: Sequence[DisagreementTriple], path: str | Path
) -> int:
    """Write triples as JSONL; returns the line count."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for t in triples:
            fh.write(json.dumps(t.to_json(), ensure_ascii=False))
            fh.write("\n")
    return len(triples)


def load_triples(path: str | Path) -> list[DisagreementTriple]:
    out: list[DisagreementTriple] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            out.append(
                DisagreementTriple(
                    query=raw["query"],
                    positive=raw["positive"],
                    negative=raw["negative"],
                    direction=raw["direction"],
                    source=raw.get("source", ""),
                )
            )
    return out
