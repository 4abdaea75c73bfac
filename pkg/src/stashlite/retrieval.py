"""Hybrid retrieval pipeline: fuse the two legs, then filter, boost,
diversify, tier, and expand.

Stage order is fixed and every stage is a pure function over the
candidate list, which is what makes the whole ranking reproducible:

    embed -> knn + bm25 -> weights -> rrf_fuse -> distance_cutoff
          -> recency_boost -> mmr_dedup -> relevance_tier -> expand_context

Scores never leave the pipeline: the result carries the boosted fusion
score, per-leg ranks, and the vector distance as diagnostics.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Iterable, Sequence

import numpy as np

from .embedder import EmbeddingProvider
from .errors import DimensionMismatchError, EmptyQueryError, StoreError
from .observability import (
    ELIM_BELOW_K,
    ELIM_CUTOFF,
    ELIM_MMR_STOP,
    SlowQueryLog,
    StageTiming,
)
from .store import ChunkRecord, SearchEvent, Store
from .textindex import TextIndex, compile_query
from .vecindex import VecIndex

TIER_HIGH = "high"
TIER_MEDIUM = "medium"
TIER_LOW = "low"

# best-distance boundaries (inclusive upper edge of each tier)
TIER_HIGH_MAX = 0.95
TIER_MEDIUM_MAX = 0.98

MODES = ("hybrid", "vector", "fts")


@dataclass(frozen=True)
class FusionConfig:
    """Every knob of the ranking pipeline, with the shipped defaults."""

    rrf_k: int = 60
    w_vec: float = 0.6
    w_fts: float = 0.4
    adaptive: bool = True
    w_fts_min: float = 0.2
    w_fts_max: float = 0.6
    idf_midpoint: float | None = None  # None: corpus mean idf at build
    idf_slope: float = 1.0
    cutoff_multiplier: float = 1.15
    long_query_multiplier: float = 5.0
    long_query_words: int = 50
    candidate_pool: int = 50
    mmr_lambda: float = 0.5
    recency_boost: float = 0.0
    recency_decay_rate: float = 0.05
    context_window: int = 1

    @classmethod
    def from_mapping(cls, raw: dict[str, Any]) -> "FusionConfig":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in raw.items() if k in known})


# ---------------------------------------------------------------------------
# pure ranking primitives
# ---------------------------------------------------------------------------

def rrf_fuse(
    vec_ranking: Sequence[int],
    fts_ranking: Sequence[int],
    *,
    k: int = 60,
    w_vec: float = 0.6,
    w_fts: float = 0.4,
) -> list[tuple[int, float]]:
    """Weighted reciprocal rank fusion of two id rankings.

    score(c) = w_vec / (k + rank_vec(c)) + w_fts / (k + rank_fts(c)),
    ranks 1-based, absent legs contribute nothing. Returns (id, score)
    sorted by score descending, ties by ascending id.
    """
    scores: dict[int, float] = {}
    for rank, cid in enumerate(vec_ranking, start=1):
        scores[cid] = scores.get(cid, 0.0) + w_vec / (k + rank)
    for rank, cid in enumerate(fts_ranking, start=1):
        scores[cid] = scores.get(cid, 0.0) + w_fts / (k + rank)
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))


def adaptive_fts_weight(
    mean_idf: float,
    midpoint: float,
    *,
    slope: float = 1.0,
    lo: float = 0.2,
    hi: float = 0.6,
) -> float:
    """Sigmoid interpolation of the lexical weight from query rarity.

    Rare-term queries (high mean idf) earn more lexical weight, bounded
    to [lo, hi]; mean_idf == midpoint lands exactly in the middle.
    """
    x = slope * (mean_idf - midpoint)
    # branch on sign so exp never sees a large positive argument
    if x >= 0:
        sig = 1.0 / (1.0 + math.exp(-x))
    else:
        ex = math.exp(x)
        sig = ex / (1.0 + ex)
    return lo + (hi - lo) * sig


def cutoff_multiplier_for(query_word_count: int, config: FusionConfig) -> float:
    """Short queries keep the tight multiplier; long ones get the loose one.

    Long queries produce diffuse embeddings whose distances bunch
    together, so a tight relative cutoff would throw away real matches.
    """
    if query_word_count <= config.long_query_words:
        return config.cutoff_multiplier
    return config.long_query_multiplier


def relevance_tier(best_distance: float | None) -> str:
    """Query-level confidence from the best vector distance alone."""
    if best_distance is None:
        return TIER_LOW
    if best_distance <= TIER_HIGH_MAX:
        return TIER_HIGH
    if best_distance <= TIER_MEDIUM_MAX:
        return TIER_MEDIUM
    return TIER_LOW


def recency_multiplier(
    days_ago: float, boost: float, decay_rate: float = 0.05
) -> float:
    """1 + B * e^(-rate * days); B = 0 leaves scores exactly unchanged."""
    if boost == 0.0:
        return 1.0
    return 1.0 + boost * math.exp(-decay_rate * max(0.0, days_ago))


def frequency_decay_usage(
    access_count: int,
    days_ago: float,
    decay_rate: float,
    saturation: float = 100.0,
) -> float:
    """Log-saturating usage signal from decayed access frequency.

    f = (1 + access_count) * e^(-rate * days); usage = min(1, ln(1+f) /
    ln(1+saturation)). A never-accessed, just-created chunk scores
    ln(2)/ln(101) ~= 0.1502.
    """
    f = (1.0 + access_count) * math.exp(-decay_rate * max(0.0, days_ago))
    return min(1.0, math.log1p(f) / math.log1p(saturation))


def frequency_decay_score(
    norm_score: float,
    access_count: int,
    days_ago: float,
    *,
    a: float,
    b: float,
    decay_rate: float,
    saturation: float = 100.0,
) -> float:
    """a * normalized relevance + b * usage; b = 0 is rank-preserving."""
    if b == 0.0:
        return a * norm_score
    usage = frequency_decay_usage(access_count, days_ago, decay_rate, saturation)
    return a * norm_score + b * usage


def maturity_gate(max_count: float, mean_count: float) -> float:
    """Scale factor for the usage weight, 0 until the access distribution
    is skewed enough to carry signal.

    ratio = max/mean; 0 at ratio <= 8, then linear to a 0.48 cap at
    ratio 16. Flat (young) stores get no usage influence at all.
    """
    if mean_count <= 0.0:
        return 0.0
    ratio = max_count / mean_count
    if ratio <= 8.0:
        return 0.0
    return min(0.48, (ratio - 8.0) / 8.0 * 0.48)


def minmax_normalize(scores: dict[int, float]) -> dict[int, float]:
    """Min-max to [0, 1]; a constant pool maps everything to 1.0."""
    if not scores:
        return {}
    lo = min(scores.values())
    hi = max(scores.values())
    if hi == lo:
        return {cid: 1.0 for cid in scores}
    span = hi - lo
    return {cid: (s - lo) / span for cid, s in scores.items()}


@dataclass
class MmrEntry:
    chunk_id: int
    doc_id: int
    norm_score: float
    vector: np.ndarray | None


def mmr_order(
    entries: Sequence[MmrEntry], k: int, lam: float
) -> tuple[list[int], dict[int, str]]:
    """Greedy marginal-relevance selection with a same-document penalty.

    MMR(c) = lam * norm_score(c) - (1 - lam) * max cos_sim(c, s) over
    already-selected chunks s of the same document (0 when none).
    Selection stops entirely once the best remaining value is negative:
    past that point everything left is a worse duplicate of something
    already chosen. Returns (selected ids in order, eliminations).
    """
    chosen_vecs: dict[int, list[np.ndarray]] = {}
    remaining = list(entries)
    selected: list[int] = []
    eliminations: dict[int, str] = {}
    while remaining and len(selected) < k:
        best_idx = -1
        best_key: tuple[float, int] | None = None
        best_val = -math.inf
        for i, e in enumerate(remaining):
            vecs = chosen_vecs.get(e.doc_id)
            if vecs and e.vector is not None:
                # the penalty is the raw max similarity, negative included
                penalty = max(
                    float(np.dot(e.vector.astype(np.float64), v.astype(np.float64)))
                    for v in vecs
                )
            else:
                penalty = 0.0
            val = lam * e.norm_score - (1.0 - lam) * penalty
            key = (-val, e.chunk_id)
            if best_key is None or key < best_key:
                best_key = key
                best_idx = i
                best_val = val
        if best_val < 0.0:
            for e in remaining:
                eliminations[e.chunk_id] = ELIM_MMR_STOP
            return selected, eliminations
        picked = remaining.pop(best_idx)
        selected.append(picked.chunk_id)
        if picked.vector is not None:
            chosen_vecs.setdefault(picked.doc_id, []).append(picked.vector)
    for e in remaining:
        eliminations[e.chunk_id] = ELIM_BELOW_K
    return selected, eliminations


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

@dataclass
class RankedCandidate:
    chunk_id: int
    rank_vec: int | None = None
    rank_fts: int | None = None
    distance: float | None = None
    fused_score: float = 0.0
    score: float = 0.0
    doc_id: int | None = None
    elimination: str | None = None


@dataclass(frozen=True)
class SearchResult:
    chunk_id: int
    doc_id: int
    score: float
    tier: str
    context: str
    text: str
    content_digest: str
    source_uri: str
    rank_vec: int | None
    rank_fts: int | None
    distance: float | None

    def to_json(self) -> dict[str, Any]:
        return {
            "chunk_id": self.chunk_id,
            "doc_id": self.doc_id,
            "score": self.score,
            "tier": self.tier,
            "context": self.context,
            "diagnostics": {
                "rank_vec": self.rank_vec,
                "rank_fts": self.rank_fts,
                "distance": self.distance,
                "elimination": None,
            },
        }


@dataclass
class PipelineTrace:
    query: str
    mode: str
    k: int
    mean_idf: float | None
    w_vec: float
    w_fts: float
    vec_pool: list[tuple[int, float]]
    fts_pool: list[tuple[int, float]]
    fused: list[RankedCandidate]
    eliminations: dict[int, str]
    cutoff_multiplier: float | None
    cutoff_threshold: float | None
    best_distance: float | None
    tier: str
    results: list[SearchResult]
    timings: list[StageTiming] = field(default_factory=list)
    total_ms: float = 0.0


class _StageClock:
    def __init__(self) -> None:
        self.timings: list[StageTiming] = []
        self._t0 = time.perf_counter()
        self._last = self._t0

    def lap(self, stage: str) -> None:
        now = time.perf_counter()
        self.timings.append(StageTiming(stage, (now - self._last) * 1000.0))
        self._last = now

    def total_ms(self) -> float:
        return (time.perf_counter() - self._t0) * 1000.0


class Searcher:
    """Binds a store, an embedding provider, and both index legs.

    Thread-wise this follows the store: one Searcher per thread, any
    number of them over the same file.
    """

    def __init__(
        self,
        store: Store,
        embedder: EmbeddingProvider,
        *,
        config: FusionConfig | None = None,
        slow_log: SlowQueryLog | None = None,
    ):
        if embedder.dimension != store.dimension:
            raise DimensionMismatchError(
                f"embedder dimension {embedder.dimension} does not match "
                f"store dimension {store.dimension}"
            )
        self.store = store
        self.embedder = embedder
        self.config = config or FusionConfig()
        self.text_index = TextIndex(store)
        self.vec_index = VecIndex(store)
        self.metrics = store.metrics
        self.slow_log = slow_log or SlowQueryLog()

    # -- public entry points -----------------------------------------------

    def search(
        self,
        query: str,
        k: int = 5,
        *,
        mode: str = "hybrid",
        config: FusionConfig | None = None,
        now: datetime | None = None,
        record_telemetry: bool = True,
    ) -> list[SearchResult]:
        trace = self.search_trace(
            query, k, mode=mode, config=config, now=now,
            record_telemetry=record_telemetry,
        )
        return trace.results

    def expand_context(self, chunk_id: int, window: int = 1) -> str:
        """Chunk text merged with its same-document seq neighbors."""
        batch = self.store.get_chunks([chunk_id])
        if batch.missing:
            raise StoreError(f"unknown chunk id {chunk_id}")
        rec = batch.records[0]
        neighbors = self.store.chunk_window(rec.doc_id, rec.seq, window)
        return "\n\n".join(c.text for c in neighbors)

    def fused_candidates(
        self,
        query: str,
        w_vec: float,
        w_fts: float,
        *,
        pool: int | None = None,
        n: int | None = None,
    ) -> list[tuple[int, float]]:
        """Raw weighted fusion of the two legs, no filtering stages.

        This is the mining hook: fixed weights, no adaptive reweighting,
        no cutoff, no diversity selection, no telemetry.
        """
        pool = pool or self.config.candidate_pool
        qvec = self.embedder.embed([query])[0]
        vec_pool = self.vec_index.knn(qvec, pool)
        fts_pool = self.text_index.bm25_search(compile_query(query), pool)
        fused = rrf_fuse(
            [cid for cid, _ in vec_pool],
            [cid for cid, _ in fts_pool],
            k=self.config.rrf_k,
            w_vec=w_vec,
            w_fts=w_fts,
        )
        return fused[:n] if n is not None else fused

    # -- the pipeline --------------------------------------------------------

    def search_trace(
        self,
        query: str,
        k: int = 5,
        *,
        mode: str = "hybrid",
        config: FusionConfig | None = None,
        now: datetime | None = None,
        record_telemetry: bool = True,
    ) -> PipelineTrace:
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        if not query.strip():
            raise EmptyQueryError("query is empty")
        cfg = config or self.config
        limits = self.store.limits
        limits.check("max_query_chars", len(query))
        limits.check("max_k", k)
        limits.check("max_candidate_pool", cfg.candidate_pool)
        now = now or datetime.now(timezone.utc)
        clock = _StageClock()

        qvec = self.embedder.embed([query])[0]
        clock.lap("embed")

        vec_pool: list[tuple[int, float]] = []
        if mode in ("hybrid", "vector"):
            vec_pool = self.vec_index.knn(qvec, cfg.candidate_pool)
        clock.lap("knn")

        fts_pool: list[tuple[int, float]] = []
        if mode in ("hybrid", "fts"):
            fts_pool = self.text_index.bm25_search(
                compile_query(query), cfg.candidate_pool
            )
        clock.lap("bm25")

        mean_idf: float | None = None
        if mode == "hybrid":
            if cfg.adaptive:
                mean_idf = self.text_index.mean_idf(query)
                midpoint = (
                    cfg.idf_midpoint
                    if cfg.idf_midpoint is not None
                    else self.text_index.corpus_mean_idf()
                )
                w_fts = adaptive_fts_weight(
                    mean_idf,
                    midpoint,
                    slope=cfg.idf_slope,
                    lo=cfg.w_fts_min,
                    hi=cfg.w_fts_max,
                )
                w_vec = 1.0 - w_fts
            else:
                w_vec, w_fts = cfg.w_vec, cfg.w_fts
        elif mode == "vector":
            w_vec, w_fts = 1.0, 0.0
        else:
            w_vec, w_fts = 0.0, 1.0

        distances = dict(vec_pool)
        fused_pairs = rrf_fuse(
            [cid for cid, _ in vec_pool],
            [cid for cid, _ in fts_pool],
            k=cfg.rrf_k,
            w_vec=w_vec,
            w_fts=w_fts,
        )
        vec_ranks = {cid: r for r, (cid, _) in enumerate(vec_pool, start=1)}
        fts_ranks = {cid: r for r, (cid, _) in enumerate(fts_pool, start=1)}
        candidates = [
            RankedCandidate(
                chunk_id=cid,
                rank_vec=vec_ranks.get(cid),
                rank_fts=fts_ranks.get(cid),
                distance=distances.get(cid),
                fused_score=score,
                score=score,
            )
            for cid, score in fused_pairs
        ]
        clock.lap("fuse")

        eliminations: dict[int, str] = {}
        cutoff_mult: float | None = None
        cutoff_threshold: float | None = None
        known = [c.distance for c in candidates if c.distance is not None]
        if known:
            cutoff_mult = cutoff_multiplier_for(len(query.split()), cfg)
            cutoff_threshold = cutoff_mult * min(known)
            for c in candidates:
                if c.distance is not None and c.distance > cutoff_threshold:
                    c.elimination = ELIM_CUTOFF
                    eliminations[c.chunk_id] = ELIM_CUTOFF
        survivors = [c for c in candidates if c.elimination is None]
        clock.lap("cutoff")

        records: dict[int, ChunkRecord] = {}
        if survivors:
            batch = self.store.get_chunks([c.chunk_id for c in survivors])
            records = {r.chunk_id: r for r in batch.records}
            doc_cache: dict[int, Any] = {}
            for c in survivors:
                rec = records.get(c.chunk_id)
                if rec is None:
                    continue
                c.doc_id = rec.doc_id
                if cfg.recency_boost != 0.0:
                    doc = doc_cache.get(rec.doc_id)
                    if doc is None:
                        doc = self.store.get_document(rec.doc_id)
                        doc_cache[rec.doc_id] = doc
                    anchor = rec.last_accessed_at or (doc.created_at if doc else None)
                    days = (
                        max(0.0, (now - anchor).total_seconds() / 86400.0)
                        if anchor is not None
                        else 0.0
                    )
                    c.score = c.fused_score * recency_multiplier(
                        days, cfg.recency_boost, cfg.recency_decay_rate
                    )
        survivors.sort(key=lambda c: (-c.score, c.chunk_id))
        clock.lap("boost")

        norm = minmax_normalize({c.chunk_id: c.score for c in survivors})
        entries = [
            MmrEntry(
                chunk_id=c.chunk_id,
                doc_id=c.doc_id if c.doc_id is not None else -1,
                norm_score=norm[c.chunk_id],
                vector=self.vec_index.vector_for(c.chunk_id),
            )
            for c in survivors
        ]
        selected_ids, mmr_elims = mmr_order(entries, k, cfg.mmr_lambda)
        eliminations.update(mmr_elims)
        for c in survivors:
            if c.chunk_id in mmr_elims:
                c.elimination = mmr_elims[c.chunk_id]
        clock.lap("mmr")

        by_id = {c.chunk_id: c for c in candidates}
        if mode == "fts":
            post_hoc = [
                d
                for d in (self.vec_index.distance(cid, qvec) for cid in selected_ids)
                if d is not None
            ]
            best_distance = min(post_hoc) if post_hoc else None
        else:
            best_distance = vec_pool[0][1] if vec_pool else None
        tier = relevance_tier(best_distance)

        results: list[SearchResult] = []
        for cid in selected_ids:
            cand = by_id[cid]
            rec = records.get(cid)
            if rec is None:
                continue
            doc = self.store.get_document(rec.doc_id)
            results.append(
                SearchResult(
                    chunk_id=cid,
                    doc_id=rec.doc_id,
                    score=cand.score,
                    tier=tier,
                    context=self.expand_context(cid, cfg.context_window),
                    text=rec.text,
                    content_digest=rec.content_digest,
                    source_uri=doc.source_uri if doc else "",
                    rank_vec=cand.rank_vec,
                    rank_fts=cand.rank_fts,
                    distance=cand.distance,
                )
            )
        clock.lap("expand")

        if record_telemetry:
            if results:
                self.store.touch_chunks([r.chunk_id for r in results], at=now)
            self.store.record_search_event(
                SearchEvent(
                    query=query,
                    best_distance=best_distance,
                    tier=tier,
                    result_count=len(results),
                    at=now,
                )
            )

        total_ms = clock.total_ms()
        self.metrics.increment("searches")
        for t in clock.timings:
            self.metrics.observe_ms(f"stage.{t.stage}", t.ms)
        self.metrics.observe_ms("search.total", total_ms)
        self.slow_log.record_if_slow(query, total_ms, clock.timings)

        return PipelineTrace(
            query=query,
            mode=mode,
            k=k,
            mean_idf=mean_idf,
            w_vec=w_vec,
            w_fts=w_fts,
            vec_pool=vec_pool,
            fts_pool=fts_pool,
            fused=candidates,
            eliminations=eliminations,
            cutoff_multiplier=cutoff_mult,
            cutoff_threshold=cutoff_threshold,
            best_distance=best_distance,
            tier=tier,
            results=results,
            timings=clock.timings,
            total_ms=total_ms,
        )


# ---------------------------------------------------------------------------
# federation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FederatedResult:
    content_digest: str
    score: float
    hits: tuple[tuple[str, int], ...]  # (profile name, rank in that profile)
    result: SearchResult

    def to_json(self) -> dict[str, Any]:
        return {
            "content_digest": self.content_digest,
            "score": self.score,
            "hits": [{"profile": p, "rank": r} for p, r in self.hits],
            "result": self.result.to_json(),
        }


def federated_search(
    profiles: Sequence[tuple[str, Searcher]],
    query: str,
    k: int = 5,
    *,
    mode: str = "hybrid",
    rrf_k: int = 60,
    record_telemetry: bool = True,
) -> list[FederatedResult]:
    """Search several stores and merge by content digest with RRF.

    Each profile contributes 1/(rrf_k + rank) per result; identical
    content in two stores (same digest) accumulates both contributions,
    so agreement between profiles outranks any single appearance. Ties
    break by ascending digest.
    """
    scores: dict[str, float] = {}
    hits: dict[str, list[tuple[str, int]]] = {}
    exemplar: dict[str, SearchResult] = {}
    for name, searcher in profiles:
        results = searcher.search(
            query, k, mode=mode, record_telemetry=record_telemetry
        )
        for rank, res in enumerate(results, start=1):
            digest = res.content_digest
            scores[digest] = scores.get(digest, 0.0) + 1.0 / (rrf_k + rank)
            hits.setdefault(digest, []).append((name, rank))
            exemplar.setdefault(digest, res)
    order = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return [
        FederatedResult(
            content_digest=digest,
            score=score,
            hits=tuple(hits[digest]),
            result=exemplar[digest],
        )
        for digest, score in order[:k]
    ]
