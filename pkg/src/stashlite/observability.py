"""Operational introspection: metrics, stage timings, slow-query ring,
resource limits, and post-hoc miss analysis.

Nothing here is on the persistence path. The metrics registry is process
local; the miss analyzer replays a search with store telemetry disabled
so diagnosis never perturbs access counters or the event log.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping

from .errors import LimitError

# elimination tags attached to candidates that never reached the results
ELIM_CUTOFF = "cutoff"
ELIM_MMR_STOP = "mmr_stop"
ELIM_BELOW_K = "below_k"

# histogram bucket upper bounds in milliseconds, powers of two
_BUCKET_BOUNDS = (
    0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0,
    64.0, 128.0, 256.0, 512.0, 1024.0,
)


@dataclass(frozen=True)
class StageTiming:
    stage: str
    ms: float


class Histogram:
    """Fixed-bucket latency histogram; the last bucket is unbounded."""

    def __init__(self) -> None:
        self._counts = [0] * (len(_BUCKET_BOUNDS) + 1)
        self.count = 0
        self.sum_ms = 0.0

    def observe(self, ms: float) -> None:
        self.count += 1
        self.sum_ms += ms
        for i, bound in enumerate(_BUCKET_BOUNDS):
            if ms <= bound:
                self._counts[i] += 1
                return
        self._counts[-1] += 1

    def snapshot(self) -> dict[str, Any]:
        buckets: list[list[Any]] = [
            [bound, self._counts[i]] for i, bound in enumerate(_BUCKET_BOUNDS)
        ]
        buckets.append([None, self._counts[-1]])
        return {"count": self.count, "sum_ms": self.sum_ms, "buckets": buckets}


class MetricsRegistry:
    """Thread-safe counters and latency histograms."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._counters: dict[str, int] = {}
        self._histograms: dict[str, Histogram] = {}

    def increment(self, name: str, n: int = 1) -> None:
        with self._lock:
            self._counters[name] = self._counters.get(name, 0) + n

    def counter(self, name: str) -> int:
        with self._lock:
            return self._counters.get(name, 0)

    def observe_ms(self, name: str, ms: float) -> None:
        with self._lock:
            hist = self._histograms.get(name)
            if hist is None:
                hist = self._histograms[name] = Histogram()
            hist.observe(ms)

    def snapshot(self) -> dict[str, Any]:
        with self._lock:
            return {
                "counters": dict(sorted(self._counters.items())),
                "histograms": {
                    name: hist.snapshot()
                    for name, hist in sorted(self._histograms.items())
                },
            }


@dataclass(frozen=True)
class SlowQuery:
    query: str
    total_ms: float
    stages: tuple[StageTiming, ...]


class SlowQueryLog:
    """Ring of the most recent slow searches, newest last."""

    def __init__(self, threshold_ms: float = 100.0, capacity: int = 256):
        self.threshold_ms = threshold_ms
        self._ring: deque[SlowQuery] = deque(maxlen=capacity)
        self._lock = threading.Lock()

    def record_if_slow(
        self, query: str, total_ms: float, stages: Iterable[StageTiming]
    ) -> bool:
        if total_ms <= self.threshold_ms:
            return False
        with self._lock:
            self._ring.append(SlowQuery(query, total_ms, tuple(stages)))
        return True

    def entries(self) -> list[SlowQuery]:
        with self._lock:
            return list(self._ring)

    def __len__(self) -> int:
        with self._lock:
            return len(self._ring)


# ---------------------------------------------------------------------------
# resource limits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LimitsConfig:
    """Hard ceilings; exceeding any of them refuses the operation."""

    max_query_chars: int = 4096
    max_k: int = 100
    max_candidate_pool: int = 500
    max_chunks_per_doc: int = 5000
    max_doc_bytes: int = 10_000_000
    max_batch_ids: int = 100_000
    max_tag_depth: int = 8

    def check(self, name: str, actual: int) -> None:
        bound = getattr(self, name)
        if actual > bound:
            raise LimitError(f"{name} exceeded: {actual} > {bound}")

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Any]) -> "LimitsConfig":
        known = {f for f in cls.__dataclass_fields__}
        kwargs = {k: int(v) for k, v in raw.items() if k in known}
        return cls(**kwargs)


# ---------------------------------------------------------------------------
# miss analysis
# ---------------------------------------------------------------------------

class MissVerdict(str, Enum):
    NOT_IN_CORPUS = "not_in_corpus"
    NO_CHUNK_IN_VECTOR_POOL = "no_chunk_in_vector_pool"
    NO_CHUNK_IN_FTS_POOL = "no_chunk_in_fts_pool"
    ELIMINATED_BY_CUTOFF = "eliminated_by_cutoff"
    ELIMINATED_BY_MMR = "eliminated_by_mmr"
    BELOW_RANK_K = "below_rank_k"


@dataclass(frozen=True)
class MissReport:
    query: str
    expected_doc_id: int | None
    expected_chunk_id: int | None
    found: bool
    verdict: MissVerdict | None
    suggestion: str
    details: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {
            "query": self.query,
            "expected_doc_id": self.expected_doc_id,
            "expected_chunk_id": self.expected_chunk_id,
            "found": self.found,
            "verdict": self.verdict.value if self.verdict else None,
            "suggestion": self.suggestion,
            "details": self.details,
        }


def _leg_rank(pool: list, chunk_ids: set[int]) -> int | None:
    """Best 1-based rank of any of chunk_ids inside a (id, value) pool."""
    best = None
    for rank, (cid, _val) in enumerate(pool, start=1):
        if cid in chunk_ids and (best is None or rank < best):
            best = rank
    return best


def miss_analysis(
    searcher: Any,
    query: str,
    expected_doc_id: int | None = None,
    *,
    expected_chunk_id: int | None = None,
    k: int = 5,
    mode: str = "hybrid",
) -> MissReport:
    """Replay a search and say at which stage the expected item died.

    The verdict is the last stage the item survived into: pool admission,
    then distance cutoff, then diversity selection, then the rank cut.
    When a whole document is expected, any of its chunks can carry it
    through; pass expected_chunk_id to diagnose one specific chunk (the
    usual way to see same-document duplicate suppression, since a document
    whose duplicate chunk was suppressed was still returned via the
    sibling that suppressed it).

    The replay runs with store telemetry disabled: no access counter
    moves, no search event is recorded.
    """
    store = searcher.store
    if expected_chunk_id is None and expected_doc_id is None:
        raise ValueError("expected_doc_id or expected_chunk_id required")

    if expected_chunk_id is not None:
        batch = store.get_chunks([expected_chunk_id])
        if batch.missing:
            return MissReport(
                query, expected_doc_id, expected_chunk_id, False,
                MissVerdict.NOT_IN_CORPUS,
                "chunk id is not present in the store; ingest it first",
                {"missing_chunk_id": expected_chunk_id},
            )
        target_ids = {expected_chunk_id}
        doc_id = batch.records[0].doc_id
    else:
        doc = store.get_document(expected_doc_id)
        if doc is None:
            return MissReport(
                query, expected_doc_id, None, False,
                MissVerdict.NOT_IN_CORPUS,
                "document id is not present in the store; ingest it first",
                {"missing_doc_id": expected_doc_id},
            )
        target_ids = {c.chunk_id for c in store.chunks_for_doc(expected_doc_id)}
        doc_id = expected_doc_id

    trace = searcher.search_trace(query, k=k, mode=mode, record_telemetry=False)

    details: dict[str, Any] = {
        "doc_id": doc_id,
        "target_chunk_ids": sorted(target_ids),
        "mode": mode,
        "k": k,
        "cutoff_multiplier": trace.cutoff_multiplier,
        "cutoff_threshold": trace.cutoff_threshold,
        "vector_pool_rank": _leg_rank(trace.vec_pool, target_ids),
        "fts_pool_rank": _leg_rank(trace.fts_pool, target_ids),
    }

    selected = [r.chunk_id for r in trace.results]
    hit_rank = None
    for rank, cid in enumerate(selected, start=1):
        if cid in target_ids:
            hit_rank = rank
            break
    if hit_rank is not None:
        details["rank"] = hit_rank
        return MissReport(
            query, expected_doc_id, expected_chunk_id, True, None,
            f"already returned at rank {hit_rank}", details,
        )

    in_vec = details["vector_pool_rank"] is not None
    in_fts = details["fts_pool_rank"] is not None

    if not in_vec and not in_fts:
        if mode == "fts":
            verdict = MissVerdict.NO_CHUNK_IN_FTS_POOL
            suggestion = (
                "no query term matches the document's vocabulary; "
                "rephrase with terms the document actually uses"
            )
        else:
            verdict = MissVerdict.NO_CHUNK_IN_VECTOR_POOL
            pool = len(trace.vec_pool)
            suggestion = (
                f"no chunk reached either candidate pool (vector pool size "
                f"{pool}); a larger candidate_pool or query terms the "
                f"document actually uses would help"
            )
            if not trace.fts_pool or details["fts_pool_rank"] is None:
                details["fts_pool_missed_too"] = True
        return MissReport(
            query, expected_doc_id, expected_chunk_id, False,
            verdict, suggestion, details,
        )

    tags = {
        trace.eliminations.get(cid)
        for cid in target_ids
        if cid in trace.eliminations
    }
    tags.discard(None)
    details["elimination_tags"] = sorted(tags)

    if ELIM_BELOW_K in tags:
        verdict = MissVerdict.BELOW_RANK_K
        suggestion = f"survived every filter but ranked below k={k}; raise k"
    elif ELIM_MMR_STOP in tags:
        verdict = MissVerdict.ELIMINATED_BY_MMR
        suggestion = (
            "diversity selection stopped before reaching it: a near-duplicate "
            "from the same document was already selected; raise k or lower "
            "mmr_lambda's redundancy penalty"
        )
    elif ELIM_CUTOFF in tags:
        verdict = MissVerdict.ELIMINATED_BY_CUTOFF
        suggestion = (
            f"vector distance fell outside {trace.cutoff_multiplier} x best "
            f"(threshold {trace.cutoff_threshold}); the match is real but "
            f"weak, consider fts mode or a more specific query"
        )
    else:
        # pooled, never tagged, never selected: only reachable if the
        # fused pool was truncated before selection; treat as outranked
        verdict = MissVerdict.BELOW_RANK_K
        suggestion = f"outranked by stronger candidates at k={k}; raise k"
    return MissReport(
        query, expected_doc_id, expected_chunk_id, False,
        verdict, suggestion, details,
    )
