"""Evaluation: BEIR-layout bundles, ranking metrics, threshold sweeps,
access-pattern simulation, rescoring grid search, and the scale benchmark.

Chunk results roll up to documents by best chunk rank (max pooling), so
metric numbers are comparable across chunking choices. Everything that
runs searches here disables store telemetry: measuring the engine must
not teach it anything.
"""

from __future__ import annotations

import json
import math
import tempfile
import time
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .chunker import semantic_chunk
from .embedder import EmbeddingProvider, HashedStemEmbedder
from .errors import BundleError
from .retrieval import (
    FusionConfig,
    Searcher,
    frequency_decay_score,
    maturity_gate,
    minmax_normalize,
)
from .store import Store, open_store

BEIR_URI_PREFIX = "beir:"

ACCESS_PATTERNS = (
    "uniform",
    "recent_focused",
    "frequency_skewed",
    "mixed",
    "benchmark_focused",
)


# ---------------------------------------------------------------------------
# bundle IO
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalBundle:
    corpus: dict[str, str]
    queries: dict[str, str]
    qrels: dict[str, dict[str, int]]


def _read_jsonl(path: Path) -> Iterable[dict[str, Any]]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise BundleError(f"missing bundle file: {path}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            yield json.loads(line)
        except json.JSONDecodeError as exc:
            raise BundleError(f"{path}:{lineno}: bad JSON: {exc}") from exc


def load_beir(bundle_dir: str | Path) -> EvalBundle:
    """Read corpus.jsonl, queries.jsonl and qrels.tsv from a directory.

    Titles are prepended to document text. Qrels referencing unknown
    queries or documents are an error, not a warning: silently dropping
    them would quietly inflate every metric downstream.
    """
    bundle_dir = Path(bundle_dir)
    corpus: dict[str, str] = {}
    for row in _read_jsonl(bundle_dir / "corpus.jsonl"):
        did = str(row.get("_id", ""))
        if not did:
            raise BundleError(f"{bundle_dir}/corpus.jsonl: document without _id")
        title = str(row.get("title", "") or "")
        text = str(row.get("text", "") or "")
        corpus[did] = f"{title}\n\n{text}" if title else text

    queries: dict[str, str] = {}
    for row in _read_jsonl(bundle_dir / "queries.jsonl"):
        qid = str(row.get("_id", ""))
        if not qid:
            raise BundleError(f"{bundle_dir}/queries.jsonl: query without _id")
        queries[qid] = str(row.get("text", "") or "")

    qrels_path = bundle_dir / "qrels.tsv"
    try:
        lines = qrels_path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise BundleError(f"missing bundle file: {qrels_path}") from exc
    qrels: dict[str, dict[str, int]] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise BundleError(f"{qrels_path}:{lineno}: expected 3 tab-separated fields")
        qid, did, grade_raw = (p.strip() for p in parts)
        if lineno == 1 and not _is_int(grade_raw):
            continue  # header row
        if not _is_int(grade_raw):
            raise BundleError(f"{qrels_path}:{lineno}: grade {grade_raw!r} is not an integer")
        if qid not in queries:
            raise BundleError(f"{qrels_path}:{lineno}: dangling qrel, unknown query {qid!r}")
        if did not in corpus:
            raise BundleError(f"{qrels_path}:{lineno}: dangling qrel, unknown document {did!r}")
        qrels.setdefault(qid, {})[did] = int(grade_raw)
    return EvalBundle(corpus=corpus, queries=queries, qrels=qrels)


def _is_int(raw: str) -> bool:
    try:
        int(raw)
        return True
    except ValueError:
        return False


# ---------------------------------------------------------------------------
# ranking metrics
# ---------------------------------------------------------------------------

def _dcg(grades: Sequence[int]) -> float:
    return sum(
        (2.0**g - 1.0) / math.log2(i + 2.0) for i, g in enumerate(grades)
    )


def ndcg_at_k(ranking: Sequence[str], rels: Mapping[str, int], k: int) -> float:
    """Exponential-gain NDCG; 0.0 when the query has no relevant docs."""
    gains = [rels.get(d, 0) for d in ranking[:k]]
    ideal = sorted(rels.values(), reverse=True)[:k]
    idcg = _dcg(ideal)
    if idcg <= 0.0:
        return 0.0
    return _dcg(gains) / idcg


def precision_at_k(ranking: Sequence[str], rels: Mapping[str, int], k: int) -> float:
    """Share of the top k with any positive grade; k is the denominator."""
    if k <= 0:
        return 0.0
    hits = sum(1 for d in ranking[:k] if rels.get(d, 0) > 0)
    return hits / k


def mrr(ranking: Sequence[str], rels: Mapping[str, int]) -> float:
    """Reciprocal rank of the first positively graded document, else 0."""
    for i, d in enumerate(ranking):
        if rels.get(d, 0) > 0:
            return 1.0 / (i + 1)
    return 0.0


# ---------------------------------------------------------------------------
# ingest + document roll-up evaluation
# ---------------------------------------------------------------------------

def ingest_bundle(
    store: Store,
    bundle: EvalBundle,
    embedder: EmbeddingProvider,
    *,
    collection: str = "eval",
    max_tokens: int = 1024,
    overlap: int = 128,
) -> int:
    """Chunk and embed every corpus document into the store."""
    count = 0
    for did in sorted(bundle.corpus):
        spans = semantic_chunk(bundle.corpus[did], max_tokens, overlap)
        vectors = embedder.embed([s.text for s in spans])
        store.add_document(
            f"{BEIR_URI_PREFIX}{did}",
            collection,
            [(s.text, s.token_count) for s in spans],
            vectors,
        )
        count += 1
    return count


def _doc_ranking(results: Iterable[Any]) -> list[str]:
    """Chunk results to BEIR doc ids, best (first) chunk rank per doc."""
    seen: dict[str, None] = {}
    for res in results:
        uri = res.source_uri
        if uri.startswith(BEIR_URI_PREFIX):
            seen.setdefault(uri[len(BEIR_URI_PREFIX):], None)
    return list(seen)


@dataclass(frozen=True)
class EvalReport:
    k: int
    mode: str
    n_queries: int
    ndcg: float
    precision: float
    mrr: float
    latency_ms: dict[str, float]
    per_query: dict[str, dict[str, float]]

    def to_json(self) -> dict[str, Any]:
        return {
            "k": self.k,
            "mode": self.mode,
            "n_queries": self.n_queries,
            "ndcg": self.ndcg,
            "precision": self.precision,
            "mrr": self.mrr,
            "latency_ms": self.latency_ms,
            "per_query": self.per_query,
        }


def run_eval(
    searcher: Searcher,
    bundle: EvalBundle,
    *,
    k: int = 10,
    mode: str = "hybrid",
    search_k: int = 50,
) -> EvalReport:
    """Metrics at k over every query that has qrels, telemetry off."""
    per_query: dict[str, dict[str, float]] = {}
    times: list[float] = []
    nd, pr, rr = [], [], []
    for qid in sorted(bundle.queries):
        rels = bundle.qrels.get(qid)
        if not rels:
            continue
        t0 = time.perf_counter()
        results = searcher.search(
            bundle.queries[qid], search_k, mode=mode, record_telemetry=False
        )
        ms = (time.perf_counter() - t0) * 1000.0
        ranking = _doc_ranking(results)
        row = {
            "ndcg": ndcg_at_k(ranking, rels, k),
            "precision": precision_at_k(ranking, rels, k),
            "mrr": mrr(ranking, rels),
            "ms": ms,
        }
        per_query[qid] = row
        nd.append(row["ndcg"])
        pr.append(row["precision"])
        rr.append(row["mrr"])
        times.append(ms)
    n = len(per_query)
    pctl = (
        {q: float(np.percentile(times, p)) for q, p in (("p50", 50), ("p95", 95), ("p99", 99))}
        if times
        else {"p50": 0.0, "p95": 0.0, "p99": 0.0}
    )
    return EvalReport(
        k=k,
        mode=mode,
        n_queries=n,
        ndcg=sum(nd) / n if n else 0.0,
        precision=sum(pr) / n if n else 0.0,
        mrr=sum(rr) / n if n else 0.0,
        latency_ms=pctl,
        per_query=per_query,
    )


# ---------------------------------------------------------------------------
# relevance threshold sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    threshold: float
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class SweepReport:
    rows: tuple[SweepRow, ...]
    best_threshold: float
    best_f1: float

    def to_json(self) -> dict[str, Any]:
        return {
            "best_threshold": self.best_threshold,
            "best_f1": self.best_f1,
            "rows": [vars(r) for r in self.rows],
        }


def relevance_sweep(
    searcher: Searcher,
    relevant_queries: Sequence[str],
    off_topic_queries: Sequence[str],
    *,
    thresholds: Sequence[float] | None = None,
) -> SweepReport:
    """Classify queries by best vector distance across a threshold grid.

    A query is predicted on-topic when its nearest chunk's distance is
    <= the threshold. Best threshold is the F1 argmax; ties go to the
    smaller threshold (the stricter classifier).
    """
    if thresholds is None:
        thresholds = [round(0.01 * i, 2) for i in range(151)]
    labeled: list[tuple[float, bool]] = []
    for query, is_relevant in [(q, True) for q in relevant_queries] + [
        (q, False) for q in off_topic_queries
    ]:
        qvec = searcher.embedder.embed([query])[0]
        dist = searcher.vec_index.knn(qvec, 1)[0][1]
        labeled.append((dist, is_relevant))

    rows: list[SweepRow] = []
    best: SweepRow | None = None
    for t in thresholds:
        tp = sum(1 for d, rel in labeled if rel and d <= t)
        fp = sum(1 for d, rel in labeled if not rel and d <= t)
        fn = sum(1 for d, rel in labeled if rel and d > t)
        tn = sum(1 for d, rel in labeled if not rel and d > t)
        precision = tp / (tp + fp) if (tp + fp) else 0.0
        recall = tp / (tp + fn) if (tp + fn) else 0.0
        f1 = (
            2.0 * precision * recall / (precision + recall)
            if (precision + recall)
            else 0.0
        )
        row = SweepRow(t, tp, fp, fn, tn, precision, recall, f1)
        rows.append(row)
        if best is None or row.f1 > best.f1:
            best = row
    assert best is not None
    return SweepReport(rows=tuple(rows), best_threshold=best.threshold, best_f1=best.f1)


# ---------------------------------------------------------------------------
# access-pattern simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimulationReport:
    pattern: str
    rounds: int
    seed: int
    chunks: int
    touches: int
    max_count: int
    mean_count: float
    max_over_mean: float


def simulate_access_pattern(
    store: Store,
    pattern: str,
    rounds: int,
    *,
    seed: int = 0,
    sample_fraction: float = 0.2,
    now: datetime | None = None,
) -> SimulationReport:
    """Drive access counters with a named usage shape, deterministically.

    Counters are reset first, so the same seed always produces the same
    final state. Round r is stamped (rounds-1-r) days in the past, newest
    round last.

    uniform            every chunk, every round
    recent_focused     sample weighted toward recently created documents
    frequency_skewed   sample under a fixed Zipf preference over chunks
    mixed              alternate uniform-sample and Zipf rounds
    benchmark_focused  a small fixed hot set every round plus background
    """
    if pattern not in ACCESS_PATTERNS:
        raise ValueError(f"unknown access pattern {pattern!r}; known: {ACCESS_PATTERNS}")
    ids = store.all_chunk_ids()
    n = len(ids)
    if n == 0:
        raise ValueError("store has no chunks to simulate against")
    rng = np.random.default_rng(seed)
    store.reset_access_stats()
    now = now or datetime.now(timezone.utc)
    id_arr = np.asarray(ids, dtype=np.int64)
    sample_size = max(1, int(n * sample_fraction))

    # fixed preference structures, drawn once so rounds share them
    zipf_rank = rng.permutation(n)
    zipf_w = 1.0 / (zipf_rank + 1.0)
    zipf_p = zipf_w / zipf_w.sum()
    recency_w = np.exp(3.0 * (id_arr - id_arr.min()) / max(1, id_arr.max() - id_arr.min()))
    recency_p = recency_w / recency_w.sum()
    hot_size = max(1, int(n * 0.02))
    hot = rng.permutation(n)[:hot_size]

    touches = 0
    for r in range(rounds):
        stamp = now - timedelta(days=rounds - 1 - r)
        if pattern == "uniform":
            chosen = id_arr
        elif pattern == "recent_focused":
            chosen = rng.choice(id_arr, size=sample_size, replace=False, p=recency_p)
        elif pattern == "frequency_skewed":
            chosen = rng.choice(id_arr, size=sample_size, replace=False, p=zipf_p)
        elif pattern == "mixed":
            if r % 2 == 0:
                chosen = rng.choice(id_arr, size=sample_size, replace=False)
            else:
                chosen = rng.choice(id_arr, size=sample_size, replace=False, p=zipf_p)
        else:  # benchmark_focused
            rest = np.setdiff1d(np.arange(n), hot, assume_unique=False)
            bg_size = max(1, int(n * 0.02))
            bg = rng.choice(rest, size=min(bg_size, rest.size), replace=False)
            chosen = id_arr[np.concatenate([hot, bg])]
        chosen_list = sorted(int(c) for c in chosen)
        store.touch_chunks(chosen_list, at=stamp)
        touches += len(chosen_list)

    counts = [c.access_count for c in store.iter_chunks()]
    max_count = max(counts)
    mean_count = sum(counts) / len(counts)
    return SimulationReport(
        pattern=pattern,
        rounds=rounds,
        seed=seed,
        chunks=n,
        touches=touches,
        max_count=max_count,
        mean_count=mean_count,
        max_over_mean=(max_count / mean_count) if mean_count else 0.0,
    )


# ---------------------------------------------------------------------------
# frequency rescoring grid search
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridRow:
    pattern: str
    a: float
    b: float
    decay_rate: float
    gate: float
    ndcg: float
    baseline_ndcg: float
    delta: float


@dataclass(frozen=True)
class GridReport:
    rows: tuple[GridRow, ...]
    k: int
    rounds: int
    use_maturity_gate: bool

    def to_json(self) -> dict[str, Any]:
        return {
            "k": self.k,
            "rounds": self.rounds,
            "use_maturity_gate": self.use_maturity_gate,
            "rows": [vars(r) for r in self.rows],
        }


def _days_ago(rec: Any, doc_created: datetime | None, now: datetime) -> float:
    anchor = rec.last_accessed_at or doc_created
    if anchor is None:
        return 0.0
    return max(0.0, (now - anchor).total_seconds() / 86400.0)


def scoring_grid_search(
    searcher: Searcher,
    bundle: EvalBundle,
    *,
    patterns: Sequence[str] = ACCESS_PATTERNS,
    a_values: Sequence[float] = (1.0,),
    b_values: Sequence[float] = (0.0, 0.25, 0.5, 0.75),
    decay_values: Sequence[float] = (0.01, 0.05, 0.1, 0.2),
    rounds: int = 30,
    seed: int = 0,
    k: int = 10,
    search_k: int = 50,
    use_maturity_gate: bool = False,
    now: datetime | None = None,
) -> GridReport:
    """Rescore fused candidates with a * relevance + b * usage and report
    NDCG deltas against the untouched fusion ranking, per access pattern.

    b = 0 rows are rank-preserving by construction, so their delta is an
    exact 0.0 and doubles as a self-check of the harness. With the
    maturity gate enabled, b is scaled by the gate computed from the
    store's post-simulation access distribution.
    """
    now = now or datetime.now(timezone.utc)
    rows: list[GridRow] = []
    for pattern in patterns:
        simulate_access_pattern(searcher.store, pattern, rounds, seed=seed, now=now)
        counts = [c.access_count for c in searcher.store.iter_chunks()]
        gate = maturity_gate(max(counts), sum(counts) / len(counts))

        # per-query candidate context, shared by every grid cell
        contexts = []
        for qid in sorted(bundle.queries):
            rels = bundle.qrels.get(qid)
            if not rels:
                continue
            trace = searcher.search_trace(
                bundle.queries[qid], search_k, record_telemetry=False
            )
            survivors = [c for c in trace.fused if c.elimination != "cutoff"]
            batch = searcher.store.get_chunks([c.chunk_id for c in survivors])
            recs = {r.chunk_id: r for r in batch.records}
            doc_created: dict[int, datetime | None] = {}
            uri: dict[int, str] = {}
            for rec in batch.records:
                if rec.doc_id not in doc_created:
                    doc = searcher.store.get_document(rec.doc_id)
                    doc_created[rec.doc_id] = doc.created_at if doc else None
                    uri[rec.doc_id] = doc.source_uri if doc else ""
            norm = minmax_normalize({c.chunk_id: c.fused_score for c in survivors})
            cands = []
            for c in survivors:
                rec = recs.get(c.chunk_id)
                if rec is None:
                    continue
                cands.append(
                    {
                        "chunk_id": c.chunk_id,
                        "norm": norm[c.chunk_id],
                        "access_count": rec.access_count,
                        "days_ago": _days_ago(rec, doc_created[rec.doc_id], now),
                        "doc": uri[rec.doc_id],
                    }
                )
            baseline_ranking = _uri_ranking([c["doc"] for c in cands])
            contexts.append(
                {
                    "rels": rels,
                    "cands": cands,
                    "baseline": ndcg_at_k(baseline_ranking, rels, k),
                }
            )

        baseline_ndcg = (
            sum(c["baseline"] for c in contexts) / len(contexts) if contexts else 0.0
        )
        for a in a_values:
            for b in b_values:
                b_eff = b * gate if use_maturity_gate else b
                for decay in decay_values:
                    scores = []
                    for ctx in contexts:
                        rescored = sorted(
                            ctx["cands"],
                            key=lambda c: (
                                -frequency_decay_score(
                                    c["norm"],
                                    c["access_count"],
                                    c["days_ago"],
                                    a=a,
                                    b=b_eff,
                                    decay_rate=decay,
                                ),
                                c["chunk_id"],
                            ),
                        )
                        ranking = _uri_ranking([c["doc"] for c in rescored])
                        scores.append(ndcg_at_k(ranking, ctx["rels"], k))
                    nd = sum(scores) / len(scores) if scores else 0.0
                    rows.append(
                        GridRow(
                            pattern=pattern,
                            a=a,
                            b=b,
                            decay_rate=decay,
                            gate=gate,
                            ndcg=nd,
                            baseline_ndcg=baseline_ndcg,
                            delta=nd - baseline_ndcg,
                        )
                    )
    return GridReport(
        rows=tuple(rows), k=k, rounds=rounds, use_maturity_gate=use_maturity_gate
    )


def _uri_ranking(uris: Sequence[str]) -> list[str]:
    seen: dict[str, None] = {}
    for uri in uris:
        if uri.startswith(BEIR_URI_PREFIX):
            seen.setdefault(uri[len(BEIR_URI_PREFIX):], None)
    return list(seen)


# ---------------------------------------------------------------------------
# synthetic corpus + scale benchmark
# ---------------------------------------------------------------------------

def synthetic_bundle(
    n_topics: int = 20,
    *,
    chunks_per_doc: int = 3,
    words_per_chunk: int = 30,
    seed: int = 0,
) -> EvalBundle:
    """A separable topical corpus: each document owns a private
    vocabulary, each query uses three of its document's topic words."""
    rng = np.random.default_rng(seed)
    glue = ["the", "of", "and", "about", "with", "notes", "on"]
    corpus: dict[str, str] = {}
    queries: dict[str, str] = {}
    qrels: dict[str, dict[str, int]] = {}
    for t in range(n_topics):
        vocab = [f"topic{t}term{j}" for j in range(10)]
        paragraphs = []
        for _c in range(chunks_per_doc):
            words = [
                vocab[int(rng.integers(len(vocab)))]
                if rng.random() < 0.7
                else glue[int(rng.integers(len(glue)))]
                for _ in range(words_per_chunk)
            ]
            # anchor the first three topic words so queries always match
            words[:3] = vocab[:3]
            paragraphs.append(" ".join(words))
        did = f"doc{t}"
        qid = f"q{t}"
        corpus[did] = "\n\n".join(paragraphs)
        queries[qid] = " ".join(vocab[:3])
        qrels[qid] = {did: 1}
    return EvalBundle(corpus=corpus, queries=queries, qrels=qrels)


@dataclass(frozen=True)
class BenchReport:
    n_chunks: int
    dim: int
    n_queries: int
    build_seconds: float
    ndcg: float
    p50_ms: float
    p95_ms: float
    p99_ms: float
    total_seconds: float

    def to_json(self) -> dict[str, Any]:
        return dict(vars(self))


def scale_benchmark(
    n_chunks: int,
    *,
    dim: int = 384,
    n_queries: int = 100,
    seed: int = 0,
    store_path: str | Path | None = None,
    k: int = 10,
) -> BenchReport:
    """Pad a separable fixture corpus with random distractors up to
    n_chunks and measure end-to-end search latency and NDCG.

    Distractor text is drawn from a vocabulary disjoint from the fixture
    and the vectors are random unit vectors, so fixture metrics should
    not move as the store grows; that is exactly what the drift check
    compares across sizes. Latency includes telemetry writes: that is
    what a real search pays.
    """
    t_start = time.perf_counter()
    rng = np.random.default_rng(seed)
    bundle = synthetic_bundle(seed=seed)
    tmp = None
    store = None
    if store_path is None:
        tmp = tempfile.TemporaryDirectory(prefix="scale-bench-")
        store_path = Path(tmp.name) / "bench.db"
    try:
        store = open_store(store_path, config={"dimension": dim})
        embedder = HashedStemEmbedder(dim)
        ingest_bundle(store, bundle, embedder)

        noise_vocab = [f"noise{i}" for i in range(4000)]
        chunks_per_doc = 10
        words = 30
        doc_idx = 0
        while store.n_chunks < n_chunks:
            remaining = n_chunks - store.n_chunks
            batch = min(chunks_per_doc, remaining)
            texts = []
            for _c in range(batch):
                picks = rng.integers(0, len(noise_vocab), size=words)
                texts.append(" ".join(noise_vocab[int(p)] for p in picks))
            vecs = rng.standard_normal((batch, dim))
            vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
            store.add_document(
                f"distractor:{doc_idx}",
                "noise",
                [(t, len(t.split())) for t in texts],
                vecs,
            )
            doc_idx += 1
        build_seconds = time.perf_counter() - t_start

        searcher = Searcher(store, embedder, config=FusionConfig())
        qtexts = [bundle.queries[qid] for qid in sorted(bundle.queries)]
        searcher.search(qtexts[0], k, record_telemetry=False)  # build caches

        times = []
        for i in range(n_queries):
            q = qtexts[i % len(qtexts)]
            t0 = time.perf_counter()
            searcher.search(q, k)
            times.append((time.perf_counter() - t0) * 1000.0)

        report = run_eval(searcher, bundle, k=k)
        total = time.perf_counter() - t_start
        return BenchReport(
            n_chunks=store.n_chunks,
            dim=dim,
            n_queries=n_queries,
            build_seconds=build_seconds,
            ndcg=report.ndcg,
            p50_ms=float(np.percentile(times, 50)),
            p95_ms=float(np.percentile(times, 95)),
            p99_ms=float(np.percentile(times, 99)),
            total_seconds=total,
        )
    finally:
        if store is not None:
            store.close()
        if tmp is not None:
            tmp.cleanup()
