"""Command line entry point.

Subcommands map one-to-one onto library calls; the CLI owns only store
resolution, config discovery, argument parsing, and output shaping.
Exit codes: 0 ok, 1 operational failure, 2 usage error (argparse),
3 missing optional component.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import shutil
import subprocess
import sys
import tempfile
import warnings
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

from .chunker import (
    DEFAULT_MAX_TOKENS,
    DEFAULT_OVERLAP,
    EXTENSION_LANGUAGES,
    code_chunk,
    semantic_chunk,
)
from .embedder import ModelBridge, build_provider
from .errors import MissingComponentError, StashError
from .evalharness import (
    ingest_bundle,
    load_beir,
    relevance_sweep,
    run_eval,
    scale_benchmark,
)
from .miner import export_triples, mine_corpus
from .observability import LimitsConfig, miss_analysis
from .retrieval import FusionConfig, Searcher, federated_search
from .store import Completeness, Store, open_store

DEFAULT_STORE = "stashlite.db"
CONFIG_ENV = "STASHLITE_CONFIG"
STORE_ENV = "STASHLITE_STORE"
TRAINER_ENV = "STASHLITE_TRAINER"
TRAINER_EXE = "stashlite-trainer"

_KNOWN_CONFIG_KEYS = {"store", "embedder", "profiles", "fusion", "limits"}


def _emit(payload: Any) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False))


# ---------------------------------------------------------------------------
# config + store resolution
# ---------------------------------------------------------------------------

def load_config(explicit: str | None) -> dict[str, Any]:
    """--config beats $STASHLITE_CONFIG beats ~/.config/stashlite/config.json.

    A missing default file is fine; a missing explicit one is an error.
    Unknown keys warn rather than fail so configs can travel between
    versions.
    """
    if explicit is not None:
        path = Path(explicit)
    elif os.environ.get(CONFIG_ENV):
        path = Path(os.environ[CONFIG_ENV])
    else:
        path = Path.home() / ".config" / "stashlite" / "config.json"
        if not path.exists():
            return {}
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise StashError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise StashError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise StashError(f"config {path} must hold a JSON object")
    for key in sorted(set(data) - _KNOWN_CONFIG_KEYS):
        warnings.warn(f"config {path}: unknown key {key!r} ignored", stacklevel=2)
    return data


def resolve_store_path(args: argparse.Namespace, config: dict[str, Any]) -> str:
    if getattr(args, "store", None):
        return args.store
    if os.environ.get(STORE_ENV):
        return os.environ[STORE_ENV]
    if config.get("store"):
        return str(config["store"])
    return DEFAULT_STORE


def _open(
    args: argparse.Namespace,
    config: dict[str, Any],
    *,
    create: bool = True,
    embedder: Any = None,
) -> Store:
    limits = (
        LimitsConfig.from_mapping(config["limits"])
        if isinstance(config.get("limits"), dict)
        else None
    )
    # adopt the embedder's shape when creating; on an existing store this
    # doubles as a dimension guard before any vectors are written
    store_config = (
        {"dimension": embedder.dimension, "embedder_id": embedder.model_id}
        if embedder is not None
        else None
    )
    return open_store(
        resolve_store_path(args, config),
        create_if_missing=create,
        config=store_config,
        limits=limits,
    )


def _embedder_spec(args: argparse.Namespace, config: dict[str, Any]) -> str:
    if getattr(args, "embedder", None):
        return args.embedder
    if config.get("embedder"):
        return str(config["embedder"])
    return "test"


def _fusion(config: dict[str, Any]) -> FusionConfig:
    if isinstance(config.get("fusion"), dict):
        return FusionConfig.from_mapping(config["fusion"])
    return FusionConfig()


def _searcher(store: Store, args: argparse.Namespace, config: dict[str, Any]) -> Searcher:
    embedder = build_provider(_embedder_spec(args, config))
    return Searcher(store, embedder, config=_fusion(config))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _ingest_one(store: Store, embedder: Any, path: Path, args: argparse.Namespace) -> dict[str, Any]:
    text = path.read_text(encoding="utf-8")
    language = EXTENSION_LANGUAGES.get(path.suffix.lower())
    as_code = args.code or (language is not None and not args.text)
    if as_code:
        spans = code_chunk(text, language or "unknown", args.max_tokens)
        source_type = "code"
    else:
        spans = semantic_chunk(text, args.max_tokens, args.overlap)
        source_type = "text"
    vectors = embedder.embed([s.text for s in spans])
    uri = str(path.resolve())
    before = store.doc_completeness(uri, args.collection)
    epoch_before = store.content_epoch
    store.add_document(
        uri,
        args.collection,
        [(s.text, s.token_count) for s in spans],
        vectors,
        tags=args.tag or (),
        source_type=source_type,
    )
    if store.content_epoch == epoch_before and before is Completeness.COMPLETE:
        status = "skipped"
    elif before is Completeness.PARTIAL:
        status = "repaired"
    else:
        status = "ingested"
    return {"path": uri, "status": status, "chunks": len(spans)}


def cmd_ingest(args: argparse.Namespace, config: dict[str, Any]) -> int:
    embedder = build_provider(_embedder_spec(args, config))
    store = _open(args, config, embedder=embedder)
    try:
        statuses = []
        failures = 0
        # one bad file must not sink the rest of the batch
        for raw in args.paths:
            path = Path(raw)
            try:
                statuses.append(_ingest_one(store, embedder, path, args))
            except (StashError, OSError) as exc:
                failures += 1
                statuses.append({"path": str(path), "status": "error", "error": str(exc)})
        if args.json:
            _emit({"documents": statuses})
        else:
            for row in statuses:
                if row["status"] == "error":
                    print(f"error     {row['path']}: {row['error']}")
                elif row["status"] == "skipped":
                    print(f"skipped (complete) {row['path']} ({row['chunks']} chunks)")
                else:
                    print(f"{row['status']:9s} {row['path']} ({row['chunks']} chunks)")
        return 0 if failures < len(args.paths) else 1
    finally:
        store.close()


def _result_lines(results: Sequence[Any]) -> list[str]:
    lines = []
    for i, res in enumerate(results, start=1):
        snippet = " ".join(res.text.split())
        if len(snippet) > 100:
            snippet = snippet[:97] + "..."
        lines.append(
            f"{i:2d}. [{res.tier}] {res.score:.4f} chunk={res.chunk_id} {res.source_uri}\n    {snippet}"
        )
    return lines


def _search_fusion(args: argparse.Namespace, config: dict[str, Any]) -> FusionConfig:
    cfg = _fusion(config)
    if getattr(args, "boost", None) is not None:
        cfg = dataclasses.replace(cfg, recency_boost=args.boost)
    return cfg


def cmd_search(args: argparse.Namespace, config: dict[str, Any]) -> int:
    # bad invocation, not an operational failure: usage exit code
    if not args.query.strip():
        print("error: empty query", file=sys.stderr)
        return 2
    if not Path(resolve_store_path(args, config)).exists() and not args.profiles:
        print(
            f"error: store file does not exist: {resolve_store_path(args, config)}",
            file=sys.stderr,
        )
        return 2
    profiles_cfg = config.get("profiles") if args.profiles else None
    if args.profiles:
        if not isinstance(profiles_cfg, dict) or not profiles_cfg:
            raise StashError("--profiles requires a 'profiles' object in the config file")
        names = (
            [n.strip() for n in args.profiles.split(",") if n.strip()]
            if args.profiles != "all"
            else sorted(profiles_cfg)
        )
        stores: list[Store] = []
        try:
            searchers = []
            for name in names:
                entry = profiles_cfg.get(name)
                if not isinstance(entry, dict) or "store" not in entry:
                    raise StashError(f"profile {name!r} needs a 'store' path in the config")
                st = open_store(str(entry["store"]), create_if_missing=False)
                stores.append(st)
                emb = build_provider(str(entry.get("embedder", _embedder_spec(args, config))))
                searchers.append((name, Searcher(st, emb, config=_search_fusion(args, config))))
            merged = federated_search(
                searchers, args.query, args.k, mode=args.mode
            )
            if args.json:
                _emit([m.to_json() for m in merged])
            else:
                for i, m in enumerate(merged, start=1):
                    res = m.result
                    names = ",".join(name for name, _rank in m.hits)
                    print(
                        f"{i:2d}. {m.score:.4f} hits={names} "
                        f"[{res.tier}] {res.source_uri}"
                    )
            return 0
        finally:
            for st in stores:
                st.close()

    store = _open(args, config, create=False)
    try:
        embedder = build_provider(_embedder_spec(args, config))
        searcher = Searcher(store, embedder, config=_search_fusion(args, config))
        if args.trace:
            trace = searcher.search_trace(args.query, args.k, mode=args.mode)
            payload = {
                "query": trace.query,
                "mode": trace.mode,
                "tier": trace.tier,
                "mean_idf": trace.mean_idf,
                "w_vec": trace.w_vec,
                "w_fts": trace.w_fts,
                "cutoff_multiplier": trace.cutoff_multiplier,
                "cutoff_threshold": trace.cutoff_threshold,
                "best_distance": trace.best_distance,
                "eliminations": {str(k): v for k, v in trace.eliminations.items()},
                "timings_ms": {t.stage: t.ms for t in trace.timings},
                "total_ms": trace.total_ms,
                "results": [r.to_json() for r in trace.results],
            }
            _emit(payload)
            return 0
        results = searcher.search(args.query, args.k, mode=args.mode)
        if args.json:
            _emit([r.to_json() for r in results])
        else:
            if not results:
                print("no results")
            for line in _result_lines(results):
                print(line)
        return 0
    finally:
        store.close()


def cmd_check(args: argparse.Namespace, config: dict[str, Any]) -> int:
    store = _open(args, config, create=False)
    try:
        actions: list[str] = []
        if args.repair:
            embedder = None
            if getattr(args, "embedder", None) or config.get("embedder"):
                embedder = build_provider(_embedder_spec(args, config))
            repair = store.integrity_repair(embedder)
            actions = list(repair.actions)
            report = repair.report
        else:
            report = store.integrity_check()
        payload = {"ok": report.ok, "invariants": report.to_json()}
        if args.repair:
            payload["actions"] = actions
        if args.json:
            _emit(payload)
        else:
            for inv in payload["invariants"]:
                mark = "ok " if inv["pass"] else "FAIL"
                extra = f" offenders={inv['offenders']}" if not inv["pass"] else ""
                print(f"{mark} {inv['invariant']}{extra}")
            for action in actions:
                print(f"repair: {action}")
        return 0 if report.ok else 1
    finally:
        store.close()


def cmd_stats(args: argparse.Namespace, config: dict[str, Any]) -> int:
    store = _open(args, config, create=False)
    try:
        payload = store.stats()
        payload["metrics"] = store.metrics.snapshot()
        if args.json:
            _emit(payload)
        else:
            for key in sorted(payload):
                if key == "metrics":
                    continue
                print(f"{key}: {payload[key]}")
        return 0
    finally:
        store.close()


def cmd_eval(args: argparse.Namespace, config: dict[str, Any]) -> int:
    # evaluation must never mutate the user's store: build a throwaway one
    bundle = load_beir(args.bundle)
    embedder = build_provider(_embedder_spec(args, config))
    fusion = _fusion(config)
    if not args.adaptive:
        fusion = dataclasses.replace(fusion, adaptive=False)
    with tempfile.TemporaryDirectory(prefix="stashlite-eval-") as tmp:
        store = open_store(
            Path(tmp) / "eval.db",
            config={"dimension": embedder.dimension, "embedder_id": embedder.model_id},
        )
        try:
            ingest_bundle(store, bundle, embedder)
            searcher = Searcher(store, embedder, config=fusion)
            report = run_eval(searcher, bundle, k=args.k, mode=args.mode)
        finally:
            store.close()
    payload = report.to_json()
    if not args.per_query:
        payload.pop("per_query")
    if args.json:
        _emit(payload)
    else:
        print(
            f"queries={report.n_queries} ndcg@{report.k}={report.ndcg:.4f} "
            f"p@{report.k}={report.precision:.4f} mrr={report.mrr:.4f} "
            f"p50={report.latency_ms['p50']:.1f}ms"
        )
    return 0


def cmd_sweep(args: argparse.Namespace, config: dict[str, Any]) -> int:
    store = _open(args, config, create=False)
    try:
        searcher = _searcher(store, args, config)
        relevant = [q for q in Path(args.relevant).read_text(encoding="utf-8").splitlines() if q.strip()]
        off_topic = [q for q in Path(args.off_topic).read_text(encoding="utf-8").splitlines() if q.strip()]
        report = relevance_sweep(searcher, relevant, off_topic)
        if args.json:
            _emit(report.to_json())
        else:
            print(f"best threshold {report.best_threshold:.2f} f1={report.best_f1:.4f}")
        return 0
    finally:
        store.close()


def cmd_mine(args: argparse.Namespace, config: dict[str, Any]) -> int:
    store = _open(args, config, create=False)
    try:
        searcher = _searcher(store, args, config)
        report = mine_corpus(
            searcher,
            max_queries_per_chunk=args.queries_per_chunk,
            top_k=args.top_k,
            triple_depth=args.depth,
            chunk_limit=args.limit,
        )
        written = export_triples(report.triples, args.out)
        payload = dict(report.stats)
        payload["out"] = str(args.out)
        payload["written"] = written
        if args.json:
            _emit(payload)
        else:
            print(
                f"queries={payload['queries']} "
                f"disagreement={payload['share_queries_with_disagreement']:.3f} "
                f"triples={written} -> {args.out}"
            )
        return 0
    finally:
        store.close()


def cmd_bench(args: argparse.Namespace, config: dict[str, Any]) -> int:
    report = scale_benchmark(
        args.chunks,
        dim=args.dim,
        n_queries=args.queries,
        seed=args.seed,
    )
    if args.json:
        _emit(report.to_json())
    else:
        print(
            f"chunks={report.n_chunks} dim={report.dim} ndcg={report.ndcg:.4f} "
            f"p50={report.p50_ms:.2f}ms p95={report.p95_ms:.2f}ms "
            f"build={report.build_seconds:.1f}s total={report.total_seconds:.1f}s"
        )
    return 0


def cmd_miss(args: argparse.Namespace, config: dict[str, Any]) -> int:
    if args.doc is None and args.chunk is None:
        print("error: pass --doc or --chunk to name the expected target", file=sys.stderr)
        return 2
    store = _open(args, config, create=False)
    try:
        searcher = _searcher(store, args, config)
        expected_doc = None
        if args.doc is not None:
            doc = store.find_document(args.doc, args.collection)
            if doc is None:
                raise StashError(
                    f"no document with source_uri {args.doc!r} in collection {args.collection!r}"
                )
            expected_doc = doc.doc_id
        report = miss_analysis(
            searcher,
            args.query,
            expected_doc,
            expected_chunk_id=args.chunk,
            k=args.k,
            mode=args.mode,
        )
        if args.json:
            _emit(report.to_json())
        else:
            if report.verdict is None:
                print(f"found at rank {report.details['rank']}")
            else:
                print(f"verdict: {report.verdict.value}")
                print(f"suggestion: {report.suggestion}")
        return 0
    finally:
        store.close()


def cmd_retrain(args: argparse.Namespace, config: dict[str, Any]) -> int:
    exe = os.environ.get(TRAINER_ENV) or shutil.which(TRAINER_EXE)
    if not exe:
        raise MissingComponentError(
            f"trainer component not installed: no {TRAINER_EXE!r} on PATH "
            f"and ${TRAINER_ENV} is unset"
        )
    cmd = [
        exe,
        "--triples", str(args.triples),
        "--out", str(args.model_out),
        "--epochs", str(args.epochs),
        "--lr", str(args.lr),
        "--batch", str(args.batch),
        "--seed", str(args.seed),
    ]
    proc = subprocess.run(cmd)
    if proc.returncode != 0:
        raise StashError(f"trainer exited with status {proc.returncode}")
    if args.apply:
        store = _open(args, config, create=False)
        try:
            bridge = ModelBridge(args.model_out)
            n = store.replace_all_vectors(bridge)
            print(f"re-embedded {n} chunks with {bridge.model_id}")
        finally:
            store.close()
    else:
        print(f"trained model written to {args.model_out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stashlite",
        description="Local hybrid search over a single-file chunk store.",
    )
    parser.add_argument("--store", help="path to the store database")
    parser.add_argument("--config", help="path to a JSON config file")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser, *, embedder: bool = True) -> None:
        p.add_argument("--json", action="store_true", help="emit JSON")
        if embedder:
            p.add_argument(
                "--embedder",
                help="embedder spec: test, test:<dim>, precomputed:<path>, model:<dir>",
            )

    p = sub.add_parser("ingest", help="chunk, embed and store documents")
    p.add_argument("paths", nargs="+", help="files to ingest")
    p.add_argument("--collection", default="default")
    p.add_argument("--tag", action="append", help="tag path, repeatable")
    p.add_argument("--max-tokens", type=int, default=DEFAULT_MAX_TOKENS)
    p.add_argument("--overlap", type=int, default=DEFAULT_OVERLAP)
    kind = p.add_mutually_exclusive_group()
    kind.add_argument("--code", action="store_true", help="force the code chunker")
    kind.add_argument("--text", action="store_true", help="force prose chunking")
    add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("search", help="query the store")
    p.add_argument("query")
    p.add_argument("-k", type=int, default=5)
    p.add_argument("--mode", choices=("hybrid", "vector", "fts"), default="hybrid")
    p.add_argument("--boost", type=float, help="recency boost factor B")
    p.add_argument("--trace", action="store_true", help="dump the full pipeline trace")
    p.add_argument(
        "--profiles",
        help="comma-separated profile names from the config, or 'all'",
    )
    add_common(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("check", help="verify store integrity")
    p.add_argument("--repair", action="store_true", help="fix what can be fixed")
    add_common(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("stats", help="store counts and metrics")
    add_common(p, embedder=False)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("eval", help="run ranking metrics over a bundle")
    p.add_argument("bundle", help="directory with corpus.jsonl, queries.jsonl, qrels.tsv")
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--mode", choices=("hybrid", "vector", "fts"), default="hybrid")
    p.add_argument(
        "--adaptive",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="adaptive idf-based fusion weights",
    )
    p.add_argument("--per-query", action="store_true")
    add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="calibrate the relevance distance threshold")
    p.add_argument("relevant", help="file with one on-topic query per line")
    p.add_argument("off_topic", help="file with one off-topic query per line")
    add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("mine", help="export retriever-disagreement triples")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--queries-per-chunk", type=int, default=2)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--depth", type=int, default=5)
    p.add_argument("--limit", type=int, help="max chunks to mine")
    add_common(p)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("bench", help="synthetic scale benchmark")
    p.add_argument("--chunks", type=int, default=10_000)
    p.add_argument("--dim", type=int, default=384)
    p.add_argument("--queries", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    add_common(p, embedder=False)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("miss", help="explain why a search missed its target")
    p.add_argument("query")
    p.add_argument("--doc", help="expected document source_uri")
    p.add_argument("--chunk", type=int, help="expected chunk id")
    p.add_argument("--collection", default="default")
    p.add_argument("-k", type=int, default=5)
    p.add_argument("--mode", choices=("hybrid", "vector", "fts"), default="hybrid")
    add_common(p)
    p.set_defaults(func=cmd_miss)

    p = sub.add_parser("retrain", help="fine-tune an embedder on mined triples")
    p.add_argument("--triples", required=True)
    p.add_argument("--model-out", required=True, help="output model directory")
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--lr", type=float, default=3e-6)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--apply", action="store_true", help="re-embed the store afterwards")
    add_common(p, embedder=False)
    p.set_defaults(func=cmd_retrain)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        return args.func(args, config)
    except MissingComponentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (StashError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
