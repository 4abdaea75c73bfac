"""Single-file SQLite store: documents, chunks, vectors, term streams,
search events, and the integrity machinery that keeps them in step.

Tables
------
store_meta     key/value: schema version, config blob, content epoch
documents      one row per (source_uri, collection)
chunks         ordered spans of document text, with access telemetry
vectors        one float32 blob per chunk, unit length, fixed dimension
fts_terms      one stemmed term stream per chunk (the lexical index input)
search_events  rolling log of searches, pruned to the newest 1,000

Concurrency: WAL journal, single writer, any number of readers holding
their own Store handles. One handle must not be used from two threads at
once without external coordination.

The content epoch distinguishes content writes (documents, chunks,
vectors, term streams) from telemetry writes (access counters, events):
derived caches key on the epoch, so recording a search never invalidates
the indexes that served it.
"""

from __future__ import annotations

import hashlib
import json
import logging
import sqlite3
import warnings
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyDocumentError,
    SchemaVersionError,
    StoreConfigWarning,
    StoreError,
)
from .observability import LimitsConfig, MetricsRegistry
from .textindex import tokenize_stem

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
KNOWN_SCHEMA_VERSIONS = frozenset({1})

# ids per IN(...) batch; far below any sqlite variable-count ceiling
BATCH_IDS = 900

# search_events rows kept after pruning
EVENT_LOG_CAP = 1000

_KNOWN_CONFIG_KEYS = frozenset({"dimension", "embedder_id"})

_TABLES_SQL = """
CREATE TABLE IF NOT EXISTS store_meta (
    key   TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS documents (
    doc_id      INTEGER PRIMARY KEY AUTOINCREMENT,
    source_uri  TEXT NOT NULL,
    collection  TEXT NOT NULL,
    tags        TEXT NOT NULL DEFAULT '[]',
    source_type TEXT NOT NULL DEFAULT 'text',
    chunk_count INTEGER NOT NULL,
    created_at  TEXT NOT NULL,
    UNIQUE (source_uri, collection)
);
CREATE TABLE IF NOT EXISTS chunks (
    chunk_id         INTEGER PRIMARY KEY AUTOINCREMENT,
    doc_id           INTEGER NOT NULL,
    seq              INTEGER NOT NULL,
    text             TEXT NOT NULL,
    token_count      INTEGER NOT NULL,
    access_count     INTEGER NOT NULL DEFAULT 0,
    last_accessed_at TEXT,
    content_digest   TEXT NOT NULL,
    UNIQUE (doc_id, seq)
);
CREATE INDEX IF NOT EXISTS idx_chunks_doc ON chunks (doc_id);
CREATE TABLE IF NOT EXISTS vectors (
    chunk_id INTEGER PRIMARY KEY,
    dim      INTEGER NOT NULL,
    vec      BLOB NOT NULL
);
CREATE TABLE IF NOT EXISTS fts_terms (
    chunk_id INTEGER PRIMARY KEY,
    terms    TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS search_events (
    event_id      INTEGER PRIMARY KEY AUTOINCREMENT,
    at            TEXT NOT NULL,
    query         TEXT NOT NULL,
    best_distance REAL,
    tier          TEXT NOT NULL,
    result_count  INTEGER NOT NULL,
    dismissed     INTEGER NOT NULL DEFAULT 0
);
"""

_REQUIRED_TABLES = (
    "store_meta", "documents", "chunks", "vectors", "fts_terms", "search_events",
)


def content_digest(text: str) -> str:
    """blake2b-256 hex digest of the UTF-8 text."""
    return hashlib.blake2b(text.encode("utf-8"), digest_size=32).hexdigest()


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


def _iso(ts: datetime | None) -> str | None:
    return ts.isoformat() if ts is not None else None


def _from_iso(raw: str | None) -> datetime | None:
    return datetime.fromisoformat(raw) if raw else None


# ---------------------------------------------------------------------------
# record types
# ---------------------------------------------------------------------------

class Completeness(str, Enum):
    MISSING = "missing"
    PARTIAL = "partial"
    COMPLETE = "complete"


@dataclass(frozen=True)
class DocumentRecord:
    doc_id: int
    source_uri: str
    collection: str
    tags: tuple[str, ...]
    source_type: str
    chunk_count: int
    created_at: datetime


@dataclass(frozen=True)
class ChunkRecord:
    chunk_id: int
    doc_id: int
    seq: int
    text: str
    token_count: int
    access_count: int
    last_accessed_at: datetime | None
    content_digest: str


@dataclass(frozen=True)
class ChunkBatch:
    records: tuple[ChunkRecord, ...]
    missing: tuple[int, ...]


@dataclass(frozen=True)
class SearchEvent:
    query: str
    best_distance: float | None
    tier: str
    result_count: int
    dismissed: bool = False
    at: datetime | None = None
    event_id: int | None = None


@dataclass(frozen=True)
class InvariantResult:
    invariant: str
    passed: bool
    offenders: tuple[Any, ...]

    def to_json(self) -> dict[str, Any]:
        return {
            "invariant": self.invariant,
            "pass": self.passed,
            "offenders": list(self.offenders),
        }


@dataclass(frozen=True)
class IntegrityReport:
    results: tuple[InvariantResult, ...]

    @property
    def ok(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failing(self) -> tuple[str, ...]:
        return tuple(r.invariant for r in self.results if not r.passed)

    def to_json(self) -> list[dict[str, Any]]:
        return [r.to_json() for r in self.results]


@dataclass(frozen=True)
class RepairReport:
    actions: tuple[str, ...]
    report: IntegrityReport


# ---------------------------------------------------------------------------
# store
# ---------------------------------------------------------------------------

def open_store(
    path: str | Path,
    create_if_missing: bool = True,
    *,
    config: dict[str, Any] | None = None,
    limits: LimitsConfig | None = None,
) -> "Store":
    """Open (or create) a store file and validate its schema version."""
    return Store(path, create_if_missing=create_if_missing, config=config, limits=limits)


class Store:
    def __init__(
        self,
        path: str | Path,
        create_if_missing: bool = True,
        *,
        config: dict[str, Any] | None = None,
        limits: LimitsConfig | None = None,
    ):
        self.path = Path(path)
        self.limits = limits or LimitsConfig()
        self.metrics = MetricsRegistry()
        # test seam: called inside every write transaction just before
        # commit; raising from it must leave the store unchanged
        self.write_barrier: Callable[[str], None] | None = None

        if not self.path.exists() and not create_if_missing:
            raise StoreError(f"store file does not exist: {self.path}")
        try:
            self._conn = sqlite3.connect(str(self.path), check_same_thread=False)
        except sqlite3.Error as exc:
            raise StoreError(f"cannot open {self.path}: {exc}") from exc
        self._conn.isolation_level = None  # explicit transactions only
        self._conn.row_factory = sqlite3.Row
        self._conn.execute("PRAGMA journal_mode=WAL")
        self._conn.execute("PRAGMA synchronous=NORMAL")
        self._conn.execute("PRAGMA foreign_keys=ON")
        self._closed = False

        n_tables = self._conn.execute(
            "SELECT COUNT(*) FROM sqlite_master WHERE type='table'"
        ).fetchone()[0]
        if n_tables == 0:
            self._initialize(config or {})
        else:
            self._load_meta(config or {})

    # -- lifecycle -------------------------------------------------------

    def _initialize(self, config: dict[str, Any]) -> None:
        self.schema_version = SCHEMA_VERSION
        cfg = {"dimension": 384, "embedder_id": "hashed-stem-384"}
        cfg.update(config)
        self._conn.executescript(_TABLES_SQL)
        with self._write("initialize"):
            rows = [
                ("schema_version", str(SCHEMA_VERSION)),
                ("config", json.dumps(cfg, sort_keys=True)),
                ("content_epoch", "0"),
                ("created_at", _utcnow().isoformat()),
            ]
            self._conn.executemany(
                "INSERT INTO store_meta (key, value) VALUES (?, ?)", rows
            )
        self._config = cfg

    def _load_meta(self, config: dict[str, Any]) -> None:
        try:
            row = self._conn.execute(
                "SELECT value FROM store_meta WHERE key='schema_version'"
            ).fetchone()
        except sqlite3.Error as exc:
            raise StoreError(f"{self.path} is not a store file: {exc}") from exc
        if row is None:
            raise StoreError(f"{self.path} has no schema version")
        version = int(row[0])
        if version not in KNOWN_SCHEMA_VERSIONS:
            raise SchemaVersionError(
                f"store schema version {version} is unknown to this build "
                f"(known: {sorted(KNOWN_SCHEMA_VERSIONS)})"
            )
        self.schema_version = version
        raw = self._conn.execute(
            "SELECT value FROM store_meta WHERE key='config'"
        ).fetchone()
        self._config = json.loads(raw[0]) if raw else {}
        unknown = sorted(set(self._config) - _KNOWN_CONFIG_KEYS)
        if unknown:
            warnings.warn(
                f"store config has unknown keys {unknown}; "
                f"they are preserved but ignored",
                StoreConfigWarning,
                stacklevel=3,
            )
        if config and "dimension" in config:
            if int(config["dimension"]) != int(self._config.get("dimension", 0)):
                raise StoreError(
                    f"store dimension is {self._config.get('dimension')}, "
                    f"caller expected {config['dimension']}"
                )

    @property
    def config(self) -> dict[str, Any]:
        return dict(self._config)

    @property
    def dimension(self) -> int:
        return int(self._config["dimension"])

    @property
    def embedder_id(self) -> str:
        return str(self._config.get("embedder_id", ""))

    def close(self) -> None:
        if not self._closed:
            self._conn.close()
            self._closed = True

    def __enter__(self) -> "Store":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __repr__(self) -> str:
        return f"Store({str(self.path)!r})"

    # -- transactions ------------------------------------------------------

    @contextmanager
    def _write(self, label: str):
        if self._closed:
            raise StoreError("store is closed")
        self._conn.execute("BEGIN IMMEDIATE")
        try:
            yield
            if self.write_barrier is not None:
                self.write_barrier(label)
            self._conn.execute("COMMIT")
        except BaseException:
            self._conn.execute("ROLLBACK")
            raise

    def _bump_epoch(self) -> None:
        self._conn.execute(
            "UPDATE store_meta SET value = CAST(value AS INTEGER) + 1 "
            "WHERE key='content_epoch'"
        )

    @property
    def content_epoch(self) -> int:
        row = self._conn.execute(
            "SELECT value FROM store_meta WHERE key='content_epoch'"
        ).fetchone()
        return int(row[0]) if row else 0

    # -- ingest ------------------------------------------------------------

    def add_document(
        self,
        source_uri: str,
        collection: str,
        chunks: Sequence[Any],
        vectors: np.ndarray | Sequence[Sequence[float]],
        *,
        tags: Sequence[str] = (),
        source_type: str = "text",
        created_at: datetime | None = None,
    ) -> int:
        """Insert or refresh one document atomically; returns its doc_id.

        chunks is an ordered sequence of (text, token_count) pairs or any
        objects with .text/.token_count. Re-ingesting identical content
        into the same (source_uri, collection) is a no-op that keeps
        existing chunk ids and access counters; changed content replaces
        every chunk row and moves the content epoch.
        """
        norm: list[tuple[str, int]] = []
        for c in chunks:
            if hasattr(c, "text") and hasattr(c, "token_count"):
                norm.append((str(c.text), int(c.token_count)))
            else:
                text, count = c
                norm.append((str(text), int(count)))
        if not norm:
            raise EmptyDocumentError(f"{source_uri}: no chunks to ingest")
        self.limits.check("max_chunks_per_doc", len(norm))
        total_bytes = sum(len(t.encode("utf-8")) for t, _ in norm)
        self.limits.check("max_doc_bytes", total_bytes)
        tags = tuple(tags or ())
        for tag in tags:
            self.limits.check("max_tag_depth", tag.count("/") + 1)

        mat = np.asarray(vectors, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] != len(norm):
            raise StoreError(
                f"{source_uri}: expected {len(norm)} vectors, "
                f"got shape {mat.shape}"
            )
        if mat.shape[1] != self.dimension:
            raise DimensionMismatchError(
                f"{source_uri}: vectors have dimension {mat.shape[1]}, "
                f"store is configured for {self.dimension}"
            )
        norms = np.linalg.norm(mat, axis=1)
        if (norms < 1e-12).any():
            raise StoreError(f"{source_uri}: zero vector cannot be normalized")
        mat = (mat / norms[:, None]).astype(np.float32)

        digests = [content_digest(t) for t, _ in norm]
        existing = self._conn.execute(
            "SELECT doc_id FROM documents WHERE source_uri=? AND collection=?",
            (source_uri, collection),
        ).fetchone()

        if existing is not None:
            doc_id = int(existing[0])
            old = [
                r[0]
                for r in self._conn.execute(
                    "SELECT content_digest FROM chunks WHERE doc_id=? ORDER BY seq",
                    (doc_id,),
                )
            ]
            if old == digests and self._doc_is_complete(doc_id):
                return doc_id
            with self._write("add_document:replace"):
                self._delete_chunk_rows(doc_id)
                self._conn.execute(
                    "UPDATE documents SET tags=?, source_type=?, chunk_count=? "
                    "WHERE doc_id=?",
                    (json.dumps(list(tags)), source_type, len(norm), doc_id),
                )
                self._insert_chunk_rows(doc_id, norm, digests, mat)
                self._bump_epoch()
            self.metrics.increment("ingests")
            return doc_id

        with self._write("add_document:new"):
            cur = self._conn.execute(
                "INSERT INTO documents "
                "(source_uri, collection, tags, source_type, chunk_count, created_at) "
                "VALUES (?, ?, ?, ?, ?, ?)",
                (
                    source_uri,
                    collection,
                    json.dumps(list(tags)),
                    source_type,
                    len(norm),
                    (created_at or _utcnow()).isoformat(),
                ),
            )
            doc_id = int(cur.lastrowid)
            self._insert_chunk_rows(doc_id, norm, digests, mat)
            self._bump_epoch()
        self.metrics.increment("ingests")
        return doc_id

    def _insert_chunk_rows(
        self,
        doc_id: int,
        norm: list[tuple[str, int]],
        digests: list[str],
        mat: np.ndarray,
    ) -> None:
        for seq, ((text, count), digest) in enumerate(zip(norm, digests)):
            cur = self._conn.execute(
                "INSERT INTO chunks "
                "(doc_id, seq, text, token_count, content_digest) "
                "VALUES (?, ?, ?, ?, ?)",
                (doc_id, seq, text, count, digest),
            )
            chunk_id = int(cur.lastrowid)
            self._conn.execute(
                "INSERT INTO vectors (chunk_id, dim, vec) VALUES (?, ?, ?)",
                (chunk_id, self.dimension, mat[seq].tobytes()),
            )
            self._conn.execute(
                "INSERT INTO fts_terms (chunk_id, terms) VALUES (?, ?)",
                (chunk_id, " ".join(tokenize_stem(text))),
            )

    def _delete_chunk_rows(self, doc_id: int) -> None:
        ids = [
            r[0]
            for r in self._conn.execute(
                "SELECT chunk_id FROM chunks WHERE doc_id=?", (doc_id,)
            )
        ]
        for lo in range(0, len(ids), BATCH_IDS):
            batch = ids[lo : lo + BATCH_IDS]
            marks = ",".join("?" * len(batch))
            self._conn.execute(f"DELETE FROM vectors WHERE chunk_id IN ({marks})", batch)
            self._conn.execute(f"DELETE FROM fts_terms WHERE chunk_id IN ({marks})", batch)
            self._conn.execute(f"DELETE FROM chunks WHERE chunk_id IN ({marks})", batch)

    # -- reads ---------------------------------------------------------------

    def _doc_row(self, row: sqlite3.Row) -> DocumentRecord:
        return DocumentRecord(
            doc_id=row["doc_id"],
            source_uri=row["source_uri"],
            collection=row["collection"],
            tags=tuple(json.loads(row["tags"])),
            source_type=row["source_type"],
            chunk_count=row["chunk_count"],
            created_at=_from_iso(row["created_at"]),
        )

    def _chunk_row(self, row: sqlite3.Row) -> ChunkRecord:
        return ChunkRecord(
            chunk_id=row["chunk_id"],
            doc_id=row["doc_id"],
            seq=row["seq"],
            text=row["text"],
            token_count=row["token_count"],
            access_count=row["access_count"],
            last_accessed_at=_from_iso(row["last_accessed_at"]),
            content_digest=row["content_digest"],
        )

    def get_document(self, doc_id: int) -> DocumentRecord | None:
        row = self._conn.execute(
            "SELECT * FROM documents WHERE doc_id=?", (doc_id,)
        ).fetchone()
        return self._doc_row(row) if row else None

    def find_document(self, source_uri: str, collection: str) -> DocumentRecord | None:
        row = self._conn.execute(
            "SELECT * FROM documents WHERE source_uri=? AND collection=?",
            (source_uri, collection),
        ).fetchone()
        return self._doc_row(row) if row else None

    def documents(self) -> list[DocumentRecord]:
        rows = self._conn.execute("SELECT * FROM documents ORDER BY doc_id")
        return [self._doc_row(r) for r in rows]

    def chunks_for_doc(self, doc_id: int) -> list[ChunkRecord]:
        rows = self._conn.execute(
            "SELECT * FROM chunks WHERE doc_id=? ORDER BY seq", (doc_id,)
        )
        return [self._chunk_row(r) for r in rows]

    def chunk_window(self, doc_id: int, seq: int, window: int) -> list[ChunkRecord]:
        rows = self._conn.execute(
            "SELECT * FROM chunks WHERE doc_id=? AND seq BETWEEN ? AND ? ORDER BY seq",
            (doc_id, seq - window, seq + window),
        )
        return [self._chunk_row(r) for r in rows]

    def get_chunks(self, ids: Sequence[int]) -> ChunkBatch:
        """Fetch chunk records by id, preserving input order.

        Lookups run in batches of at most 900 ids per statement; each
        batch counts once on the store.batch_lookups metric. Unknown ids
        are reported in .missing (first-seen order), never raised.
        """
        ids = [int(i) for i in ids]
        self.limits.check("max_batch_ids", len(ids))
        found: dict[int, ChunkRecord] = {}
        for lo in range(0, len(ids), BATCH_IDS):
            batch = ids[lo : lo + BATCH_IDS]
            self.metrics.increment("store.batch_lookups")
            marks = ",".join("?" * len(batch))
            rows = self._conn.execute(
                f"SELECT * FROM chunks WHERE chunk_id IN ({marks})", batch
            )
            for row in rows:
                found[row["chunk_id"]] = self._chunk_row(row)
        records = []
        missing: list[int] = []
        for cid in ids:
            rec = found.get(cid)
            if rec is not None:
                records.append(rec)
            elif cid not in missing:
                missing.append(cid)
        return ChunkBatch(records=tuple(records), missing=tuple(missing))

    def all_chunk_ids(self) -> list[int]:
        rows = self._conn.execute("SELECT chunk_id FROM chunks ORDER BY chunk_id")
        return [r[0] for r in rows]

    def iter_chunks(self) -> Iterator[ChunkRecord]:
        rows = self._conn.execute("SELECT * FROM chunks ORDER BY chunk_id")
        for row in rows:
            yield self._chunk_row(row)

    def fts_rows(self) -> Iterator[tuple[int, str]]:
        rows = self._conn.execute(
            "SELECT chunk_id, terms FROM fts_terms ORDER BY chunk_id"
        )
        for row in rows:
            yield row[0], row[1]

    def vector_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """(chunk_ids int64 ascending, float32 matrix), contiguous."""
        ids: list[int] = []
        blobs: list[bytes] = []
        for row in self._conn.execute(
            "SELECT chunk_id, vec FROM vectors ORDER BY chunk_id"
        ):
            ids.append(row[0])
            blobs.append(row[1])
        if not ids:
            dim = self.dimension
            return np.empty(0, dtype=np.int64), np.empty((0, dim), dtype=np.float32)
        mat = np.frombuffer(b"".join(blobs), dtype=np.float32)
        mat = mat.reshape(len(ids), -1)
        return np.asarray(ids, dtype=np.int64), np.ascontiguousarray(mat)

    @property
    def n_documents(self) -> int:
        return self._conn.execute("SELECT COUNT(*) FROM documents").fetchone()[0]

    @property
    def n_chunks(self) -> int:
        return self._conn.execute("SELECT COUNT(*) FROM chunks").fetchone()[0]

    # -- telemetry -------------------------------------------------------------

    def touch_chunks(self, ids: Sequence[int], at: datetime | None = None) -> None:
        """Increment access counters; a telemetry write, no epoch move."""
        ids = [int(i) for i in ids]
        if not ids:
            return
        stamp = (at or _utcnow()).isoformat()
        with self._write("touch_chunks"):
            for lo in range(0, len(ids), BATCH_IDS):
                batch = ids[lo : lo + BATCH_IDS]
                marks = ",".join("?" * len(batch))
                self._conn.execute(
                    f"UPDATE chunks SET access_count = access_count + 1, "
                    f"last_accessed_at = ? WHERE chunk_id IN ({marks})",
                    [stamp, *batch],
                )

    def reset_access_stats(self) -> None:
        with self._write("reset_access_stats"):
            self._conn.execute(
                "UPDATE chunks SET access_count = 0, last_accessed_at = NULL"
            )

    def record_search_event(self, event: SearchEvent) -> None:
        """Append one event and prune the log to the newest 1,000 rows."""
        with self._write("record_search_event"):
            self._conn.execute(
                "INSERT INTO search_events "
                "(at, query, best_distance, tier, result_count, dismissed) "
                "VALUES (?, ?, ?, ?, ?, ?)",
                (
                    (event.at or _utcnow()).isoformat(),
                    event.query,
                    event.best_distance,
                    event.tier,
                    event.result_count,
                    1 if event.dismissed else 0,
                ),
            )
            self._conn.execute(
                "DELETE FROM search_events WHERE event_id NOT IN "
                "(SELECT event_id FROM search_events ORDER BY event_id DESC LIMIT ?)",
                (EVENT_LOG_CAP,),
            )

    def search_events(self, limit: int | None = None) -> list[SearchEvent]:
        sql = "SELECT * FROM search_events ORDER BY event_id DESC"
        if limit is not None:
            sql += f" LIMIT {int(limit)}"
        out = []
        for row in self._conn.execute(sql):
            out.append(
                SearchEvent(
                    query=row["query"],
                    best_distance=row["best_distance"],
                    tier=row["tier"],
                    result_count=row["result_count"],
                    dismissed=bool(row["dismissed"]),
                    at=_from_iso(row["at"]),
                    event_id=row["event_id"],
                )
            )
        return out

    def set_event_dismissed(self, event_id: int, dismissed: bool = True) -> None:
        with self._write("set_event_dismissed"):
            self._conn.execute(
                "UPDATE search_events SET dismissed=? WHERE event_id=?",
                (1 if dismissed else 0, event_id),
            )

    @property
    def n_events(self) -> int:
        return self._conn.execute("SELECT COUNT(*) FROM search_events").fetchone()[0]

    # -- completeness and integrity ---------------------------------------------

    def _doc_is_complete(self, doc_id: int) -> bool:
        row = self._conn.execute(
            "SELECT chunk_count FROM documents WHERE doc_id=?", (doc_id,)
        ).fetchone()
        if row is None or row[0] <= 0:
            return False
        expected = row[0]
        n_chunks = self._conn.execute(
            "SELECT COUNT(*) FROM chunks WHERE doc_id=?", (doc_id,)
        ).fetchone()[0]
        if n_chunks != expected:
            return False
        n_vec = self._conn.execute(
            "SELECT COUNT(*) FROM chunks c JOIN vectors v ON v.chunk_id=c.chunk_id "
            "WHERE c.doc_id=? AND v.dim=? AND length(v.vec)=?",
            (doc_id, self.dimension, self.dimension * 4),
        ).fetchone()[0]
        if n_vec != expected:
            return False
        n_fts = self._conn.execute(
            "SELECT COUNT(*) FROM chunks c JOIN fts_terms f ON f.chunk_id=c.chunk_id "
            "WHERE c.doc_id=?",
            (doc_id,),
        ).fetchone()[0]
        return n_fts == expected

    def doc_completeness(self, source_uri: str, collection: str) -> Completeness:
        doc = self.find_document(source_uri, collection)
        if doc is None:
            return Completeness.MISSING
        if self._doc_is_complete(doc.doc_id):
            return Completeness.COMPLETE
        return Completeness.PARTIAL

    def _existing_tables(self) -> set[str]:
        rows = self._conn.execute(
            "SELECT name FROM sqlite_master WHERE type='table'"
        )
        return {r[0] for r in rows}

    def integrity_check(self) -> IntegrityReport:
        """Evaluate the five invariants read-only; order is fixed."""
        tables = self._existing_tables()
        blocked = ("blocked_by_structure",)

        # 5: structural soundness, evaluated first so the rest can bail out
        structure_offenders: list[Any] = [
            f"missing_table:{t}" for t in _REQUIRED_TABLES if t not in tables
        ]
        pragma = self._conn.execute("PRAGMA integrity_check").fetchone()[0]
        if pragma != "ok":
            structure_offenders.append(f"integrity_check:{pragma}")
        if "store_meta" in tables:
            row = self._conn.execute(
                "SELECT value FROM store_meta WHERE key='schema_version'"
            ).fetchone()
            if row is None or int(row[0]) not in KNOWN_SCHEMA_VERSIONS:
                structure_offenders.append("schema_version")
        structure = InvariantResult(
            "storage_structure", not structure_offenders, tuple(structure_offenders)
        )

        def have(*need: str) -> bool:
            return all(t in tables for t in need)

        if have("documents", "chunks"):
            rows = self._conn.execute(
                "SELECT d.doc_id FROM documents d "
                "LEFT JOIN (SELECT doc_id, COUNT(*) AS n FROM chunks GROUP BY doc_id) c "
                "ON c.doc_id = d.doc_id "
                "WHERE COALESCE(c.n, 0) != d.chunk_count ORDER BY d.doc_id"
            )
            offenders = tuple(r[0] for r in rows)
            parity = InvariantResult("chunk_count_parity", not offenders, offenders)
        else:
            parity = InvariantResult("chunk_count_parity", False, blocked)

        if have("chunks", "vectors"):
            missing_vec = [
                r[0]
                for r in self._conn.execute(
                    "SELECT c.chunk_id FROM chunks c "
                    "LEFT JOIN vectors v ON v.chunk_id=c.chunk_id "
                    "WHERE v.chunk_id IS NULL ORDER BY c.chunk_id"
                )
            ]
            orphan_vec = [
                r[0]
                for r in self._conn.execute(
                    "SELECT v.chunk_id FROM vectors v "
                    "LEFT JOIN chunks c ON c.chunk_id=v.chunk_id "
                    "WHERE c.chunk_id IS NULL ORDER BY v.chunk_id"
                )
            ]
            malformed = [
                r[0]
                for r in self._conn.execute(
                    "SELECT chunk_id FROM vectors WHERE dim != ? OR length(vec) != ? "
                    "ORDER BY chunk_id",
                    (self.dimension, self.dimension * 4),
                )
            ]
            offenders = tuple(dict.fromkeys(missing_vec + orphan_vec + malformed))
            vec_parity = InvariantResult("chunk_vector_parity", not offenders, offenders)
        else:
            vec_parity = InvariantResult("chunk_vector_parity", False, blocked)

        if have("chunks", "fts_terms"):
            fts_offenders: list[int] = [
                r[0]
                for r in self._conn.execute(
                    "SELECT c.chunk_id FROM chunks c "
                    "LEFT JOIN fts_terms f ON f.chunk_id=c.chunk_id "
                    "WHERE f.chunk_id IS NULL ORDER BY c.chunk_id"
                )
            ]
            fts_offenders += [
                r[0]
                for r in self._conn.execute(
                    "SELECT f.chunk_id FROM fts_terms f "
                    "LEFT JOIN chunks c ON c.chunk_id=f.chunk_id "
                    "WHERE c.chunk_id IS NULL ORDER BY f.chunk_id"
                )
            ]
            for row in self._conn.execute(
                "SELECT c.chunk_id, c.text, f.terms FROM chunks c "
                "JOIN fts_terms f ON f.chunk_id=c.chunk_id ORDER BY c.chunk_id"
            ):
                if row["terms"] != " ".join(tokenize_stem(row["text"])):
                    fts_offenders.append(row["chunk_id"])
            offenders = tuple(dict.fromkeys(fts_offenders))
            fts_ok = InvariantResult("text_index_consistency", not offenders, offenders)
        else:
            fts_ok = InvariantResult("text_index_consistency", False, blocked)

        if have("chunks", "documents"):
            rows = self._conn.execute(
                "SELECT c.chunk_id FROM chunks c "
                "LEFT JOIN documents d ON d.doc_id=c.doc_id "
                "WHERE d.doc_id IS NULL ORDER BY c.chunk_id"
            )
            offenders = tuple(r[0] for r in rows)
            orphans = InvariantResult("orphan_chunks", not offenders, offenders)
        else:
            orphans = InvariantResult("orphan_chunks", False, blocked)

        return IntegrityReport(
            results=(parity, vec_parity, fts_ok, orphans, structure)
        )

    def integrity_repair(self, embedder: Any = None) -> RepairReport:
        """Drive the invariants back to passing; idempotent at fixpoint.

        Never deletes user text except chunks whose document row is gone.
        Missing vectors can only be restored when an embedding provider
        of the store's dimension is supplied; without one they are left
        missing and reported. Runs repair passes until a pass changes
        nothing, then re-checks.
        """
        all_actions: list[str] = []
        for _pass in range(5):
            report = self.integrity_check()
            if report.ok:
                break
            actions = self._repair_pass(report, embedder)
            all_actions.extend(actions)
            if not actions:
                break
        final = self.integrity_check()
        if all_actions:
            logger.info("integrity repair: %s", "; ".join(all_actions))
        return RepairReport(actions=tuple(all_actions), report=final)

    def _repair_pass(self, report: IntegrityReport, embedder: Any) -> list[str]:
        actions: list[str] = []
        by_name = {r.invariant: r for r in report.results}

        structure = by_name["storage_structure"]
        if not structure.passed:
            missing = [
                o.split(":", 1)[1]
                for o in structure.offenders
                if isinstance(o, str) and o.startswith("missing_table:")
            ]
            if missing:
                self._conn.executescript(_TABLES_SQL)
                actions.append(f"recreated tables: {', '.join(missing)}")
            hard = [
                o
                for o in structure.offenders
                if isinstance(o, str) and o.startswith("integrity_check:")
            ]
            if hard:
                # page-level corruption is beyond row surgery; report only
                logger.error("unrepairable structural damage: %s", hard)

        tables = self._existing_tables()
        if not all(t in tables for t in _REQUIRED_TABLES):
            return actions

        orphans = by_name["orphan_chunks"]
        if not orphans.passed and orphans.offenders != ("blocked_by_structure",):
            ids = [int(o) for o in orphans.offenders]
            with self._write("repair:orphan_chunks"):
                for lo in range(0, len(ids), BATCH_IDS):
                    batch = ids[lo : lo + BATCH_IDS]
                    marks = ",".join("?" * len(batch))
                    self._conn.execute(
                        f"DELETE FROM vectors WHERE chunk_id IN ({marks})", batch
                    )
                    self._conn.execute(
                        f"DELETE FROM fts_terms WHERE chunk_id IN ({marks})", batch
                    )
                    self._conn.execute(
                        f"DELETE FROM chunks WHERE chunk_id IN ({marks})", batch
                    )
                self._bump_epoch()
            actions.append(f"deleted {len(ids)} orphan chunks")

        vec = by_name["chunk_vector_parity"]
        if not vec.passed and vec.offenders != ("blocked_by_structure",):
            with self._write("repair:vectors"):
                orphan_vec = [
                    r[0]
                    for r in self._conn.execute(
                        "SELECT v.chunk_id FROM vectors v "
                        "LEFT JOIN chunks c ON c.chunk_id=v.chunk_id "
                        "WHERE c.chunk_id IS NULL"
                    )
                ]
                malformed = [
                    r[0]
                    for r in self._conn.execute(
                        "SELECT chunk_id FROM vectors WHERE dim != ? OR length(vec) != ?",
                        (self.dimension, self.dimension * 4),
                    )
                ]
                drop = list(dict.fromkeys(orphan_vec + malformed))
                for lo in range(0, len(drop), BATCH_IDS):
                    batch = drop[lo : lo + BATCH_IDS]
                    marks = ",".join("?" * len(batch))
                    self._conn.execute(
                        f"DELETE FROM vectors WHERE chunk_id IN ({marks})", batch
                    )
                if drop:
                    actions.append(f"dropped {len(drop)} orphan or malformed vectors")
                missing_rows = self._conn.execute(
                    "SELECT c.chunk_id, c.text FROM chunks c "
                    "LEFT JOIN vectors v ON v.chunk_id=c.chunk_id "
                    "WHERE v.chunk_id IS NULL ORDER BY c.chunk_id"
                ).fetchall()
                if missing_rows:
                    if embedder is not None and embedder.dimension == self.dimension:
                        texts = [r["text"] for r in missing_rows]
                        mat = np.asarray(embedder.embed(texts), dtype=np.float32)
                        for row, vec_row in zip(missing_rows, mat):
                            self._conn.execute(
                                "INSERT INTO vectors (chunk_id, dim, vec) "
                                "VALUES (?, ?, ?)",
                                (row["chunk_id"], self.dimension, vec_row.tobytes()),
                            )
                        actions.append(f"re-embedded {len(missing_rows)} chunks")
                    else:
                        logger.warning(
                            "%d chunks lack vectors and no embedder of dimension "
                            "%d was supplied",
                            len(missing_rows),
                            self.dimension,
                        )
                if drop or missing_rows:
                    self._bump_epoch()

        fts = by_name["text_index_consistency"]
        if not fts.passed and fts.offenders != ("blocked_by_structure",):
            with self._write("repair:fts"):
                self._conn.execute(
                    "DELETE FROM fts_terms WHERE chunk_id NOT IN "
                    "(SELECT chunk_id FROM chunks)"
                )
                rebuilt = 0
                for row in self._conn.execute(
                    "SELECT c.chunk_id, c.text, f.terms FROM chunks c "
                    "LEFT JOIN fts_terms f ON f.chunk_id=c.chunk_id "
                    "ORDER BY c.chunk_id"
                ).fetchall():
                    expected = " ".join(tokenize_stem(row["text"]))
                    if row["terms"] != expected:
                        self._conn.execute(
                            "INSERT INTO fts_terms (chunk_id, terms) VALUES (?, ?) "
                            "ON CONFLICT(chunk_id) DO UPDATE SET terms=excluded.terms",
                            (row["chunk_id"], expected),
                        )
                        rebuilt += 1
                self._bump_epoch()
            actions.append(f"rebuilt {rebuilt} term streams")

        parity = by_name["chunk_count_parity"]
        if not parity.passed and parity.offenders != ("blocked_by_structure",):
            with self._write("repair:chunk_counts"):
                self._conn.execute(
                    "UPDATE documents SET chunk_count = "
                    "(SELECT COUNT(*) FROM chunks WHERE chunks.doc_id = documents.doc_id)"
                )
                self._bump_epoch()
            actions.append(
                f"recounted chunks for {len(parity.offenders)} documents"
            )

        return actions

    # -- bulk re-embedding ----------------------------------------------------

    def replace_all_vectors(self, provider: Any, batch_size: int = 256) -> int:
        """Re-embed every chunk with `provider` and swap the vectors in.

        Updates the stored dimension and embedder id to match the
        provider. One transaction: a crash mid-way leaves the old
        vectors in place.
        """
        chunks = list(self.iter_chunks())
        dim = int(provider.dimension)
        with self._write("replace_all_vectors"):
            self._conn.execute("DELETE FROM vectors")
            for lo in range(0, len(chunks), batch_size):
                batch = chunks[lo : lo + batch_size]
                mat = np.asarray(
                    provider.embed([c.text for c in batch]), dtype=np.float64
                )
                norms = np.linalg.norm(mat, axis=1, keepdims=True)
                mat = (mat / np.maximum(norms, 1e-12)).astype(np.float32)
                for rec, row in zip(batch, mat):
                    self._conn.execute(
                        "INSERT INTO vectors (chunk_id, dim, vec) VALUES (?, ?, ?)",
                        (rec.chunk_id, dim, row.tobytes()),
                    )
            self._config = dict(
                self._config, dimension=dim, embedder_id=str(provider.model_id)
            )
            self._conn.execute(
                "UPDATE store_meta SET value=? WHERE key='config'",
                (json.dumps(self._config, sort_keys=True),),
            )
            self._bump_epoch()
        return len(chunks)

    # -- reporting -------------------------------------------------------------

    def stats(self) -> dict[str, Any]:
        per_collection = {
            row[0]: row[1]
            for row in self._conn.execute(
                "SELECT collection, COUNT(*) FROM documents GROUP BY collection "
                "ORDER BY collection"
            )
        }
        chunks_by_kind = {
            row[0]: row[1]
            for row in self._conn.execute(
                "SELECT d.source_type, COUNT(*) FROM chunks c "
                "JOIN documents d ON d.doc_id = c.doc_id "
                "GROUP BY d.source_type ORDER BY d.source_type"
            )
        }
        n_vectors = self._conn.execute("SELECT COUNT(*) FROM vectors").fetchone()[0]
        try:
            file_bytes = self.path.stat().st_size
        except OSError:
            file_bytes = 0
        return {
            "path": str(self.path),
            "schema_version": self.schema_version,
            "dimension": self.dimension,
            "embedder_id": self.embedder_id,
            "content_epoch": self.content_epoch,
            "documents": self.n_documents,
            "chunks": self.n_chunks,
            "chunks_by_kind": chunks_by_kind,
            "vectors": n_vectors,
            "events": self.n_events,
            "file_bytes": file_bytes,
            "collections": per_collection,
        }
