"""Local-first hybrid retrieval over a single SQLite file.

Lexical BM25 and exact-kNN cosine search fused with reciprocal rank
fusion, plus chunking, integrity checking, disagreement mining and an
evaluation harness. No services, no daemons: open a store, ingest,
search.
"""

from .chunker import ChunkSpan, code_chunk, semantic_chunk
from .embedder import (
    EmbeddingProvider,
    HashedStemEmbedder,
    ModelBridge,
    PrecomputedEmbedder,
    build_provider,
    test_embed,
    text_digest,
)
from .errors import StashError
from .evalharness import EvalBundle, load_beir, run_eval
from .miner import mine_corpus, mine_disagreement
from .observability import LimitsConfig, miss_analysis
from .retrieval import FusionConfig, SearchResult, Searcher, federated_search
from .store import Store, content_digest, open_store

__version__ = "0.1.0"

__all__ = [
    "ChunkSpan",
    "EmbeddingProvider",
    "EvalBundle",
    "FusionConfig",
    "HashedStemEmbedder",
    "LimitsConfig",
    "ModelBridge",
    "PrecomputedEmbedder",
    "SearchResult",
    "Searcher",
    "StashError",
    "Store",
    "__version__",
    "build_provider",
    "code_chunk",
    "content_digest",
    "federated_search",
    "load_beir",
    "mine_corpus",
    "mine_disagreement",
    "miss_analysis",
    "open_store",
    "run_eval",
    "semantic_chunk",
    "test_embed",
    "text_digest",
]
