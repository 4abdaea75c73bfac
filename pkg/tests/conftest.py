"""Shared fixtures: tmp stores and two small deliberately shaped corpora."""

from __future__ import annotations

import pytest

from stashlite import FusionConfig, HashedStemEmbedder, Searcher, open_store
from stashlite.chunker import semantic_chunk

DIM = 64

# Two topical clusters with disjoint vocabulary. The hashed bag-of-stems
# embedder makes cosine track lexical overlap, so cluster membership is
# recoverable from vectors and from BM25 alike.
COOKING_DOCS = {
    "cook/bread.md": (
        "Knead the dough until the gluten turns elastic and smooth. Proof the "
        "dough in a warm spot until it doubles.\n\nBake the loaf on a hot stone "
        "and steam the oven for a crisp crust."
    ),
    "cook/soup.md": (
        "Simmer the stock with roasted bones and skim the foam. Season the "
        "broth late so the salt stays balanced.\n\nFinish the soup with fresh "
        "herbs and a splash of vinegar for brightness."
    ),
    "cook/sauce.md": (
        "Whisk the butter into the reduction one cube at a time to emulsify. "
        "Keep the sauce below a simmer so it never splits.\n\nStrain the sauce "
        "through fine mesh before plating."
    ),
}
PROGRAMMING_DOCS = {
    "code/parser.md": (
        "The parser builds a syntax tree from the token stream using recursive "
        "descent. Error recovery skips to the next statement boundary.\n\n"
        "Precedence climbing handles binary operators without deep recursion."
    ),
    "code/gc.md": (
        "The garbage collector traces live objects from the root set and "
        "sweeps unmarked allocations.\n\nA generational nursery keeps young "
        "objects cheap to collect."
    ),
    "code/net.md": (
        "The network layer retries idempotent requests with exponential "
        "backoff and jitter.\n\nConnection pooling reuses sockets per host to "
        "amortize handshake cost."
    ),
}


def build_store(path, docs, *, dim=DIM, collection="default"):
    store = open_store(path, config={"dimension": dim})
    emb = HashedStemEmbedder(dim)
    for uri, text in docs.items():
        spans = semantic_chunk(text, 60, 10)
        vecs = emb.embed([s.text for s in spans])
        store.add_document(
            uri, collection, [(s.text, s.token_count) for s in spans], vecs
        )
    return store, emb


@pytest.fixture
def two_cluster(tmp_path):
    docs = dict(COOKING_DOCS)
    docs.update(PROGRAMMING_DOCS)
    store, emb = build_store(tmp_path / "two_cluster.db", docs)
    yield store, emb
    store.close()


@pytest.fixture
def searcher(two_cluster):
    store, emb = two_cluster
    return Searcher(store, emb, config=FusionConfig())


@pytest.fixture
def empty_store(tmp_path):
    store = open_store(tmp_path / "empty.db", config={"dimension": DIM})
    yield store
    store.close()
