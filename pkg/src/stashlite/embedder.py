"""Embedding providers: deterministic test vectors, precomputed files,
and an optional sentence-transformers bridge.

Every provider returns unit-length float32 rows; downstream distance math
assumes unit norm so cosine distance is just 1 - dot. The test provider is
a hashed bag-of-stems: no model weights, fully deterministic, and texts
sharing vocabulary land near each other, which is all the retrieval-layer
tests need.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import (
    DimensionMismatchError,
    MissingComponentError,
    PrecomputedFormatError,
    StashError,
    UnknownTextError,
)
from .textindex import tokenize_stem

DEFAULT_DIMENSION = 384
# coordinates contributed per term; 16-byte digest = 4 bytes per bundle
_BUNDLES = 4
_UNIT_TOLERANCE = 1e-6


@runtime_checkable
class EmbeddingProvider(Protocol):
    """What the store and searcher require from an embedding source."""

    dimension: int
    model_id: str

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


def _normalize_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    # all-zero rows (no terms, or full cancellation) fall back to e1
    zero = norms[:, 0] < 1e-12
    if zero.any():
        mat = mat.copy()
        mat[zero] = 0.0
        mat[zero, 0] = 1.0
        norms = np.linalg.norm(mat, axis=1, keepdims=True)
    return (mat / norms).astype(np.float32)


@lru_cache(maxsize=65536)
def _term_coordinates(term: str, dim: int) -> tuple[tuple[int, ...], tuple[float, ...]]:
    """Stable (indices, signs) for one stemmed term at one dimension."""
    digest = hashlib.blake2b(term.encode("utf-8"), digest_size=4 * _BUNDLES).digest()
    idxs = []
    signs = []
    for j in range(_BUNDLES):
        piece = digest[4 * j : 4 * j + 4]
        idxs.append(int.from_bytes(piece[:3], "big") % dim)
        signs.append(1.0 if piece[3] % 2 == 0 else -1.0)
    return tuple(idxs), tuple(signs)


class HashedStemEmbedder:
    """Deterministic bag-of-stems embedding for tests and offline use.

    Each stemmed token adds +-1 at a few hash-chosen coordinates; the sum
    is L2-normalized. Texts with no tokens embed to e1.
    """

    def __init__(self, dimension: int = DEFAULT_DIMENSION):
        if dimension < _BUNDLES:
            raise ValueError("dimension too small for the hashing scheme")
        self.dimension = dimension
        self.model_id = f"hashed-stem-{dimension}"

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dimension), dtype=np.float64)
        for row, text in enumerate(texts):
            for term in tokenize_stem(text):
                idxs, signs = _term_coordinates(term, self.dimension)
                for i, s in zip(idxs, signs):
                    out[row, i] += s
        return _normalize_rows(out)


def test_embed(texts: Sequence[str], dim: int = DEFAULT_DIMENSION) -> np.ndarray:
    """One-shot convenience wrapper over HashedStemEmbedder."""
    return HashedStemEmbedder(dim).embed(texts)


def text_digest(text: str) -> str:
    """blake2b-256 hex of the UTF-8 text; the precomputed-file key."""
    return hashlib.blake2b(text.encode("utf-8"), digest_size=32).hexdigest()


class PrecomputedEmbedder:
    """Digest-keyed vector lookup from a flat text file.

    File format, one entry per line:

        <64-hex blake2b-256 of the utf-8 text> TAB <comma-separated floats>

    Vectors are renormalized on load. Lookups for texts not present in the
    file raise UnknownTextError rather than inventing a vector.
    """

    def __init__(self, path: str | Path):
        self._path = Path(path)
        table: dict[str, np.ndarray] = {}
        dim: int | None = None
        try:
            lines = self._path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise PrecomputedFormatError(f"cannot read {self._path}: {exc}") from exc
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise PrecomputedFormatError(
                    f"{self._path}:{lineno}: expected '<digest>\\t<floats>'"
                )
            digest, payload = parts
            digest = digest.strip().lower()
            if len(digest) != 64 or any(c not in "0123456789abcdef" for c in digest):
                raise PrecomputedFormatError(
                    f"{self._path}:{lineno}: malformed digest {digest[:16]!r}..."
                )
            try:
                vec = np.array(
                    [float(x) for x in payload.split(",")], dtype=np.float64
                )
            except ValueError as exc:
                raise PrecomputedFormatError(
                    f"{self._path}:{lineno}: bad float payload"
                ) from exc
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise PrecomputedFormatError(
                    f"{self._path}:{lineno}: dimension {vec.shape[0]} != {dim}"
                )
            table[digest] = vec
        if dim is None:
            raise PrecomputedFormatError(f"{self._path}: no vectors found")
        self._table = {k: _normalize_rows(v[None, :])[0] for k, v in table.items()}
        self.dimension = int(dim)
        self.model_id = f"precomputed:{self._path.name}"

    def __len__(self) -> int:
        return len(self._table)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.empty((len(texts), self.dimension), dtype=np.float32)
        for row, text in enumerate(texts):
            digest = text_digest(text)
            vec = self._table.get(digest)
            if vec is None:
                raise UnknownTextError(
                    f"no precomputed vector for digest {digest[:16]}... "
                    f"({len(text)} chars)"
                )
            out[row] = vec
        return out


def write_precomputed(
    path: str | Path, texts: Sequence[str], vectors: np.ndarray
) -> int:
    """Write a PrecomputedEmbedder file; returns the entry count."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] != len(texts):
        raise DimensionMismatchError("one vector row per text required")
    lines = []
    for text, vec in zip(texts, vectors):
        payload = ",".join(repr(float(x)) for x in vec)
        lines.append(f"{text_digest(text)}\t{payload}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return len(lines)


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - dot(a, b) for unit vectors, clamped into [0, 2]."""
    d = 1.0 - float(np.dot(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)))
    if d < 0.0:
        return 0.0
    if d > 2.0:
        return 2.0
    return d


class ModelBridge:
    """sentence-transformers adapter, imported lazily.

    Only the retrain flow touches this; the core package must not require
    torch. Import failure surfaces as MissingComponentError so the CLI can
    map it to its missing-component exit code.
    """

    def __init__(self, model_dir: str | Path):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise MissingComponentError(
                "sentence-transformers is not installed; "
                "model-directory embedding is unavailable"
            ) from exc
        try:
            self._model = SentenceTransformer(str(model_dir), device="cpu")
        except Exception as exc:
            raise StashError(f"cannot load model from {model_dir}: {exc}") from exc
        dimension_of = getattr(
            self._model, "get_embedding_dimension", None
        ) or self._model.get_sentence_embedding_dimension
        self.dimension = int(dimension_of())
        self.model_id = f"model:{Path(model_dir).name}"

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        mat = self._model.encode(
            list(texts),
            convert_to_numpy=True,
            normalize_embeddings=True,
            show_progress_bar=False,
        )
        return _normalize_rows(np.asarray(mat, dtype=np.float64))


def build_provider(spec: str) -> EmbeddingProvider:
    """Parse an --embedder spec: test | test:<dim> | precomputed:<path> | model:<dir>."""
    if spec == "test":
        return HashedStemEmbedder()
    if spec.startswith("test:"):
        return HashedStemEmbedder(int(spec.split(":", 1)[1]))
    if spec.startswith("precomputed:"):
        return PrecomputedEmbedder(spec.split(":", 1)[1])
    if spec.startswith("model:"):
        return ModelBridge(spec.split(":", 1)[1])
    raise ValueError(f"unknown embedder spec: {spec!r}")
