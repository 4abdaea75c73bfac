"""Vector leg: exact brute-force cosine kNN over a flat float32 matrix.

No approximate structure on purpose: at desk scale (tens of thousands of
chunks) one BLAS matrix-vector product beats maintaining an ANN graph,
and exactness keeps every downstream ranking property provable. The
matrix is rebuilt from the store whenever the content epoch moves.

Total order: ascending distance, ties broken by ascending chunk id, so a
k-NN list is always a prefix of any longer one for the same query.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatchError, EmptyIndexError
from .store import Store


class VecIndex:
    def __init__(self, store: Store):
        self._store = store
        self._epoch = -1
        self._ids = np.empty(0, dtype=np.int64)
        self._mat = np.empty((0, store.dimension), dtype=np.float32)
        self._pos: dict[int, int] = {}

    def _ensure(self) -> None:
        epoch = self._store.content_epoch
        if epoch != self._epoch:
            ids, mat = self._store.vector_matrix()
            assert mat.flags["C_CONTIGUOUS"]
            self._ids = ids
            self._mat = mat
            self._pos = {int(cid): i for i, cid in enumerate(ids)}
            self._epoch = epoch

    @property
    def size(self) -> int:
        self._ensure()
        return int(self._ids.shape[0])

    @property
    def dimension(self) -> int:
        return self._store.dimension

    def _check_query(self, query: np.ndarray) -> np.ndarray:
        q = np.asarray(query, dtype=np.float32).reshape(-1)
        if q.shape[0] != self._mat.shape[1]:
            raise DimensionMismatchError(
                f"query has dimension {q.shape[0]}, index has {self._mat.shape[1]}"
            )
        return q

    def knn(self, query: np.ndarray, n: int) -> list[tuple[int, float]]:
        """Top-n (chunk_id, cosine_distance), exact, full scan."""
        self._ensure()
        if self._ids.shape[0] == 0:
            raise EmptyIndexError("vector index is empty")
        if n <= 0:
            return []
        q = self._check_query(query)
        sims = self._mat @ q
        dist = 1.0 - sims.astype(np.float64)
        np.clip(dist, 0.0, 2.0, out=dist)
        order = np.lexsort((self._ids, dist))[:n]
        return [(int(self._ids[i]), float(dist[i])) for i in order]

    def distance(self, chunk_id: int, query: np.ndarray) -> float | None:
        """Cosine distance of one stored chunk to the query, or None."""
        self._ensure()
        pos = self._pos.get(int(chunk_id))
        if pos is None:
            return None
        q = self._check_query(query)
        d = 1.0 - float(np.dot(self._mat[pos].astype(np.float64), q.astype(np.float64)))
        return min(2.0, max(0.0, d))

    def vector_for(self, chunk_id: int) -> np.ndarray | None:
        """The stored unit vector for a chunk, or None if unknown."""
        self._ensure()
        pos = self._pos.get(int(chunk_id))
        if pos is None:
            return None
        return self._mat[pos]
