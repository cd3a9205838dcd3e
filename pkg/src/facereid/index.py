"""Exact cosine top-k retrieval over a gallery, plus weighted-vote identification.

Galleries here are small (a few thousand rows), so search is exact: every
similarity is computed and ranked. Ordering is fully deterministic — ties on
similarity break toward the lower gallery row id, and vote ties break toward
the label holding the single most similar neighbor, then lexicographically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .store import EmbeddingRecord, EmbeddingStore, ValidationError, normalize


@dataclass
class Neighbor:
    row: int
    similarity: float
    identity: str | None


class GalleryIndex:
    """Immutable gallery matrix with aligned labels; queries are read-only.

    Rows are re-normalized in float64 at build time so dot products are
    cosine similarities regardless of how the store was written.
    """

    def __init__(self, matrix: np.ndarray, labels: Sequence[str | None], image_ids: Sequence[str]):
        if matrix.ndim != 2:
            raise ValidationError("gallery matrix must be 2-D")
        if matrix.shape[0] != len(labels) or len(labels) != len(image_ids):
            raise ValidationError("labels and image_ids must align with matrix rows")
        m = np.asarray(matrix, dtype=np.float64)
        norms = np.linalg.norm(m, axis=1, keepdims=True)
        if np.any(norms == 0) or not np.all(np.isfinite(m)):
            raise ValidationError("gallery rows must be finite and nonzero")
        self._matrix = m / norms
        self.labels = list(labels)
        self.image_ids = list(image_ids)

    @classmethod
    def from_records(cls, records: Sequence[EmbeddingRecord]) -> "GalleryIndex":
        matrix = np.stack([np.asarray(r.vector, dtype=np.float64) for r in records])
        return cls(matrix, [r.identity for r in records], [r.image_id for r in records])

    @classmethod
    def from_store(cls, store: EmbeddingStore) -> "GalleryIndex":
        return cls.from_records(store.records)

    def __len__(self) -> int:
        return self._matrix.shape[0]

    @property
    def dimension(self) -> int:
        return self._matrix.shape[1]

    def similarities(self, query: np.ndarray) -> np.ndarray:
        """Cosine similarity of a single query against every gallery row."""
        if len(self) == 0:
            raise ValidationError("gallery is empty")
        q = normalize(query)
        if q.shape[0] != self.dimension:
            raise ValidationError(
                f"query dimension {q.shape[0]} does not match gallery dimension {self.dimension}"
            )
        return self._matrix @ q


def topk_rows(similarities: np.ndarray, k: int) -> np.ndarray:
    """Row ids of the k largest similarities; ties ordered by ascending row id."""
    # Stable sort on the negated scores keeps equal entries in row order.
    order = np.argsort(-similarities, kind="stable")
    return order[: min(k, similarities.shape[0])]


def search_topk(index: GalleryIndex, query: np.ndarray, k: int) -> list[Neighbor]:
    """Exact top-k cosine neighbors of ``query``, best first.

    Returns min(k, n) neighbors. Raises ValidationError on k < 1, dimension
    mismatch, or an empty gallery.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    sims = index.similarities(query)
    rows = topk_rows(sims, k)
    return [Neighbor(row=int(r), similarity=float(sims[r]), identity=index.labels[r]) for r in rows]


def vote_from_neighbors(neighbors: Sequence[Neighbor]) -> tuple[str, float]:
    """Apply the weighted neighborhood vote to an already-ranked neighbor list.

    Weight is the similarity clamped at zero, so dissimilar neighbors never
    cast negative votes. Returns (identity, winning sum / total sum); the
    score is 0 when every weight is.
    """
    sums: dict[str, float] = {}
    best: dict[str, float] = {}
    for nb in neighbors:
        if nb.identity is None:
            raise ValidationError(f"gallery row {nb.row} has no identity label")
        w = max(nb.similarity, 0.0)
        sums[nb.identity] = sums.get(nb.identity, 0.0) + w
        if nb.identity not in best or nb.similarity > best[nb.identity]:
            best[nb.identity] = nb.similarity
    winner = min(sums, key=lambda label: (-sums[label], -best[label], label))
    total = sum(sums.values())
    score = sums[winner] / total if total > 0.0 else 0.0
    return winner, score


def classify_weighted_vote(index: GalleryIndex, query: np.ndarray, k: int) -> tuple[str, float]:
    """Identify ``query`` by the weighted vote of its top-k gallery neighbors."""
    return vote_from_neighbors(search_topk(index, query, k))
