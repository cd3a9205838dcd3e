"""Embedding store: bit-exact persistence of feature matrices with per-row metadata.

A store on disk is a file pair:

* ``<path>`` — binary matrix: 4-byte magic ``CFE1``, u32 version (=1),
  u32 dimension, u64 row count, u8 normalized flag, 3 pad bytes, then
  row-major little-endian float32 data.
* ``<path>.meta.jsonl`` — one JSON object per row, in row order, with
  fields image_id, track_id, identity, source, confidence.

Stores are immutable after load; any number of readers may share one.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import numpy as np

MAGIC = b"CFE1"
VERSION = 1
_HEADER = struct.Struct("<4sIIQB3x")

NORM_ATOL = 1e-6


class StoreFormatError(Exception):
    """Base for malformed store files."""


class BadMagicError(StoreFormatError):
    pass


class BadVersionError(StoreFormatError):
    pass


class RowCountMismatchError(StoreFormatError):
    """Matrix row count disagrees with the metadata sidecar."""


class TruncatedMatrixError(StoreFormatError):
    """Binary payload shorter than header promises."""


class ValidationError(ValueError):
    """Input violates a documented precondition."""


class ZeroVectorError(ValidationError):
    pass


class NonFiniteVectorError(ValidationError):
    pass


@dataclass
class EmbeddingRecord:
    """One face crop: metadata plus its feature vector."""

    image_id: str
    vector: np.ndarray
    track_id: str | None = None
    identity: str | None = None
    source: str = ""
    confidence: float = 1.0

    def with_vector(self, vector: np.ndarray) -> "EmbeddingRecord":
        return replace(self, vector=vector)


@dataclass
class EmbeddingStore:
    """An ordered record list sharing one dimension, plus the normalized flag."""

    records: list[EmbeddingRecord]
    dimension: int
    normalized: bool = True

    def __len__(self) -> int:
        return len(self.records)

    def matrix(self) -> np.ndarray:
        """Row-major float32 matrix aligned with ``records``."""
        if not self.records:
            return np.empty((0, self.dimension), dtype=np.float32)
        return np.stack([r.vector.astype(np.float32, copy=False) for r in self.records])

    def by_image_id(self) -> dict[str, EmbeddingRecord]:
        return {r.image_id: r for r in self.records}


def normalize(vector: np.ndarray) -> np.ndarray:
    """Scale ``vector`` to unit L2 norm (float64; idempotent to 1e-6).

    Raises:
        NonFiniteVectorError: any component is NaN or infinite.
        ZeroVectorError: the norm is zero.
    """
    v = np.asarray(vector, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise NonFiniteVectorError("vector has non-finite components")
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ZeroVectorError("cannot normalize a zero vector")
    return v / norm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; on unit vectors this is just the dot product."""
    return float(np.dot(normalize(a), normalize(b)))


def build_store(
    records: Iterable[EmbeddingRecord], *, normalize_vectors: bool = True
) -> EmbeddingStore:
    """Assemble and validate a store, normalizing rows unless told not to.

    Normalization happens here, once, so every downstream consumer can treat
    dot products as cosine similarities.
    """
    recs = list(records)
    if recs:
        dimension = int(np.asarray(recs[0].vector).shape[0])
    else:
        dimension = 0
    if recs and normalize_vectors:
        recs = [r.with_vector(normalize(r.vector).astype(np.float32)) for r in recs]
    store = EmbeddingStore(records=recs, dimension=dimension, normalized=normalize_vectors)
    validate_store(store)
    return store


def validate_store(store: EmbeddingStore) -> None:
    """Check the record-level invariants; raise ValidationError on the first breach."""
    if store.records and store.dimension < 2:
        raise ValidationError("store dimension must be >= 2")
    seen: set[str] = set()
    for rec in store.records:
        v = np.asarray(rec.vector)
        if v.ndim != 1 or v.shape[0] != store.dimension:
            raise ValidationError(
                f"record {rec.image_id!r}: vector has shape {v.shape}, expected ({store.dimension},)"
            )
        if not np.all(np.isfinite(v)):
            raise NonFiniteVectorError(f"record {rec.image_id!r}: non-finite vector")
        if store.normalized and abs(float(np.linalg.norm(v.astype(np.float64))) - 1.0) > NORM_ATOL:
            raise ValidationError(f"record {rec.image_id!r}: row is not unit-norm")
        if not 0.0 <= rec.confidence <= 1.0:
            raise ValidationError(
                f"record {rec.image_id!r}: confidence {rec.confidence} outside [0, 1]"
            )
        if rec.image_id in seen:
            raise ValidationError(f"duplicate image_id {rec.image_id!r}")
        seen.add(rec.image_id)


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.jsonl")


def save_store(store: EmbeddingStore, path: str | Path) -> None:
    """Write the binary matrix and metadata sidecar; single-owner operation."""
    path = Path(path)
    validate_store(store)
    matrix = np.ascontiguousarray(store.matrix(), dtype="<f4")
    header = _HEADER.pack(MAGIC, VERSION, store.dimension, len(store.records), int(store.normalized))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(matrix.tobytes())
    with open(_sidecar_path(path), "w", encoding="utf-8") as fh:
        for rec in store.records:
            fh.write(
                json.dumps(
                    {
                        "image_id": rec.image_id,
                        "track_id": rec.track_id,
                        "identity": rec.identity,
                        "source": rec.source,
                        "confidence": rec.confidence,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_store(path: str | Path) -> EmbeddingStore:
    """Read a store pair back; the inverse of save_store, bit-exact on vectors."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise TruncatedMatrixError(f"{path}: file shorter than header")
    magic, version, dimension, count, normalized = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise BadVersionError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 4 * dimension * count
    if len(raw) < expected:
        raise TruncatedMatrixError(
            f"{path}: expected {expected} bytes for {count} rows, found {len(raw)}"
        )
    matrix = np.frombuffer(raw, dtype="<f4", count=dimension * count, offset=_HEADER.size)
    matrix = matrix.reshape(count, dimension)

    meta_lines = _sidecar_path(path).read_text(encoding="utf-8").splitlines()
    if len(meta_lines) != count:
        raise RowCountMismatchError(
            f"{path}: matrix has {count} rows but sidecar has {len(meta_lines)} records"
        )
    records = []
    for row, line in zip(matrix, meta_lines):
        meta = json.loads(line)
        records.append(
            EmbeddingRecord(
                image_id=meta["image_id"],
                vector=np.array(row, dtype=np.float32),
                track_id=meta["track_id"],
                identity=meta["identity"],
                source=meta["source"],
                confidence=meta["confidence"],
            )
        )
    store = EmbeddingStore(records=records, dimension=int(dimension), normalized=bool(normalized))
    validate_store(store)
    return store
