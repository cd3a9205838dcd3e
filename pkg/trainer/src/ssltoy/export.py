"""Bridge to the re-ID pipeline: write embedding stores in its on-disk format.

The format is the pipeline's published interchange contract: a binary file
(magic ``CFE1``, u32 version=1, u32 dimension, u64 row count, u8 normalized
flag, 3 pad bytes, little-endian row-major float32 rows) plus a
``<path>.meta.jsonl`` sidecar with one JSON object per row.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .data import ImageMeta
from .model import DistillNet

_HEADER = struct.Struct("<4sIIQB3x")
_MAGIC = b"CFE1"
_VERSION = 1


def write_embedding_store(
    vectors: np.ndarray,
    metadata: Sequence[dict],
    path: str | Path,
    normalized: bool = True,
) -> None:
    path = Path(path)
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    if vectors.ndim != 2 or vectors.shape[0] != len(metadata):
        raise ValueError("vectors must be (n, d) aligned with metadata")
    n, d = vectors.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, d, n, int(normalized)))
        fh.write(vectors.tobytes())
    with open(Path(str(path) + ".meta.jsonl"), "w", encoding="utf-8") as fh:
        for meta in metadata:
            record = {
                "image_id": meta["image_id"],
                "track_id": meta.get("track_id"),
                "identity": meta.get("identity"),
                "source": meta.get("source", "ssltoy"),
                "confidence": meta.get("confidence", 1.0),
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


@torch.no_grad()
def embed_images(net: DistillNet, images: torch.Tensor, batch_size: int = 64) -> np.ndarray:
    """Deterministic full-frame embeddings, L2-normalized float32."""
    net.eval()
    chunks = []
    for start in range(0, len(images), batch_size):
        emb = net.embed(images[start : start + batch_size])
        chunks.append(torch.nn.functional.normalize(emb, dim=-1))
    return torch.cat(chunks).numpy().astype(np.float32)


def export_embeddings(
    net: DistillNet,
    images: torch.Tensor,
    metas: Sequence[ImageMeta],
    out_path: str | Path,
    source: str = "ssltoy",
) -> int:
    """Embed every image and write the store pair; returns the row count."""
    vectors = embed_images(net, images)
    metadata = [
        {
            "image_id": m.image_id,
            "track_id": m.track_id,
            "identity": m.identity,
            "source": source,
            "confidence": 1.0,
        }
        for m in metas
    ]
    write_embedding_store(vectors, metadata, out_path, normalized=True)
    return len(metadata)
