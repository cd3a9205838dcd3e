"""Corpus mining: confidence-ranked retention and seeded subsampling.

Low-resolution corpora yield mostly unusable crops, so the filter keeps only
the top slice of the confidence ranking and then thins that slice uniformly
to balance quality against track diversity. Both stages are deterministic
given (records, fractions, seed).
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol, Sequence, TypeVar

import numpy as np

from .store import ValidationError


class ScoredRecord(Protocol):
    """Anything with a stable id and a detector confidence."""

    @property
    def image_id(self) -> str: ...

    @property
    def confidence(self) -> float: ...


R = TypeVar("R", bound=ScoredRecord)


@dataclass(frozen=True)
class MinedRecord:
    """One mined face crop candidate, as read back from a pipeline file."""

    image_id: str
    video_id: str
    frame: int
    confidence: float
    source: str = "default"


def load_mined_records(path, source: str = "default") -> list[MinedRecord]:
    """Read a track file (8 columns) or raw detections file (7 columns).

    Track rows already carry a stable crop id; plain detections get one
    derived from their line number.
    """
    records = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) == 8:
            vid, frame, _, _, _, _, score, track_id = parts
            image_id = f"{vid}:f{int(frame):06d}:t{int(track_id):04d}"
        elif len(parts) == 7:
            vid, frame, _, _, _, _, score = parts
            image_id = f"{vid}:f{int(frame):06d}:d{lineno:06d}"
        else:
            raise ValidationError(f"{path}:{lineno}: expected 7 or 8 fields, found {len(parts)}")
        records.append(
            MinedRecord(
                image_id=image_id,
                video_id=vid,
                frame=int(frame),
                confidence=float(score),
                source=source,
            )
        )
    return records


@dataclass(frozen=True)
class CorpusStats:
    source: str
    videos: int
    frames: int
    raw_detections: int
    filtered_detections: int

    def __post_init__(self) -> None:
        counts = (self.videos, self.frames, self.raw_detections, self.filtered_detections)
        if any(c < 0 for c in counts):
            raise ValidationError("corpus counts must be non-negative")
        if self.filtered_detections > self.raw_detections:
            raise ValidationError("filtered count cannot exceed raw count")


def filter_corpus(
    records: Sequence[R],
    keep_fraction: float,
    subsample_fraction: float,
    seed: int,
) -> list[R]:
    """Keep the ceil(keep_fraction * n) most confident records, then sample
    floor(subsample_fraction * m) of those without replacement.

    Confidence ties rank by image_id. Output is in canonical image_id order.
    Empty input yields empty output.
    """
    if not 0.0 < keep_fraction <= 1.0 or not 0.0 < subsample_fraction <= 1.0:
        raise ValidationError("fractions must lie in (0, 1]")
    n = len(records)
    if n == 0:
        return []
    ranked = sorted(records, key=lambda r: (-r.confidence, r.image_id))
    kept = ranked[: math.ceil(keep_fraction * n)]
    take = math.floor(subsample_fraction * len(kept))
    rng = np.random.default_rng(seed)
    chosen_idx = rng.choice(len(kept), size=take, replace=False)
    chosen = [kept[i] for i in chosen_idx]
    return sorted(chosen, key=lambda r: r.image_id)


def stage1_cutoff(records: Sequence[R], keep_fraction: float) -> float:
    """Lowest confidence that survives the retention stage."""
    if not records:
        raise ValidationError("cutoff undefined for an empty corpus")
    ranked = sorted(records, key=lambda r: (-r.confidence, r.image_id))
    return ranked[math.ceil(keep_fraction * len(records)) - 1].confidence


def corpus_stats(
    raw_by_source: Mapping[str, Sequence],
    filtered_by_source: Mapping[str, Sequence],
) -> list[CorpusStats]:
    """Per-source tallies before and after filtering, sorted by source name.

    ``videos`` counts distinct video ids and ``frames`` distinct
    (video, frame) pairs among the raw records; records lacking video/frame
    attributes (e.g. portrait corpora) tally zero for both.
    """
    stats = []
    for source in sorted(raw_by_source):
        raw = raw_by_source[source]
        filtered = filtered_by_source.get(source, [])
        videos = {r.video_id for r in raw if hasattr(r, "video_id")}
        frames = {(r.video_id, r.frame) for r in raw if hasattr(r, "video_id")}
        stats.append(
            CorpusStats(
                source=source,
                videos=len(videos),
                frames=len(frames),
                raw_detections=len(raw),
                filtered_detections=len(filtered),
            )
        )
    return stats


def filter_by_source(
    records_by_source: Mapping[str, Sequence[R]],
    fractions: Mapping[str, tuple[float, float]],
    default: tuple[float, float],
    seed: int,
) -> dict[str, list[R]]:
    """Apply per-source (keep, subsample) fractions; unlisted sources use the default.

    Each source gets its own derived seed so adding a source never perturbs
    the sampling of the others.
    """
    out = {}
    for source in sorted(records_by_source):
        keep, sub = fractions.get(source, default)
        derived = int(
            np.random.SeedSequence([seed, zlib.crc32(source.encode("utf-8"))]).generate_state(1)[0]
        )
        out[source] = filter_corpus(records_by_source[source], keep, sub, derived)
    return out
