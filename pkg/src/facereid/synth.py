"""Synthetic desk-scale fixtures: detection streams, scripted scenarios, and
clustered embedding corpora. Everything here is seed-deterministic, and the
generator parameters double as the ground truth the tests check against.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .store import EmbeddingRecord, EmbeddingStore, ValidationError, build_store
from .tracker import Detection

# Long-tailed portrait composition: (images_per_identity, identity_count).
# 376 identities, 2853 images, 15205 within-identity pairs.
LONGTAIL_PORTRAIT_SIZES: tuple[tuple[int, int], ...] = ((41, 10), (8, 33), (7, 181), (6, 152))


def synth_detection_corpus(
    videos: int, frames_per_video: int, count: int, seed: int
) -> list[Detection]:
    """Exactly ``count`` detections scattered over a video grid, random scores."""
    if videos < 1 or frames_per_video < 1 or count < 0:
        raise ValidationError("corpus dimensions must be positive")
    rng = np.random.default_rng(seed)
    video_idx = rng.integers(0, videos, size=count)
    frame_idx = rng.integers(0, frames_per_video, size=count)
    xs = rng.uniform(0, 600, size=count)
    ys = rng.uniform(0, 440, size=count)
    ws = rng.uniform(12, 90, size=count)
    hs = rng.uniform(12, 90, size=count)
    scores = rng.uniform(0.0, 1.0, size=count)
    dets = [
        Detection(
            video_id=f"v{video_idx[i]:05d}",
            frame=int(frame_idx[i]),
            x=float(xs[i]),
            y=float(ys[i]),
            w=float(ws[i]),
            h=float(hs[i]),
            score=float(scores[i]),
        )
        for i in range(count)
    ]
    dets.sort(key=lambda d: (d.video_id, d.frame))
    return dets


def synth_tracking_stream(
    videos: int,
    frames: int,
    objects: int,
    seed: int,
    dip_rate: float = 0.2,
) -> list[Detection]:
    """Constant-velocity objects with jittered boxes and occasional score dips.

    Every object lives for the whole video, so the stream holds exactly
    videos * frames * objects detections.
    """
    rng = np.random.default_rng(seed)
    dets = []
    for v in range(videos):
        vid = f"v{v:04d}"
        x0 = rng.uniform(60, 480, size=objects)
        y0 = rng.uniform(60, 340, size=objects)
        vel = rng.uniform(-5, 5, size=(objects, 2))
        ww = rng.uniform(30, 70, size=objects)
        hh = rng.uniform(30, 70, size=objects)
        base = rng.uniform(0.72, 0.95, size=objects)
        dips = []
        for _ in range(objects):
            if frames > 4 and rng.random() < dip_rate:
                start = int(rng.integers(1, frames - 2))
                dips.append((start, start + int(rng.integers(1, 3))))
            else:
                dips.append((-1, -1))
        for f in range(frames):
            for o in range(objects):
                lo, hi = dips[o]
                if lo <= f < hi:
                    score = float(rng.uniform(0.12, 0.45))
                else:
                    score = float(np.clip(base[o] + rng.normal(0, 0.03), 0.05, 0.99))
                dets.append(
                    Detection(
                        video_id=vid,
                        frame=f,
                        x=float(x0[o] + vel[o, 0] * f + rng.normal(0, 0.8)),
                        y=float(y0[o] + vel[o, 1] * f + rng.normal(0, 0.8)),
                        w=float(ww[o]),
                        h=float(hh[o]),
                        score=score,
                    )
                )
    return dets


def scenario_single_object(n_frames: int = 10, score: float = 0.9) -> list[Detection]:
    """One steady object drifting +5 px/frame; should become one full track."""
    return [
        Detection("scenario-single", f, 100.0 + 5.0 * f, 120.0, 40.0, 40.0, score)
        for f in range(n_frames)
    ]


def scenario_confidence_dip(
    n_frames: int = 10,
    dip_frames: Sequence[int] = (4, 5),
    high: float = 0.9,
    dip: float = 0.3,
) -> list[Detection]:
    """A steady object whose score drops mid-sequence; the two-stage rescue case."""
    return [
        Detection(
            "scenario-dip",
            f,
            100.0 + 5.0 * f,
            120.0,
            40.0,
            40.0,
            dip if f in dip_frames else high,
        )
        for f in range(n_frames)
    ]


def scenario_isolated_detection(score: float = 0.95) -> list[Detection]:
    """A single detection with no temporal support; min_hits must suppress it."""
    return [Detection("scenario-isolated", 0, 200.0, 200.0, 40.0, 40.0, score)]


SCENARIOS = {
    "single": scenario_single_object,
    "dip": scenario_confidence_dip,
    "isolated": scenario_isolated_detection,
}


def synth_track_store(
    identities: int,
    tracks_per_identity: int,
    frames_per_track: int,
    dim: int = 64,
    seed: int = 0,
    source: str = "synthetic",
    track_spread: float = 0.35,
    image_noise: float = 0.55,
) -> EmbeddingStore:
    """Clustered unit embeddings with identity/track/frame structure.

    Each identity is a direction on the sphere; tracks wobble around it and
    frames wobble around their track, so nearest neighbours are mostly
    same-identity but not trivially so.
    """
    if dim < 2:
        raise ValidationError("dimension must be >= 2")
    rng = np.random.default_rng(seed)
    id_width = max(2, len(str(identities - 1)))
    records = []
    for i in range(identities):
        identity = f"id{i:0{id_width}d}"
        centre = rng.normal(size=dim)
        centre /= np.linalg.norm(centre)
        for t in range(tracks_per_identity):
            offset = rng.normal(size=dim) * track_spread / np.sqrt(dim)
            for f in range(frames_per_track):
                vec = centre + offset + rng.normal(size=dim) * image_noise / np.sqrt(dim)
                records.append(
                    EmbeddingRecord(
                        image_id=f"{source}:{identity}:t{t:03d}:f{f:03d}",
                        vector=vec.astype(np.float32),
                        track_id=f"t{t:03d}",
                        identity=identity,
                        source=source,
                        confidence=float(rng.uniform(0.5, 1.0)),
                    )
                )
    return build_store(records)


def synth_portrait_store(
    sizes: Sequence[tuple[int, int]] = LONGTAIL_PORTRAIT_SIZES,
    dim: int = 64,
    seed: int = 0,
    source: str = "portraits",
    image_noise: float = 0.55,
) -> EmbeddingStore:
    """Portrait corpus (no tracks): ``sizes`` lists (images_per_identity, count)."""
    rng = np.random.default_rng(seed)
    total_ids = sum(count for _, count in sizes)
    id_width = max(3, len(str(total_ids - 1)))
    records = []
    serial = 0
    for images_per_identity, count in sizes:
        if images_per_identity < 1 or count < 1:
            raise ValidationError("portrait sizes must be positive")
        for _ in range(count):
            identity = f"id{serial:0{id_width}d}"
            serial += 1
            centre = rng.normal(size=dim)
            centre /= np.linalg.norm(centre)
            for j in range(images_per_identity):
                vec = centre + rng.normal(size=dim) * image_noise / np.sqrt(dim)
                records.append(
                    EmbeddingRecord(
                        image_id=f"{source}:{identity}:p{j:03d}",
                        vector=vec.astype(np.float32),
                        track_id=None,
                        identity=identity,
                        source=source,
                        confidence=float(rng.uniform(0.5, 1.0)),
                    )
                )
    return build_store(records)


def parse_portrait_sizes(spec: str) -> tuple[tuple[int, int], ...]:
    """Parse "41x10,8x33" into ((41, 10), (8, 33))."""
    sizes = []
    for chunk in spec.split(","):
        try:
            per_identity, count = chunk.strip().split("x")
            sizes.append((int(per_identity), int(count)))
        except ValueError as exc:
            raise ValidationError(f"bad portrait size chunk {chunk!r}; want IMAGESxCOUNT") from exc
    return tuple(sizes)
