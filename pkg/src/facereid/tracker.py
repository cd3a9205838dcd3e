"""Two-stage association tracker over per-frame face detections.

High-confidence detections are matched to live tracks first; leftover tracks
then get a second chance against low-confidence detections, which recovers
brief occlusions and score dips without admitting isolated false positives
(tracks are only emitted once they accumulate ``min_hits`` matches).

Motion is a constant-velocity Kalman filter over (center-x, center-y,
aspect, height). Tracking is strictly sequential per video; separate videos
share no state and may run in parallel.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg
from scipy.optimize import linear_sum_assignment

from .store import ValidationError


@dataclass(frozen=True)
class Detection:
    """One scored box in one frame of one video. bbox is (x, y, w, h) pixels."""

    video_id: str
    frame: int
    x: float
    y: float
    w: float
    h: float
    score: float

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class TrackRow(Detection):
    """A detection claimed by a track; the unit written to track files."""

    track_id: int = 0

    @property
    def image_id(self) -> str:
        return f"{self.video_id}:f{self.frame:06d}:t{self.track_id:04d}"


class TrackState(enum.Enum):
    TENTATIVE = "tentative"
    ACTIVE = "active"
    LOST = "lost"
    REMOVED = "removed"


@dataclass
class TrackerConfig:
    tau_high: float = 0.6
    tau_low: float = 0.1
    iou_stage1: float = 0.2
    iou_stage2: float = 0.5
    min_hits: int = 3
    max_lost: int = 30

    def validate(self) -> None:
        if not 0.0 <= self.tau_low <= self.tau_high <= 1.0:
            raise ValidationError("need 0 <= tau_low <= tau_high <= 1")
        if self.min_hits < 1 or self.max_lost < 0:
            raise ValidationError("min_hits >= 1 and max_lost >= 0 required")


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    """Intersection-over-union of two (x, y, w, h) boxes; symmetric, in [0, 1]."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
        raise ValidationError("boxes must have positive width and height")
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union


def bbox_to_cxah(bbox: Sequence[float]) -> np.ndarray:
    """(x, y, w, h) -> (center-x, center-y, aspect=w/h, h)."""
    x, y, w, h = bbox
    return np.array([x + w / 2.0, y + h / 2.0, w / h, h], dtype=np.float64)


def cxah_to_bbox(state: np.ndarray) -> tuple[float, float, float, float]:
    cx, cy, a, h = state[:4]
    w = a * h
    return (float(cx - w / 2.0), float(cy - h / 2.0), float(w), float(h))


class KalmanFilter:
    """Constant-velocity filter over (cx, cy, a, h) and their velocities.

    Noise scales follow the usual SORT convention: position noise ~ h/20,
    velocity noise ~ h/160, both re-scaled by the current height.
    """

    def __init__(self, std_weight_position: float = 1.0 / 20, std_weight_velocity: float = 1.0 / 160):
        self._motion_mat = np.eye(8)
        self._motion_mat[:4, 4:] = np.eye(4)
        self._update_mat = np.eye(4, 8)
        self._std_pos = std_weight_position
        self._std_vel = std_weight_velocity

    def initiate(self, measurement: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        mean = np.zeros(8)
        mean[:4] = measurement
        h = measurement[3]
        std = [
            2 * self._std_pos * h,
            2 * self._std_pos * h,
            1e-2,
            2 * self._std_pos * h,
            10 * self._std_vel * h,
            10 * self._std_vel * h,
            1e-5,
            10 * self._std_vel * h,
        ]
        return mean, np.diag(np.square(std))

    def predict(self, mean: np.ndarray, cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h = mean[3]
        std = [
            self._std_pos * h,
            self._std_pos * h,
            1e-2,
            self._std_pos * h,
            self._std_vel * h,
            self._std_vel * h,
            1e-5,
            self._std_vel * h,
        ]
        motion_cov = np.diag(np.square(std))
        mean = self._motion_mat @ mean
        cov = self._motion_mat @ cov @ self._motion_mat.T + motion_cov
        return mean, cov

    def update(
        self, mean: np.ndarray, cov: np.ndarray, measurement: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        h = mean[3]
        std = [self._std_pos * h, self._std_pos * h, 1e-1, self._std_pos * h]
        innovation_cov = np.diag(np.square(std))

        projected_mean = self._update_mat @ mean
        projected_cov = self._update_mat @ cov @ self._update_mat.T + innovation_cov

        chol = scipy.linalg.cho_factor(projected_cov, lower=True, check_finite=False)
        gain = scipy.linalg.cho_solve(chol, (cov @ self._update_mat.T).T, check_finite=False).T
        innovation = measurement - projected_mean
        new_mean = mean + gain @ innovation
        new_cov = cov - gain @ projected_cov @ gain.T
        return new_mean, new_cov


class Track:
    """Lifecycle: TENTATIVE -> ACTIVE (after min_hits) -> LOST -> REMOVED.

    REMOVED is terminal; history holds exactly the detections this track
    claimed, so its frames are strictly increasing.
    """

    def __init__(self, serial: int, detection: Detection, kf: KalmanFilter, min_hits: int):
        self.serial = serial
        self.kf = kf
        self.min_hits = min_hits
        self.history: list[Detection] = [detection]
        self.mean, self.cov = kf.initiate(bbox_to_cxah(detection.bbox))
        self.hits = 1
        self.age = 1
        self.frames_since_update = 0
        self.activation_frame: int | None = None
        self.state = TrackState.TENTATIVE
        self._maybe_activate(detection.frame)

    def _maybe_activate(self, frame: int) -> None:
        if self.state == TrackState.TENTATIVE and self.hits >= self.min_hits:
            self.state = TrackState.ACTIVE
            self.activation_frame = frame

    @property
    def activated(self) -> bool:
        return self.activation_frame is not None

    def predict(self) -> tuple[float, float, float, float]:
        """Advance the motion state one frame; returns the predicted box."""
        self.mean, self.cov = self.kf.predict(self.mean, self.cov)
        self.age += 1
        self.frames_since_update += 1
        return cxah_to_bbox(self.mean)

    @property
    def predicted_bbox(self) -> tuple[float, float, float, float]:
        return cxah_to_bbox(self.mean)

    def update(self, detection: Detection) -> None:
        self.mean, self.cov = self.kf.update(self.mean, self.cov, bbox_to_cxah(detection.bbox))
        self.history.append(detection)
        self.hits += 1
        self.frames_since_update = 0
        if self.state == TrackState.LOST:
            self.state = TrackState.ACTIVE
        self._maybe_activate(detection.frame)

    def mark_missed(self, max_lost: int) -> None:
        if self.state == TrackState.TENTATIVE:
            self.state = TrackState.REMOVED
        elif self.frames_since_update > max_lost:
            self.state = TrackState.REMOVED
        elif self.state == TrackState.ACTIVE:
            self.state = TrackState.LOST


def min_cost_assignment(cost: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-cost assignment on an arbitrary cost matrix (optimal, exact)."""
    if cost.size == 0:
        return []
    rows, cols = linear_sum_assignment(cost)
    return list(zip(rows.tolist(), cols.tolist()))


def associate(
    track_boxes: Sequence[Sequence[float]],
    det_boxes: Sequence[Sequence[float]],
    threshold: float,
) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    """Match tracks to detections by minimum total (1 - IoU) cost.

    Pairs whose IoU falls below ``threshold`` are discarded after the
    optimal assignment. Returns (matches, unmatched_tracks, unmatched_dets).
    """
    if not track_boxes or not det_boxes:
        return [], list(range(len(track_boxes))), list(range(len(det_boxes)))
    iou_matrix = np.array(
        [[iou(tb, db) for db in det_boxes] for tb in track_boxes], dtype=np.float64
    )
    matches = []
    matched_t: set[int] = set()
    matched_d: set[int] = set()
    for ti, di in min_cost_assignment(1.0 - iou_matrix):
        if iou_matrix[ti, di] >= threshold:
            matches.append((ti, di))
            matched_t.add(ti)
            matched_d.add(di)
    unmatched_tracks = [i for i in range(len(track_boxes)) if i not in matched_t]
    unmatched_dets = [i for i in range(len(det_boxes)) if i not in matched_d]
    return matches, unmatched_tracks, unmatched_dets


class VideoTracker:
    """Sequential tracker state for one video."""

    def __init__(self, config: TrackerConfig, kf: KalmanFilter | None = None):
        config.validate()
        self.config = config
        self.kf = kf or KalmanFilter()
        self.tracks: list[Track] = []
        self._serial = 0
        self._last_frame: int | None = None

    def step(self, frame: int, detections: Sequence[Detection]) -> None:
        """Consume one frame's detections; frames must strictly increase."""
        if self._last_frame is not None and frame <= self._last_frame:
            raise ValidationError(
                f"frame {frame} arrived after frame {self._last_frame}; frames must increase"
            )
        self._last_frame = frame
        cfg = self.config

        high = [d for d in detections if d.score >= cfg.tau_high]
        low = [d for d in detections if cfg.tau_low <= d.score < cfg.tau_high]

        live = [t for t in self.tracks if t.state != TrackState.REMOVED]
        for t in live:
            t.predict()

        # Stage 1: active and lost tracks against high-score detections.
        pool = [t for t in live if t.state in (TrackState.ACTIVE, TrackState.LOST)]
        matches, um_tracks, um_high = associate(
            [t.predicted_bbox for t in pool], [d.bbox for d in high], cfg.iou_stage1
        )
        for ti, di in matches:
            pool[ti].update(high[di])

        # Stage 2: the rescue round — still-active leftovers against
        # low-score detections.
        remaining = [pool[i] for i in um_tracks if pool[i].state == TrackState.ACTIVE]
        matches2, um_tracks2, _ = associate(
            [t.predicted_bbox for t in remaining], [d.bbox for d in low], cfg.iou_stage2
        )
        for ti, di in matches2:
            remaining[ti].update(low[di])

        # Tentative tracks only ever see the leftover high-score detections.
        tentative = [t for t in live if t.state == TrackState.TENTATIVE]
        rem_high = [high[i] for i in um_high]
        matches3, um_tent, um_high2 = associate(
            [t.predicted_bbox for t in tentative], [d.bbox for d in rem_high], cfg.iou_stage1
        )
        for ti, di in matches3:
            tentative[ti].update(rem_high[di])

        missed = (
            [pool[i] for i in um_tracks if pool[i].state == TrackState.LOST]
            + [remaining[i] for i in um_tracks2]
            + [tentative[i] for i in um_tent]
        )
        for t in missed:
            t.mark_missed(cfg.max_lost)

        # Leftover high-score detections spawn new tracks; low-score ones never do.
        for di in um_high2:
            self._serial += 1
            self.tracks.append(Track(self._serial, rem_high[di], self.kf, cfg.min_hits))

    def emitted_rows(self) -> list[TrackRow]:
        """Rows for every track that ever activated, ids in activation order."""
        done = sorted(
            (t for t in self.tracks if t.activated),
            key=lambda t: (t.activation_frame, t.serial),
        )
        rows = []
        for public_id, track in enumerate(done, start=1):
            for det in track.history:
                rows.append(
                    TrackRow(
                        video_id=det.video_id,
                        frame=det.frame,
                        x=det.x,
                        y=det.y,
                        w=det.w,
                        h=det.h,
                        score=det.score,
                        track_id=public_id,
                    )
                )
        rows.sort(key=lambda r: (r.frame, r.track_id))
        return rows


def run_tracker(detections: Iterable[Detection], config: TrackerConfig) -> list[TrackRow]:
    """Track every video in a detection stream; deterministic per input.

    Videos are processed independently, in first-appearance order. Within a
    video, consecutive records sharing a frame index form one step; frame
    indices must be non-decreasing.
    """
    by_video: dict[str, list[Detection]] = {}
    for det in detections:
        by_video.setdefault(det.video_id, []).append(det)

    rows: list[TrackRow] = []
    for video_id, dets in by_video.items():
        tracker = VideoTracker(config)
        batch: list[Detection] = []
        for det in dets:
            if batch and det.frame != batch[0].frame:
                if det.frame < batch[0].frame:
                    raise ValidationError(
                        f"video {video_id!r}: frame {det.frame} after {batch[0].frame}"
                    )
                tracker.step(batch[0].frame, batch)
                batch = []
            batch.append(det)
        if batch:
            tracker.step(batch[0].frame, batch)
        rows.extend(tracker.emitted_rows())
    return rows


def read_detections(path: str | Path) -> list[Detection]:
    """Parse a detections file: one `video_id,frame,x,y,w,h,score` line per box."""
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 7:
            raise ValidationError(f"{path}:{lineno}: expected 7 fields, found {len(parts)}")
        vid, frame, x, y, w, h, score = parts
        out.append(
            Detection(
                video_id=vid,
                frame=int(frame),
                x=float(x),
                y=float(y),
                w=float(w),
                h=float(h),
                score=float(score),
            )
        )
    return out


def write_detections(detections: Iterable[Detection], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in detections:
            fh.write(f"{d.video_id},{d.frame},{d.x!r},{d.y!r},{d.w!r},{d.h!r},{d.score!r}\n")


def read_track_rows(path: str | Path) -> list[TrackRow]:
    """Parse a track file: detections plus a trailing track_id column."""
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 8:
            raise ValidationError(f"{path}:{lineno}: expected 8 fields, found {len(parts)}")
        vid, frame, x, y, w, h, score, track_id = parts
        out.append(
            TrackRow(
                video_id=vid,
                frame=int(frame),
                x=float(x),
                y=float(y),
                w=float(w),
                h=float(h),
                score=float(score),
                track_id=int(track_id),
            )
        )
    return out


def write_track_rows(rows: Iterable[TrackRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(
                f"{r.video_id},{r.frame},{r.x!r},{r.y!r},{r.w!r},{r.h!r},{r.score!r},{r.track_id}\n"
            )
