"""Open-set re-identification and verification protocols.

Re-ID: per identity, a fixed number of tracks (times frames per track) form
the gallery and disjoint tracks form the queries; accuracy is class-averaged
over a sweep of k, with the reported k chosen on a held-out selection split
that the scored repetitions never touch.

Verification: track corpora are equalised to the minimum per-identity track
count with one frame per track; positives are all within-identity pairs and
each negative set is an equal-size uniform sample of cross-identity pairs.
Scores are cosine similarities; the metric is ROC-AUC, averaged over the
negative sets. Portrait corpora (no tracks) use every image as its own unit
and skip equalisation, which is what reproduces the published pair counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Mapping, Sequence

import numpy as np

from .index import GalleryIndex, Neighbor, topk_rows, vote_from_neighbors
from .store import EmbeddingRecord, EmbeddingStore, ValidationError, normalize

DEFAULT_K_VALUES = (1, 3, 5, 7, 10, 20, 50)

SplitMode = Literal["track", "portrait"]


@dataclass(frozen=True)
class SplitParams:
    gallery_tracks: int = 35
    query_tracks: int = 7
    frames_per_track: int = 10

    def validate(self) -> None:
        if min(self.gallery_tracks, self.query_tracks, self.frames_per_track) < 1:
            raise ValidationError("split parameters must be positive")


@dataclass
class ReIDSplit:
    gallery: list[EmbeddingRecord]
    queries: list[EmbeddingRecord]
    seed: int

    def validate(self) -> None:
        g_ids = {r.image_id for r in self.gallery}
        q_ids = {r.image_id for r in self.queries}
        if g_ids & q_ids:
            raise ValidationError("gallery and query image ids overlap")
        g_tracks = {(r.identity, r.track_id) for r in self.gallery if r.track_id is not None}
        q_tracks = {(r.identity, r.track_id) for r in self.queries if r.track_id is not None}
        if g_tracks & q_tracks:
            raise ValidationError("a track contributes to both gallery and queries")
        g_labels = {r.identity for r in self.gallery}
        missing = {r.identity for r in self.queries} - g_labels
        if missing:
            raise ValidationError(f"query identities absent from gallery: {sorted(missing)}")


@dataclass
class VerificationPairSet:
    """Balanced same/different pairs over one selection of images.

    ``positives`` is fixed; negative sets are regenerated on demand from
    ``negative_set_seed`` so repeated evaluations can average over several
    independently sampled negative sets.
    """

    image_ids: list[str]
    identities: list[str]
    positives: list[tuple[str, str]]
    negative_set_seed: int

    @property
    def pairs(self) -> list[tuple[str, str, bool]]:
        labelled = [(a, b, True) for a, b in self.positives]
        labelled += [(a, b, False) for a, b in self.negative_set(0)]
        return labelled

    def negative_set(self, set_index: int) -> list[tuple[str, str]]:
        """Cross-identity pairs, same count as positives, unique within the set."""
        labels = np.array(self.identities)
        codes = np.unique(labels, return_inverse=True)[1]
        iu, ju = np.triu_indices(len(self.image_ids), k=1)
        cross = codes[iu] != codes[ju]
        ci, cj = iu[cross], ju[cross]
        if len(ci) < len(self.positives):
            raise ValidationError("not enough cross-identity pairs to balance the positives")
        rng = np.random.default_rng(self.negative_set_seed + set_index)
        pick = rng.choice(len(ci), size=len(self.positives), replace=False)
        pick.sort()
        return [(self.image_ids[ci[p]], self.image_ids[cj[p]]) for p in pick]


@dataclass
class ProtocolReport:
    """Aggregated protocol results; every accuracy and AUC lies in [0, 1]."""

    per_k: dict[int, tuple[float, float]] | None = None
    chosen_k: int | None = None
    accuracy_mean: float | None = None
    accuracy_std: float | None = None
    auc_mean: float | None = None
    auc_std: float | None = None
    counts: dict[str, int] = field(default_factory=dict)

    def validate(self) -> None:
        values = []
        if self.per_k:
            values += [m for m, _ in self.per_k.values()]
        values += [v for v in (self.accuracy_mean, self.auc_mean) if v is not None]
        if any(not 0.0 <= v <= 1.0 for v in values):
            raise ValidationError("accuracies and AUC must lie in [0, 1]")


def _group_by_identity(records: Sequence[EmbeddingRecord]) -> dict[str, list[EmbeddingRecord]]:
    grouped: dict[str, list[EmbeddingRecord]] = {}
    for rec in records:
        if rec.identity is None:
            raise ValidationError(f"record {rec.image_id!r} has no identity label")
        grouped.setdefault(rec.identity, []).append(rec)
    return {k: sorted(v, key=lambda r: r.image_id) for k, v in sorted(grouped.items())}


def _group_by_track(records: Sequence[EmbeddingRecord]) -> dict[str, list[EmbeddingRecord]]:
    grouped: dict[str, list[EmbeddingRecord]] = {}
    for rec in records:
        if rec.track_id is None:
            raise ValidationError(f"record {rec.image_id!r} has no track id (track mode)")
        grouped.setdefault(rec.track_id, []).append(rec)
    return {k: sorted(v, key=lambda r: r.image_id) for k, v in sorted(grouped.items())}


def build_reid_split(
    records: Sequence[EmbeddingRecord],
    mode: SplitMode,
    params: SplitParams,
    seed: int,
) -> ReIDSplit:
    """Partition labelled records into a gallery and disjoint queries.

    Track mode samples ``gallery_tracks`` tracks per identity (and
    ``frames_per_track`` frames from each), then ``query_tracks`` of the
    remaining tracks contribute the same number of frames as queries.
    Portrait mode holds out exactly one image per identity as its query.
    Identities that cannot satisfy the preconditions raise an error naming
    the first offender.
    """
    params.validate()
    rng = np.random.default_rng(seed)
    gallery: list[EmbeddingRecord] = []
    queries: list[EmbeddingRecord] = []

    for identity, recs in _group_by_identity(records).items():
        if mode == "track":
            tracks = _group_by_track(recs)
            usable = [t for t, frames in tracks.items() if len(frames) >= params.frames_per_track]
            needed = params.gallery_tracks + params.query_tracks
            if len(usable) < needed:
                raise ValidationError(
                    f"identity {identity!r} has {len(usable)} usable tracks; needs {needed}"
                )
            order = rng.permutation(len(usable))
            chosen = [usable[i] for i in order[:needed]]
            for pos, track in enumerate(chosen):
                frames = tracks[track]
                idx = rng.choice(len(frames), size=params.frames_per_track, replace=False)
                sampled = [frames[i] for i in sorted(idx)]
                if pos < params.gallery_tracks:
                    gallery.extend(sampled)
                else:
                    queries.extend(sampled)
        elif mode == "portrait":
            if len(recs) < 4:
                raise ValidationError(
                    f"identity {identity!r} has {len(recs)} images; portrait mode needs >= 4"
                )
            holdout = int(rng.integers(len(recs)))
            queries.append(recs[holdout])
            gallery.extend(r for i, r in enumerate(recs) if i != holdout)
        else:
            raise ValidationError(f"unknown split mode {mode!r}")

    gallery.sort(key=lambda r: r.image_id)
    queries.sort(key=lambda r: r.image_id)
    split = ReIDSplit(gallery=gallery, queries=queries, seed=seed)
    split.validate()
    return split


def eval_reid(split: ReIDSplit, k_values: Sequence[int]) -> dict[int, float]:
    """Class-averaged weighted-vote accuracy for every k in the sweep.

    A query counts as correct only when the vote both names its identity and
    carries positive weight; all-non-positive neighborhoods are wrong by fiat.
    """
    if not k_values or min(k_values) < 1:
        raise ValidationError("k_values must be positive integers")
    index = GalleryIndex.from_records(split.gallery)
    k_max = min(max(k_values), len(index))

    per_identity_hits = {k: {} for k in k_values}
    for query in split.queries:
        sims = index.similarities(np.asarray(query.vector, dtype=np.float64))
        ranked = topk_rows(sims, k_max)
        neighbors = [
            Neighbor(row=int(r), similarity=float(sims[r]), identity=index.labels[r])
            for r in ranked
        ]
        for k in k_values:
            winner, score = vote_from_neighbors(neighbors[: min(k, len(neighbors))])
            hit = winner == query.identity and score > 0.0
            bucket = per_identity_hits[k].setdefault(query.identity, [0, 0])
            bucket[0] += int(hit)
            bucket[1] += 1

    return {
        k: float(np.mean([hits / total for hits, total in per_identity_hits[k].values()]))
        for k in k_values
    }


def select_best_k(selection_accuracy: Mapping[int, float], k_values: Sequence[int]) -> int:
    """The sweep value scoring highest on the selection split; ties prefer smaller k."""
    return max(sorted(k_values), key=lambda k: (selection_accuracy[k], -k))


def build_verification_pairs(
    records: Sequence[EmbeddingRecord],
    min_tracks: int | None,
    seed: int,
) -> VerificationPairSet:
    """Select one frame per (equalised) track and enumerate the positive pairs.

    Track corpora subsample every identity to the corpus-wide minimum track
    count (optionally capped by ``min_tracks``); portrait corpora — records
    without track ids — keep every image. Positives are all within-identity
    unordered pairs of the selected images.
    """
    grouped = _group_by_identity(records)
    rng = np.random.default_rng(seed)
    track_mode = any(r.track_id is not None for r in records)

    selected: list[EmbeddingRecord] = []
    if track_mode:
        per_identity_tracks = {
            identity: _group_by_track(recs) for identity, recs in grouped.items()
        }
        t = min(len(tracks) for tracks in per_identity_tracks.values())
        if min_tracks is not None:
            t = min(t, min_tracks)
        if t < 2:
            raise ValidationError("equalised track count must be >= 2 to form positive pairs")
        for identity, tracks in per_identity_tracks.items():
            names = list(tracks)
            order = rng.permutation(len(names))
            for i in order[:t]:
                frames = tracks[names[i]]
                selected.append(frames[int(rng.integers(len(frames)))])
    else:
        for recs in grouped.values():
            selected.extend(recs)

    selected.sort(key=lambda r: r.image_id)
    positives = []
    by_identity: dict[str, list[str]] = {}
    for rec in selected:
        by_identity.setdefault(rec.identity, []).append(rec.image_id)
    for ids in by_identity.values():
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                positives.append((ids[i], ids[j]))
    if not positives:
        raise ValidationError("no positive pairs; every identity has a single image")

    return VerificationPairSet(
        image_ids=[r.image_id for r in selected],
        identities=[r.identity for r in selected],
        positives=positives,
        negative_set_seed=seed,
    )


def roc_auc(scores: Sequence[float], labels: Sequence[bool]) -> float:
    """Probability a random positive outscores a random negative; ties count half.

    Computed from average ranks (the Mann-Whitney statistic), which equals
    the trapezoidal area under the ROC curve.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValidationError("scores and labels must be 1-D and aligned")
    n_pos = int(y.sum())
    n_neg = int(len(y) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("need at least one positive and one negative score")
    # Average rank of each tie group: mean of the first and last rank it spans.
    _, inverse, counts = np.unique(s, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    starts = ends - counts + 1
    ranks = ((starts + ends) / 2.0)[inverse]
    pos_rank_sum = float(ranks[y].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def pair_scores(
    pairs: Sequence[tuple[str, str]], vectors: Mapping[str, np.ndarray]
) -> np.ndarray:
    """Cosine similarity for each (image_id, image_id) pair."""
    out = np.empty(len(pairs))
    for i, (a, b) in enumerate(pairs):
        out[i] = float(np.dot(vectors[a], vectors[b]))
    return out


def eval_verification(
    pairset: VerificationPairSet,
    store: EmbeddingStore,
    n_negative_sets: int,
) -> tuple[float, float, list[float]]:
    """AUC against the fixed positives for each negative set: (mean, std, per-set)."""
    if n_negative_sets < 1:
        raise ValidationError("need at least one negative set")
    vectors = {r.image_id: normalize(r.vector) for r in store.records}
    missing = [i for i in pairset.image_ids if i not in vectors]
    if missing:
        raise ValidationError(f"store is missing embeddings for {missing[:3]}...")
    pos = pair_scores(pairset.positives, vectors)
    aucs = []
    for i in range(n_negative_sets):
        neg = pair_scores(pairset.negative_set(i), vectors)
        scores = np.concatenate([pos, neg])
        labels = np.concatenate([np.ones(len(pos), bool), np.zeros(len(neg), bool)])
        aucs.append(roc_auc(scores, labels))
    return float(np.mean(aucs)), float(np.std(aucs)), aucs


def run_reid_protocol(
    store: EmbeddingStore,
    mode: SplitMode,
    params: SplitParams,
    k_values: Sequence[int] = DEFAULT_K_VALUES,
    repetitions: int = 10,
    seed: int = 0,
) -> ProtocolReport:
    """Full re-ID protocol: k swept on every repetition, k chosen on a held-out split.

    Repetition i uses seed + i; the selection split uses seed + repetitions,
    so scored repetitions never see it.
    """
    if repetitions < 1:
        raise ValidationError("need at least one repetition")
    k_values = sorted(set(k_values))
    per_rep: list[dict[int, float]] = []
    counts: dict[str, int] = {}
    for i in range(repetitions):
        split = build_reid_split(store.records, mode, params, seed + i)
        per_rep.append(eval_reid(split, k_values))
        counts = {
            "gallery": len(split.gallery),
            "queries": len(split.queries),
            "identities": len({r.identity for r in split.gallery}),
        }

    selection_split = build_reid_split(store.records, mode, params, seed + repetitions)
    chosen_k = select_best_k(eval_reid(selection_split, k_values), k_values)

    per_k = {
        k: (
            float(np.mean([rep[k] for rep in per_rep])),
            float(np.std([rep[k] for rep in per_rep])),
        )
        for k in k_values
    }
    report = ProtocolReport(
        per_k=per_k,
        chosen_k=chosen_k,
        accuracy_mean=per_k[chosen_k][0],
        accuracy_std=per_k[chosen_k][1],
        counts=counts,
    )
    report.validate()
    return report


def run_verification_protocol(
    store: EmbeddingStore,
    min_tracks: int | None = None,
    n_negative_sets: int = 10,
    seed: int = 0,
) -> ProtocolReport:
    pairset = build_verification_pairs(store.records, min_tracks, seed)
    mean, std, _ = eval_verification(pairset, store, n_negative_sets)
    report = ProtocolReport(
        auc_mean=mean,
        auc_std=std,
        counts={
            "images": len(pairset.image_ids),
            "positive_pairs": len(pairset.positives),
            "negative_sets": n_negative_sets,
        },
    )
    report.validate()
    return report
