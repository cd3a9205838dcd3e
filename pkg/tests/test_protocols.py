import numpy as np
import pytest

from facereid.protocols import (
    ProtocolReport,
    ReIDSplit,
    SplitParams,
    build_reid_split,
    build_verification_pairs,
    eval_reid,
    eval_verification,
    roc_auc,
    run_reid_protocol,
    run_verification_protocol,
    select_best_k,
)
from facereid.store import EmbeddingRecord, ValidationError, build_store, normalize
from facereid.synth import synth_portrait_store, synth_track_store


def auc_pair_counting_oracle(scores, labels):
    """O(n^2) oracle: count positive/negative pairs, ties worth half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    pos, neg = s[y], s[~y]
    greater = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (greater + 0.5 * ties) / (len(pos) * len(neg))


class TestSplitArithmetic:
    def test_track_counts_9x42x10(self):
        store = synth_track_store(9, 42, 10, dim=16, seed=0)
        split = build_reid_split(store.records, "track", SplitParams(35, 7, 10), seed=1)
        assert len(split.gallery) == 3150
        assert len(split.queries) == 630

    def test_portrait_counts_longtail(self):
        store = synth_portrait_store(dim=16, seed=0)
        split = build_reid_split(store.records, "portrait", SplitParams(), seed=1)
        assert len(split.gallery) == 2477
        assert len(split.queries) == 376

    def test_minimal_track_case(self):
        store = synth_track_store(1, 2, 1, dim=4, seed=0)
        split = build_reid_split(store.records, "track", SplitParams(1, 1, 1), seed=0)
        assert len(split.gallery) == 1 and len(split.queries) == 1

    @pytest.mark.parametrize("seed", range(4))
    def test_counts_formula_and_disjointness(self, seed):
        rng = np.random.default_rng(seed)
        identities = int(rng.integers(2, 6))
        gt = int(rng.integers(1, 4))
        qt = int(rng.integers(1, 3))
        f = int(rng.integers(1, 4))
        extra = int(rng.integers(0, 3))
        store = synth_track_store(identities, gt + qt + extra, f + 2, dim=8, seed=seed)
        split = build_reid_split(store.records, "track", SplitParams(gt, qt, f), seed=seed)
        assert len(split.gallery) == identities * gt * f
        assert len(split.queries) == identities * qt * f
        split.validate()  # disjointness at image and track level

    def test_identity_violating_preconditions_named(self):
        store = synth_track_store(2, 2, 3, dim=4, seed=0)
        records = [r for r in store.records if not (r.identity == "id01" and r.track_id == "t001")]
        with pytest.raises(ValidationError, match="id01"):
            build_reid_split(records, "track", SplitParams(1, 1, 3), seed=0)

    def test_portrait_needs_four_images(self):
        store = synth_portrait_store(sizes=((4, 2), (3, 1)), dim=4, seed=0)
        with pytest.raises(ValidationError, match="id002"):
            build_reid_split(store.records, "portrait", SplitParams(), seed=0)

    def test_deterministic_given_seed(self):
        store = synth_track_store(3, 5, 4, dim=8, seed=0)
        params = SplitParams(2, 1, 3)
        a = build_reid_split(store.records, "track", params, seed=5)
        b = build_reid_split(store.records, "track", params, seed=5)
        c = build_reid_split(store.records, "track", params, seed=6)
        ids = lambda split: ([r.image_id for r in split.gallery], [r.image_id for r in split.queries])
        assert ids(a) == ids(b)
        assert ids(a) != ids(c)


def one_hot_records(identities=4, tracks=3, frames=3):
    records = []
    for i in range(identities):
        vec = np.zeros(identities, dtype=np.float32)
        vec[i] = 1.0
        for t in range(tracks):
            for f in range(frames):
                records.append(
                    EmbeddingRecord(
                        image_id=f"id{i}:t{t}:f{f}",
                        vector=vec.copy(),
                        track_id=f"t{t}",
                        identity=f"id{i}",
                    )
                )
    return records


class TestEvalReID:
    def test_one_hot_embeddings_perfect(self):
        records = one_hot_records(identities=4, tracks=3, frames=3)
        split = build_reid_split(records, "track", SplitParams(2, 1, 3), seed=0)
        per_class_gallery = 2 * 3
        accs = eval_reid(split, [k for k in (1, 2, 3, 5, 6) if k <= per_class_gallery])
        assert all(a == 1.0 for a in accs.values())

    def test_k1_matches_nearest_neighbour_oracle(self):
        store = synth_track_store(3, 6, 5, dim=12, seed=3, track_spread=0.5, image_noise=1.2)
        split = build_reid_split(store.records, "track", SplitParams(4, 2, 5), seed=2)
        got = eval_reid(split, [1])[1]

        gallery_vecs = [normalize(r.vector) for r in split.gallery]
        per_class = {}
        for q in split.queries:
            qv = normalize(q.vector)
            sims = [float(np.dot(g, qv)) for g in gallery_vecs]
            best = max(range(len(sims)), key=lambda i: (sims[i], -i))
            hit = split.gallery[best].identity == q.identity and sims[best] > 0
            bucket = per_class.setdefault(q.identity, [0, 0])
            bucket[0] += int(hit)
            bucket[1] += 1
        want = float(np.mean([h / n for h, n in per_class.values()]))
        assert got == pytest.approx(want, abs=1e-12)

    def test_chance_level_with_permuted_labels(self):
        rng = np.random.default_rng(7)
        accs = []
        n_queries = 0
        for seed in range(6):
            store = synth_track_store(10, 6, 3, dim=16, seed=100 + seed)
            split = build_reid_split(store.records, "track", SplitParams(4, 2, 3), seed=seed)
            labels = [r.identity for r in split.gallery]
            perm = rng.permutation(len(labels))
            shuffled = [
                EmbeddingRecord(
                    image_id=r.image_id,
                    vector=r.vector,
                    track_id=r.track_id,
                    identity=labels[perm[i]],
                    source=r.source,
                    confidence=r.confidence,
                )
                for i, r in enumerate(split.gallery)
            ]
            split = ReIDSplit(gallery=shuffled, queries=split.queries, seed=split.seed)
            accs.append(eval_reid(split, [1])[1])
            n_queries += len(split.queries)
        p = 0.1
        sigma = np.sqrt(p * (1 - p) / n_queries)
        assert abs(np.mean(accs) - p) < 3 * sigma

    def test_class_average_invariant_to_duplicating_one_identity(self):
        store = synth_track_store(4, 5, 4, dim=8, seed=9, image_noise=1.0)
        split = build_reid_split(store.records, "track", SplitParams(3, 2, 4), seed=1)
        base = eval_reid(split, [1, 3])

        target = split.queries[0].identity
        clones = [
            EmbeddingRecord(
                image_id=q.image_id + ":dup",
                vector=q.vector,
                track_id=q.track_id,
                identity=q.identity,
            )
            for q in split.queries
            if q.identity == target
        ]
        fat = ReIDSplit(gallery=split.gallery, queries=split.queries + clones, seed=split.seed)
        assert eval_reid(fat, [1, 3]) == base


class TestSelectBestK:
    def test_argmax(self):
        assert select_best_k({1: 0.4, 3: 0.9, 5: 0.6}, [1, 3, 5]) == 3

    def test_tie_prefers_smaller_k(self):
        assert select_best_k({1: 0.5, 3: 0.7, 5: 0.7}, [1, 3, 5]) == 3


class TestVerificationPairs:
    def test_track_counts_9x42(self):
        store = synth_track_store(9, 42, 10, dim=16, seed=0)
        pairset = build_verification_pairs(store.records, None, seed=0)
        assert len(pairset.image_ids) == 378
        assert len(pairset.positives) == 7749
        negatives = pairset.negative_set(0)
        assert len(negatives) == 7749
        assert len(set(negatives)) == 7749
        assert not set(negatives) & set(pairset.positives)
        assert all(a != b for a, b in negatives)

    def test_two_by_two_exhaustive(self):
        records = one_hot_records(identities=2, tracks=2, frames=1)
        pairset = build_verification_pairs(records, None, seed=0)
        assert len(pairset.image_ids) == 4
        assert len(pairset.positives) == 2
        assert len(pairset.negative_set(0)) == 2

    def test_portrait_longtail_counts(self):
        store = synth_portrait_store(dim=8, seed=0)
        pairset = build_verification_pairs(store.records, None, seed=0)
        assert len(pairset.image_ids) == 2853
        assert len(pairset.positives) == 15205

    def test_min_tracks_caps_equalisation(self):
        store = synth_track_store(3, 6, 2, dim=8, seed=0)
        pairset = build_verification_pairs(store.records, 4, seed=0)
        assert len(pairset.image_ids) == 3 * 4
        assert len(pairset.positives) == 3 * 6  # C(4,2) per identity

    def test_negative_sets_differ_but_are_reproducible(self):
        store = synth_track_store(4, 5, 3, dim=8, seed=1)
        pairset = build_verification_pairs(store.records, None, seed=3)
        assert pairset.negative_set(0) == pairset.negative_set(0)
        assert pairset.negative_set(0) != pairset.negative_set(1)

    def test_positive_pairs_are_within_identity(self):
        store = synth_track_store(4, 5, 3, dim=8, seed=2)
        pairset = build_verification_pairs(store.records, None, seed=0)
        identity_of = dict(zip(pairset.image_ids, pairset.identities))
        assert all(identity_of[a] == identity_of[b] for a, b in pairset.positives)
        assert all(a != b for a, b in pairset.positives)


class TestRocAuc:
    def test_perfect_separation(self):
        assert roc_auc([0.9, 0.8, 0.2, 0.1], [True, True, False, False]) == 1.0

    def test_all_ties(self):
        assert roc_auc([0.5] * 10, [True] * 4 + [False] * 6) == 0.5

    def test_matches_pair_counting_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(60):
            n = int(rng.integers(2, 200))
            labels = np.zeros(n, dtype=bool)
            labels[: int(rng.integers(1, n))] = True
            rng.shuffle(labels)
            if rng.random() < 0.5:
                scores = rng.choice(np.linspace(0, 1, 7), size=n)  # heavy ties
            else:
                scores = rng.uniform(size=n)
            if labels.all() or not labels.any():
                continue
            got = roc_auc(scores, labels)
            assert got == pytest.approx(auc_pair_counting_oracle(scores, labels), abs=1e-12)

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(12)
        scores = rng.uniform(-1, 1, size=150)
        labels = rng.uniform(size=150) < 0.4
        labels[0], labels[1] = True, False
        base = roc_auc(scores, labels)
        for f in (lambda x: 2 * x + 1, np.exp, lambda x: x**3):
            assert roc_auc(f(scores), labels) == pytest.approx(base, abs=1e-12)

    def test_complement_identity_without_ties(self):
        rng = np.random.default_rng(13)
        scores = rng.permutation(np.linspace(0, 1, 80))
        labels = np.zeros(80, dtype=bool)
        labels[rng.choice(80, size=30, replace=False)] = True
        assert roc_auc(scores, labels) + roc_auc(scores, ~labels) == pytest.approx(1.0)

    def test_single_class_rejected(self):
        with pytest.raises(ValidationError):
            roc_auc([0.1, 0.2], [True, True])


class TestVerificationEval:
    def test_clustered_embeddings_score_high(self):
        store = synth_track_store(5, 6, 3, dim=32, seed=4)
        pairset = build_verification_pairs(store.records, None, seed=0)
        mean, std, per_set = eval_verification(pairset, store, n_negative_sets=5)
        assert len(per_set) == 5
        assert mean > 0.9
        assert std == pytest.approx(float(np.std(per_set)))

    def test_deterministic(self):
        store = synth_track_store(4, 5, 3, dim=16, seed=5)
        report_a = run_verification_protocol(store, None, n_negative_sets=4, seed=2)
        report_b = run_verification_protocol(store, None, n_negative_sets=4, seed=2)
        assert (report_a.auc_mean, report_a.auc_std) == (report_b.auc_mean, report_b.auc_std)


class TestReIDProtocol:
    def test_full_run_structure_and_determinism(self):
        store = synth_track_store(4, 6, 4, dim=16, seed=6)
        kwargs = dict(
            mode="track",
            params=SplitParams(3, 2, 4),
            k_values=[1, 3, 5],
            repetitions=3,
            seed=11,
        )
        a = run_reid_protocol(store, **kwargs)
        b = run_reid_protocol(store, **kwargs)
        assert a == b
        assert a.counts == {"gallery": 4 * 3 * 4, "queries": 4 * 2 * 4, "identities": 4}
        assert set(a.per_k) == {1, 3, 5}
        assert a.chosen_k in (1, 3, 5)
        assert a.accuracy_mean == a.per_k[a.chosen_k][0]
        a.validate()

    def test_report_range_validation(self):
        report = ProtocolReport(auc_mean=1.5)
        with pytest.raises(ValidationError):
            report.validate()
