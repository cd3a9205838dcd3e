import numpy as np
import pytest

from facereid.store import (
    EmbeddingRecord,
    EmbeddingStore,
    BadMagicError,
    BadVersionError,
    NonFiniteVectorError,
    RowCountMismatchError,
    TruncatedMatrixError,
    ValidationError,
    ZeroVectorError,
    build_store,
    cosine,
    load_store,
    normalize,
    save_store,
)


def random_records(n, d, rng, prefix="img"):
    return [
        EmbeddingRecord(
            image_id=f"{prefix}{i:05d}",
            vector=rng.normal(size=d).astype(np.float32),
            track_id=f"t{i % 7}",
            identity=f"id{i % 5}",
            source="unit",
            confidence=float(rng.uniform()),
        )
        for i in range(n)
    ]


class TestNormalize:
    def test_three_four_five(self):
        assert np.allclose(normalize(np.array([3.0, 4.0])), [0.6, 0.8])

    def test_already_unit(self):
        assert np.allclose(normalize(np.array([1.0, 0.0, 0.0])), [1.0, 0.0, 0.0])

    def test_zero_vector_rejected(self):
        with pytest.raises(ZeroVectorError):
            normalize(np.zeros(2))

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteVectorError):
            normalize(np.array([1.0, np.nan]))
        with pytest.raises(NonFiniteVectorError):
            normalize(np.array([np.inf, 0.0]))

    def test_idempotent(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            v = rng.normal(size=rng.integers(2, 40)) * 10 ** rng.uniform(-6, 6)
            once = normalize(v)
            assert np.linalg.norm(normalize(once) - once) < 1e-6
            assert abs(np.linalg.norm(once) - 1.0) < 1e-6

    def test_cosine_equals_dot_and_bounded(self):
        rng = np.random.default_rng(12)
        for _ in range(200):
            a, b = rng.normal(size=(2, 16))
            c = cosine(a, b)
            assert -1 - 1e-6 <= c <= 1 + 1e-6
            assert c == pytest.approx(float(np.dot(normalize(a), normalize(b))), abs=1e-12)


class TestRoundTrip:
    def test_thousand_records_bit_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        store = build_store(random_records(1000, 64, rng))
        path = tmp_path / "big.cfe"
        save_store(store, path)
        loaded = load_store(path)
        assert loaded.dimension == 64
        assert loaded.normalized is True
        assert len(loaded) == 1000
        for a, b in zip(store.records, loaded.records):
            assert a.vector.tobytes() == b.vector.tobytes()
            assert (a.image_id, a.track_id, a.identity, a.source, a.confidence) == (
                b.image_id,
                b.track_id,
                b.identity,
                b.source,
                b.confidence,
            )

    def test_empty_store(self, tmp_path):
        store = build_store([])
        path = tmp_path / "empty.cfe"
        save_store(store, path)
        loaded = load_store(path)
        assert len(loaded) == 0

    def test_unnormalized_flag_round_trips(self, tmp_path):
        rng = np.random.default_rng(4)
        store = build_store(random_records(5, 8, rng), normalize_vectors=False)
        path = tmp_path / "raw.cfe"
        save_store(store, path)
        assert load_store(path).normalized is False


class TestFormatErrors:
    def _saved(self, tmp_path):
        rng = np.random.default_rng(5)
        path = tmp_path / "s.cfe"
        save_store(build_store(random_records(10, 8, rng)), path)
        return path

    def test_bad_magic(self, tmp_path):
        path = self._saved(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(BadMagicError):
            load_store(path)

    def test_bad_version(self, tmp_path):
        path = self._saved(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[4] = 9
        path.write_bytes(bytes(raw))
        with pytest.raises(BadVersionError):
            load_store(path)

    def test_row_count_mismatch(self, tmp_path):
        path = self._saved(tmp_path)
        sidecar = path.with_name(path.name + ".meta.jsonl")
        lines = sidecar.read_text().splitlines()
        sidecar.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(RowCountMismatchError):
            load_store(path)

    def test_truncated_matrix(self, tmp_path):
        path = self._saved(tmp_path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 5])
        with pytest.raises(TruncatedMatrixError):
            load_store(path)

    def test_truncated_header(self, tmp_path):
        path = self._saved(tmp_path)
        path.write_bytes(path.read_bytes()[:10])
        with pytest.raises(TruncatedMatrixError):
            load_store(path)


class TestValidation:
    def test_duplicate_image_ids(self):
        rng = np.random.default_rng(6)
        records = random_records(3, 4, rng)
        records.append(records[0])
        with pytest.raises(ValidationError):
            build_store(records)

    def test_dimension_mismatch(self):
        records = [
            EmbeddingRecord("a", np.ones(4, dtype=np.float32)),
            EmbeddingRecord("b", np.ones(5, dtype=np.float32)),
        ]
        with pytest.raises(ValidationError):
            build_store(records)

    def test_dimension_too_small(self):
        with pytest.raises(ValidationError):
            build_store([EmbeddingRecord("a", np.ones(1, dtype=np.float32))])

    def test_confidence_out_of_range(self):
        rec = EmbeddingRecord("a", np.ones(4, dtype=np.float32), confidence=1.5)
        with pytest.raises(ValidationError):
            build_store([rec])

    def test_unnormalized_rows_rejected_when_flagged(self):
        store = EmbeddingStore(
            records=[EmbeddingRecord("a", np.array([3.0, 4.0], dtype=np.float32))],
            dimension=2,
            normalized=True,
        )
        with pytest.raises(ValidationError):
            save_store(store, "/dev/null")
