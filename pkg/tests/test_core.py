import struct

import numpy as np
import pytest

from respec import error
from respec.core import (
    HEADER_SIZE,
    BundleReader,
    EmbeddingMatrix,
    StreamRecord,
    dot,
    log_sum_exp,
    normalize,
    quantile,
    read_bundle,
    read_header,
    read_manifest,
    write_bundle,
    write_manifest,
)


def test_normalize_unit_norm_and_idempotent():
    v = normalize([3.0, 4.0])
    assert np.isclose(np.linalg.norm(v), 1.0, atol=1e-12)
    again = normalize(v)
    assert again.tobytes() == v.tobytes()


def test_normalize_rejects_zero_and_nan():
    with pytest.raises(error.ZeroNorm):
        normalize([1e-9, 0.0])
    with pytest.raises(error.NonFiniteValue):
        normalize([np.nan, 1.0])


def test_normalize_result_is_read_only():
    v = normalize([1.0, 1.0])
    with pytest.raises(ValueError):
        v[0] = 2.0


def test_dot_dimension_mismatch():
    assert dot([1.0, 0.0], [0.5, 0.5]) == 0.5
    with pytest.raises(error.DimensionMismatch):
        dot([1.0, 0.0], [1.0, 0.0, 0.0])


def test_log_sum_exp_single_entry_exact():
    assert log_sum_exp([123.456]) == 123.456


def test_log_sum_exp_shift_invariance():
    rng = np.random.default_rng(0)
    values = rng.normal(size=50) * 10
    shift = 700.0
    assert abs(log_sum_exp(values + shift) - (log_sum_exp(values) + shift)) <= 1e-12 * (1 + abs(shift))


def test_log_sum_exp_against_mpmath():
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 50
    values = [1000.0, 999.0, -5.0, 998.5]
    oracle = float(mpmath.log(sum(mpmath.e ** mpmath.mpf(v) for v in values)))
    assert log_sum_exp(values) == pytest.approx(oracle, rel=1e-14)


def test_log_sum_exp_empty():
    with pytest.raises(error.EmptyInput):
        log_sum_exp([])


def test_quantile_linear_interpolation():
    values = [4.0, 1.0, 3.0, 2.0]
    assert quantile(values, 0.0) == 1.0
    assert quantile(values, 1.0) == 4.0
    assert quantile(values, 0.5) == 2.5
    assert quantile(values, 0.1) == pytest.approx(1.3)
    assert quantile(values, 0.1) == pytest.approx(np.quantile(values, 0.1))


def test_quantile_errors():
    with pytest.raises(error.EmptyInput):
        quantile([], 0.5)
    with pytest.raises(error.POutOfRange):
        quantile([1.0], 1.5)


def test_embedding_matrix_is_immutable():
    m = EmbeddingMatrix.from_rows([[1.0, 0.0], [0.0, 1.0]])
    assert m.n == 2 and m.dim == 2
    with pytest.raises(ValueError):
        m.rows[0, 0] = 3.0


def test_ingestion_renormalizes_off_unit_rows():
    m = EmbeddingMatrix.from_rows([[2.0, 0.0], [0.6, 0.8]])
    np.testing.assert_allclose(np.linalg.norm(m.rows, axis=1), 1.0)
    with pytest.raises(error.ZeroNorm):
        EmbeddingMatrix.from_rows([[0.0, 0.0]])
    with pytest.raises(error.NonFiniteValue):
        EmbeddingMatrix.from_rows([[np.inf, 0.0]])


def test_ingestion_normalizes_rows_near_unit_norm():
    row = np.zeros(8)
    row[:2] = [0.6, 0.8]
    row *= 1.00004995
    m = EmbeddingMatrix.from_rows(np.vstack([row, np.eye(8)[3]]))
    np.testing.assert_allclose(np.linalg.norm(m.rows, axis=1), 1.0, rtol=0.0, atol=1e-15)
    assert m.rows[1].tobytes() == np.eye(8)[3].tobytes()


def test_float32_rows_keep_their_payload(tmp_path):
    rng = np.random.default_rng(4)
    payload = rng.normal(size=(6, 16)).astype(np.float32)
    payload /= np.linalg.norm(payload, axis=1, keepdims=True)
    m = EmbeddingMatrix.from_rows(payload)
    assert m.to_payload().tobytes() == payload.tobytes()
    np.testing.assert_allclose(np.linalg.norm(m.rows, axis=1), 1.0, rtol=0.0, atol=1e-15)

    write_bundle(m, None, tmp_path / "p.rspc")
    loaded, _ = read_bundle(tmp_path / "p.rspc")
    assert loaded.rows.tobytes() == m.rows.tobytes()


def test_stream_record_requires_both_alt_embeddings():
    with pytest.raises(error.MissingAltEmbeddings):
        StreamRecord("x", [1.0, 0.0], [0.0, 1.0], alt_video=[1.0, 0.0])


def test_stream_record_dimension_check():
    with pytest.raises(error.DimensionMismatch):
        StreamRecord("x", [1.0, 0.0], [0.0, 1.0, 0.0])


def test_bundle_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    rows = rng.normal(size=(17, 8)).astype(np.float32)
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    manifest = [{"id": f"id{k}", "text": f"caption {k}", "meta": {"k": k}} for k in range(17)]
    path = tmp_path / "m.rspc"
    write_bundle(rows, manifest, path)

    matrix, loaded_manifest = read_bundle(path)
    assert matrix.to_payload().tobytes() == rows.tobytes()
    write_bundle(matrix, None, tmp_path / "again.rspc")
    assert (tmp_path / "again.rspc").read_bytes() == path.read_bytes()
    assert loaded_manifest == manifest
    assert path.stat().st_size == HEADER_SIZE + 17 * 8 * 4

    info = read_header(path)
    assert (info.dim, info.n_rows, info.version) == (8, 17, 1)


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.rspc"
    path.write_bytes(b"NOPE" + b"\0" * 40)
    with pytest.raises(error.BadMagic):
        read_bundle(path)


def test_unsupported_version(tmp_path):
    path = tmp_path / "v2.rspc"
    path.write_bytes(struct.pack("<4sIIQB3x", b"RSPC", 2, 2, 0, 1))
    with pytest.raises(error.VersionUnsupported):
        read_bundle(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "t.rspc"
    write_bundle(np.eye(4, dtype=np.float32), None, path)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(error.TruncatedFile):
        read_bundle(path)


def test_trailing_bytes_are_rejected(tmp_path):
    path = tmp_path / "tail.rspc"
    write_bundle(np.eye(4, dtype=np.float32), None, path)
    path.write_bytes(path.read_bytes() + b"\0" * 4)
    with pytest.raises(error.TrailingBytes) as exc:
        read_bundle(path)
    assert exc.value.exit_code == 2
    with pytest.raises(error.TrailingBytes):
        BundleReader(path).open()


def test_manifest_count_mismatch(tmp_path):
    path = tmp_path / "c.rspc"
    write_bundle(np.eye(3, dtype=np.float32), [{"id": "a"}, {"id": "b"}, {"id": "c"}], path)
    write_manifest([{"id": "a"}], tmp_path / "c.jsonl")
    with pytest.raises(error.CountMismatch):
        read_bundle(path)


def test_manifest_requires_id(tmp_path):
    path = tmp_path / "x.jsonl"
    path.write_bytes(b'{"id": 1}\n{"text": "no id"}\n')
    with pytest.raises(error.ManifestError):
        read_manifest(path)


def test_reader_counts_rows_once(tmp_path):
    path = tmp_path / "r.rspc"
    write_bundle(np.eye(10, dtype=np.float32), None, path)
    with BundleReader(path) as reader:
        chunks = list(reader.iter_chunks(3))
        assert [c.shape[0] for c in chunks] == [3, 3, 3, 1]
        assert reader.rows_read == 10
        assert reader.remaining == 0
