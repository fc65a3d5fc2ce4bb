"""
임베딩 컨테이너, 수치 기본 연산, RSPC1 번들 입출력

RSPC1 layout (little-endian):
    0-3   magic b"RSPC"
    4-7   version (uint32, 1)
    8-11  dim z (uint32)
    12-19 row count N (uint64)
    20    dtype code (1 = float32)
    21-23 zero padding
    24-   N*z float32 values, row-major

Each bundle may have a sidecar JSON-lines manifest (same stem, ``.jsonl``)
with one object per row: required ``id``, optional ``text`` and ``meta``.
"""
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import orjson
from loguru import logger
from scipy.special import logsumexp

from respec import error

MAGIC = b"RSPC"
FORMAT_VERSION = 1
DTYPE_FLOAT32 = 1
HEADER = struct.Struct("<4sIIQB3x")
HEADER_SIZE = HEADER.size  # 24
PAYLOAD_DTYPE = np.dtype("<f4")

ZERO_NORM = 1e-6
UNIT_TOLERANCE = 1e-4
# normalize() 결과를 다시 넣었을 때 그대로 돌려주기 위한 여유
UNIT_SLACK = 1e-12


def _as_vector(v, where="vector") -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise error.DimensionMismatch("1-D vector", arr.shape, where)
    if arr.shape[0] < 2:
        raise error.DimensionMismatch(">= 2", arr.shape[0], where)
    if not np.all(np.isfinite(arr)):
        raise error.NonFiniteValue(where)
    return arr


def normalize(v, where="vector") -> np.ndarray:
    """단위 벡터로 정규화. 이미 단위 노름이면 비트 그대로 반환"""
    arr = _as_vector(v, where)
    norm = float(np.linalg.norm(arr))
    if norm < ZERO_NORM:
        raise error.ZeroNorm(where, norm)
    if abs(norm - 1.0) <= UNIT_SLACK:
        out = arr.copy()
    else:
        out = arr / norm
    out.setflags(write=False)
    return out


def dot(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise error.DimensionMismatch(a.shape, b.shape, "dot")
    return float(np.dot(a, b))


def log_sum_exp(values) -> float:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise error.EmptyInput("log_sum_exp")
    if not np.all(np.isfinite(arr)):
        raise error.NonFiniteValue("log_sum_exp")
    if arr.size == 1:
        return float(arr[0])
    return float(logsumexp(arr))


def quantile(values, p: float) -> float:
    """Linear interpolation between order statistics (type 7)."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise error.EmptyInput("quantile")
    if not 0.0 <= p <= 1.0:
        raise error.POutOfRange(p)
    arr = np.sort(arr)
    h = (arr.size - 1) * p
    lo = math.floor(h)
    hi = math.ceil(h)
    return float(arr[lo] + (h - lo) * (arr[hi] - arr[lo]))


def ingest_rows(rows, where="matrix") -> np.ndarray:
    """
    번들에서 읽은 행을 검증하고 단위 노름으로 맞춘다.
    Every row is divided by its norm; rows off by more than UNIT_TOLERANCE
    are reported with a warning. Non-finite or near-zero rows are errors.
    """
    arr = np.array(rows, dtype=np.float64, copy=True)
    if arr.ndim != 2:
        raise error.DimensionMismatch("2-D matrix", arr.shape, where)
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(arr), axis=1))[0])
        raise error.NonFiniteValue(f"{where} row {bad}")
    norms = np.linalg.norm(arr, axis=1)
    if arr.shape[0] and norms.min() < ZERO_NORM:
        bad = int(np.argmin(norms))
        raise error.ZeroNorm(f"{where} row {bad}", float(norms[bad]))
    off = np.abs(norms - 1.0) > UNIT_TOLERANCE
    if off.any():
        logger.warning(f"{where}: renormalizing {int(off.sum())} rows off unit norm by more than {UNIT_TOLERANCE}")
    if arr.shape[0]:
        arr /= norms[:, None]
    return arr


@dataclass(frozen=True)
class EmbeddingMatrix:
    rows: np.ndarray
    # rows 를 만든 float32 원본. 있으면 저장 시 그대로 기록한다
    payload: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        rows = self.rows
        if not (isinstance(rows, np.ndarray) and rows.dtype == np.float64 and not rows.flags.writeable):
            rows = ingest_rows(rows)
        if rows.shape[0] < 1:
            raise error.EmptyInput("EmbeddingMatrix")
        if rows.shape[1] < 2:
            raise error.DimensionMismatch(">= 2", rows.shape[1], "EmbeddingMatrix")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @classmethod
    def from_rows(cls, rows, where="matrix") -> "EmbeddingMatrix":
        payload = None
        if isinstance(rows, np.ndarray) and rows.dtype == PAYLOAD_DTYPE and rows.ndim == 2:
            payload = rows.copy()
            payload.setflags(write=False)
        arr = ingest_rows(rows, where)
        arr.setflags(write=False)
        return cls(arr, payload)

    def to_payload(self) -> np.ndarray:
        """RSPC1 에 기록할 float32 행"""
        if self.payload is not None:
            return self.payload
        return np.ascontiguousarray(self.rows, dtype=PAYLOAD_DTYPE)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self):
        return self.n

    def __getitem__(self, index) -> np.ndarray:
        return self.rows[index]

    def mean_direction(self) -> np.ndarray:
        return normalize(self.rows.mean(axis=0), "mean direction")

    def equals(self, other: "EmbeddingMatrix") -> bool:
        return self.rows.shape == other.rows.shape and np.array_equal(self.rows, other.rows)


@dataclass(frozen=True)
class StreamRecord:
    id: str
    video: np.ndarray
    text: np.ndarray
    raw_text: str | None = None
    alt_video: np.ndarray | None = None
    alt_text: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "video", normalize(self.video, f"record {self.id} video"))
        object.__setattr__(self, "text", normalize(self.text, f"record {self.id} text"))
        if self.video.shape != self.text.shape:
            raise error.DimensionMismatch(self.video.shape[0], self.text.shape[0], f"record {self.id}")
        if (self.alt_video is None) != (self.alt_text is None):
            raise error.MissingAltEmbeddings(self.id)
        if self.alt_video is not None:
            object.__setattr__(self, "alt_video", normalize(self.alt_video, f"record {self.id} alt_video"))
            object.__setattr__(self, "alt_text", normalize(self.alt_text, f"record {self.id} alt_text"))
            if self.alt_video.shape != self.alt_text.shape:
                raise error.DimensionMismatch(
                    self.alt_video.shape[0], self.alt_text.shape[0], f"record {self.id} alt"
                )

    @property
    def dim(self) -> int:
        return self.video.shape[0]

    @property
    def has_alt(self) -> bool:
        return self.alt_video is not None


# ---------------------------------------------------------------------------
# RSPC1 입출력
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BundleInfo:
    path: str
    version: int
    dim: int
    n_rows: int
    dtype_code: int

    @property
    def payload_bytes(self) -> int:
        return self.n_rows * self.dim * PAYLOAD_DTYPE.itemsize


def manifest_path_for(path) -> Path:
    return Path(path).with_suffix(".jsonl")


def _parse_header(raw: bytes, path) -> BundleInfo:
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise error.BadMagic(path, raw[:4])
    if len(raw) < HEADER_SIZE:
        raise error.TruncatedFile(path, HEADER_SIZE, len(raw))
    magic, version, dim, n_rows, dtype_code = HEADER.unpack(raw[:HEADER_SIZE])
    if version != FORMAT_VERSION:
        raise error.VersionUnsupported(path, version)
    if dtype_code != DTYPE_FLOAT32:
        raise error.VersionUnsupported(path, f"{version} (dtype code {dtype_code})")
    return BundleInfo(str(path), version, dim, n_rows, dtype_code)


class BundleReader:
    """RSPC1 파일을 앞에서부터 한 번만 읽는 순차 리더"""

    def __init__(self, path):
        self.path = str(path)
        self._fh = None
        self.rows_read = 0
        self.info: BundleInfo | None = None

    def __enter__(self):
        self.open()
        return self

    def __exit__(self, *exc):
        self.close()

    def open(self):
        self._fh = open(self.path, "rb")
        self.info = _parse_header(self._fh.read(HEADER_SIZE), self.path)
        self._check_size()
        return self

    def _check_size(self):
        self._fh.seek(0, 2)
        size = self._fh.tell()
        self._fh.seek(HEADER_SIZE)
        expected = HEADER_SIZE + self.info.payload_bytes
        if size < expected:
            raise error.TruncatedFile(self.path, expected, size)
        if size > expected:
            raise error.TrailingBytes(self.path, expected, size)

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    @property
    def remaining(self) -> int:
        return self.info.n_rows - self.rows_read

    def read_rows(self, count: int) -> np.ndarray:
        count = min(count, self.remaining)
        n_values = count * self.info.dim
        raw = self._fh.read(n_values * PAYLOAD_DTYPE.itemsize)
        if len(raw) != n_values * PAYLOAD_DTYPE.itemsize:
            raise error.TruncatedFile(self.path, self.info.payload_bytes + HEADER_SIZE, HEADER_SIZE + len(raw))
        self.rows_read += count
        return np.frombuffer(raw, dtype=PAYLOAD_DTYPE).reshape(count, self.info.dim)

    def iter_chunks(self, size: int) -> Iterator[np.ndarray]:
        while self.remaining > 0:
            yield self.read_rows(size)


def read_header(path) -> BundleInfo:
    with open(path, "rb") as f:
        return _parse_header(f.read(HEADER_SIZE), path)


def read_manifest(path) -> list[dict]:
    return list(iter_manifest(path))


def iter_manifest(path) -> Iterator[dict]:
    with open(path, "rb") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                entry = orjson.loads(line)
            except orjson.JSONDecodeError as e:
                raise error.ManifestError(path, line_no, f"invalid JSON ({e})")
            if not isinstance(entry, dict) or "id" not in entry:
                raise error.ManifestError(path, line_no, 'missing required key "id"')
            entry["id"] = str(entry["id"])
            yield entry


def write_manifest(manifest: Sequence[dict], path):
    with open(path, "wb") as f:
        for entry in manifest:
            if "id" not in entry:
                raise error.ManifestError(path, 0, 'manifest entry without "id"')
            f.write(orjson.dumps(entry, option=orjson.OPT_SORT_KEYS))
            f.write(b"\n")


def read_bundle(path, manifest_path=None) -> tuple[EmbeddingMatrix, list[dict] | None]:
    with BundleReader(path) as reader:
        payload = reader.read_rows(reader.info.n_rows)
    matrix = EmbeddingMatrix.from_rows(payload, str(path))

    manifest_path = Path(manifest_path) if manifest_path is not None else manifest_path_for(path)
    manifest = None
    if manifest_path.is_file():
        manifest = read_manifest(manifest_path)
        if len(manifest) != matrix.n:
            raise error.CountMismatch(manifest_path, matrix.n, len(manifest))
    return matrix, manifest


def write_bundle(matrix, manifest, path):
    rows = matrix.to_payload() if isinstance(matrix, EmbeddingMatrix) else np.asarray(matrix)
    if rows.ndim != 2:
        raise error.DimensionMismatch("2-D matrix", rows.shape, str(path))
    if manifest is not None and len(manifest) != rows.shape[0]:
        raise error.CountMismatch(path, rows.shape[0], len(manifest))

    payload = np.ascontiguousarray(rows, dtype=PAYLOAD_DTYPE)
    header = HEADER.pack(MAGIC, FORMAT_VERSION, rows.shape[1], rows.shape[0], DTYPE_FLOAT32)
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload.tobytes(order="C"))
    if manifest is not None:
        write_manifest(manifest, manifest_path_for(path))
