import numpy as np
import pytest

from respec.core import EmbeddingMatrix, StreamRecord, write_bundle
from respec.reference import build_reference_bundle
from respec.synth import pair_with_cosine
from respec.vmf import sample_vmf

DIM = 64


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def basis(i: int, dim: int = DIM) -> np.ndarray:
    e = np.zeros(dim)
    e[i] = 1.0
    return e


def record(rid, text, video=None, alt_video=None, alt_text=None) -> StreamRecord:
    return StreamRecord(id=str(rid), video=text if video is None else video, text=text, alt_video=alt_video, alt_text=alt_text)


def write_stream(directory, texts, videos, ids=None, alt_texts=None, alt_videos=None) -> dict:
    """스트림 번들 쓰기 도우미"""
    directory.mkdir(parents=True, exist_ok=True)
    ids = ids or [f"r{k:05d}" for k in range(len(texts))]
    paths = {"text": str(directory / "text.rspc"), "video": str(directory / "video.rspc")}
    write_bundle(np.asarray(texts), [{"id": i} for i in ids], paths["text"])
    write_bundle(np.asarray(videos), None, paths["video"])
    if alt_texts is not None:
        paths["alt_text"] = str(directory / "alt_text.rspc")
        paths["alt_video"] = str(directory / "alt_video.rspc")
        write_bundle(np.asarray(alt_texts), None, paths["alt_text"])
        write_bundle(np.asarray(alt_videos), None, paths["alt_video"])
    return paths


@pytest.fixture
def root():
    return basis(0)


@pytest.fixture(scope="session")
def task_directions():
    rng = np.random.default_rng(7)
    # e_0 은 root 로 쓰므로 직교 보정
    dirs = []
    for _ in range(2):
        v = rng.standard_normal(DIM)
        v[0] = 0.0
        dirs.append(unit(v))
    return dirs


@pytest.fixture(scope="session")
def two_task_bundle(task_directions):
    """text+video 참조를 갖는 2-태스크 번들 (크기 100, 50)"""
    rng = np.random.default_rng(11)
    specs = []
    for name, mu, n in (("alpha", task_directions[0], 100), ("beta", task_directions[1], 50)):
        text = sample_vmf(mu, 300.0, n, seed=int(rng.integers(1 << 31)))
        video = EmbeddingMatrix.from_rows(pair_with_cosine(text.rows, rng.uniform(0.4, 0.7, size=n), rng))
        specs.append((name, text, video))
    return build_reference_bundle(specs, basis(0), alpha=0.05, q=0.1, loo=True)


@pytest.fixture(scope="session")
def calibration_task():
    """vMF(mu, 300, z=64) 5000 참조 + 5000 보류 표본"""
    mu = unit(np.arange(1, DIM + 1, dtype=np.float64))
    refs = sample_vmf(mu, 300.0, 5000, seed=101)
    held_out = sample_vmf(mu, 300.0, 5000, seed=202)
    antipodal = sample_vmf(-mu, 300.0, 5000, seed=303)
    return mu, refs, held_out, antipodal


@pytest.fixture(scope="session")
def mixed_stream(task_directions):
    """30% 태스크 분포, 70% 균등 배경인 합성 스트림"""
    rng = np.random.default_rng(5)
    n = 2000
    in_dist = rng.random(n) < 0.3
    which = rng.integers(0, 2, size=n)
    texts = sample_vmf(basis(0), 0.0, n, seed=17).rows.copy()
    for t in (0, 1):
        idx = np.flatnonzero(in_dist & (which == t))
        if idx.size:
            texts[idx] = sample_vmf(task_directions[t], 300.0, idx.size, seed=23 + t).rows
    videos = pair_with_cosine(texts, rng.uniform(0.1, 0.7, size=n), rng)
    alt_videos = pair_with_cosine(texts, rng.uniform(0.1, 0.7, size=n), rng)
    return texts, videos, alt_videos, in_dist
