import numpy as np
import orjson
import pytest
from pydantic import ValidationError

from respec import error
from respec.core import BundleReader, read_bundle, read_header, read_manifest
from respec.model import SynthConfig
from respec.synth import generate, pair_with_cosine


def small_config(**overrides) -> SynthConfig:
    values = {"seed": 7, "dim": 16, "tasks": 2, "ref_size": 50, "stream_size": 200}
    values.update(overrides)
    return SynthConfig(**values)


def test_layout_and_counts(tmp_path):
    summary = generate(small_config(), tmp_path)
    assert sum(summary["counts"].values()) == 200
    assert summary["stream"]["text"] == "stream/text.rspc"

    text, manifest = read_bundle(tmp_path / "stream" / "text.rspc")
    video, _ = read_bundle(tmp_path / "stream" / "video.rspc")
    assert text.n == video.n == 200 and text.dim == 16
    assert {m["meta"]["source"] for m in manifest} <= {"task0", "task1", "background"}

    refs, captions = read_bundle(tmp_path / "refs" / "task1.text.rspc")
    assert refs.n == 50 and len(captions) == 50 and all(c["text"] for c in captions)
    root, _ = read_bundle(tmp_path / "root.rspc")
    assert root.n == 1
    assert len(read_manifest(tmp_path / "labels.jsonl")) == 200


def test_same_seed_same_bytes(tmp_path):
    generate(small_config(), tmp_path / "a")
    generate(small_config(), tmp_path / "b")
    for rel in ("root.rspc", "stream/text.rspc", "stream/video.rspc", "stream/alt_video.rspc", "synth.json"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    generate(small_config(seed=8), tmp_path / "c")
    assert (tmp_path / "a" / "stream/text.rspc").read_bytes() != (tmp_path / "c" / "stream/text.rspc").read_bytes()


def test_optional_outputs(tmp_path):
    summary = generate(small_config(video_refs=False, alt=False), tmp_path)
    assert "video" not in summary["refs"]["task0"]
    assert "alt_text" not in summary["stream"]
    assert not (tmp_path / "stream" / "alt_video.rspc").exists()
    assert orjson.loads((tmp_path / "synth.json").read_bytes())["config"]["seed"] == 7


def test_empty_stream(tmp_path):
    summary = generate(small_config(stream_size=0), tmp_path)
    assert sum(summary["counts"].values()) == 0
    assert read_header(tmp_path / "stream" / "text.rspc").n_rows == 0
    with BundleReader(tmp_path / "stream" / "video.rspc") as reader:
        assert reader.info.dim == 16 and reader.remaining == 0
        assert list(reader.iter_chunks(8)) == []
    # 행렬은 최소 한 행이 필요하다
    with pytest.raises(error.EmptyInput):
        read_bundle(tmp_path / "stream" / "text.rspc")


def test_pair_with_cosine_hits_target():
    rng = np.random.default_rng(0)
    text = np.linalg.qr(rng.normal(size=(8, 8)))[0]
    cosines = np.linspace(-0.5, 0.9, 8)
    video = pair_with_cosine(text, cosines, rng)
    np.testing.assert_allclose(np.sum(video * text, axis=1), cosines, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(video, axis=1), 1.0, atol=1e-12)


def test_config_validation():
    with pytest.raises(ValidationError):
        SynthConfig(dim=16)
    with pytest.raises(ValidationError):
        small_config(in_dist_rate=1.5)
    with pytest.raises(ValidationError):
        small_config(dim=1)
