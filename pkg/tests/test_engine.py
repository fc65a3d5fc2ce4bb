import math

import numpy as np
import orjson
import pytest

from conftest import DIM, basis, write_stream
from respec import error
from respec.core import read_bundle
from respec.engine import (
    ACCEPTED_FILE,
    DECISIONS_FILE,
    STATS_FILE,
    StreamInput,
    format_stats_summary,
    iter_stream_batches,
    run_stream,
)
from respec.model import FilterConfig
from respec.reference import build_reference_bundle
from respec.synth import pair_with_cosine
from respec.vmf import sample_vmf

VOLATILE_STATS = {"wall_time", "started_at", "finished_at", "config"}


@pytest.fixture(scope="module")
def stream_paths(tmp_path_factory, mixed_stream):
    texts, videos, alt_videos, _ = mixed_stream
    paths = write_stream(tmp_path_factory.mktemp("stream"), texts, videos, alt_texts=texts, alt_videos=alt_videos)
    return paths


def stream_input(paths, alt=False) -> StreamInput:
    if alt:
        return StreamInput(paths["video"], paths["text"], alt_video=paths["alt_video"], alt_text=paths["alt_text"])
    return StreamInput(paths["video"], paths["text"])


def read_lines(path) -> list[dict]:
    return [orjson.loads(line) for line in path.read_bytes().splitlines()]


def stable_stats(path) -> dict:
    stats = orjson.loads(path.read_bytes())
    return {k: v for k, v in stats.items() if k not in VOLATILE_STATS}


def test_empty_stream(tmp_path, two_task_bundle):
    paths = write_stream(tmp_path / "in", np.empty((0, DIM)), np.empty((0, DIM)))
    stats = run_stream(stream_input(paths), two_task_bundle, FilterConfig(tau=0.28), tmp_path / "out")
    assert stats.records_in == 0 and stats.accepted == 0 and stats.clip_ratio == 0.0
    assert stats.dot_products == 0 and stats.kernel_row_evaluations == 0
    assert (tmp_path / "out" / DECISIONS_FILE).read_bytes() == b""
    assert (tmp_path / "out" / ACCEPTED_FILE).read_bytes() == b""
    assert (tmp_path / "out" / STATS_FILE).is_file()


@pytest.mark.parametrize("cfg", [FilterConfig(tau=0.22), FilterConfig(tau=0.2, modality="union", combine="independent")])
def test_output_does_not_depend_on_worker_count(tmp_path, stream_paths, two_task_bundle, cfg):
    outputs = {}
    for workers in (1, 4, 8):
        out = tmp_path / f"w{workers}"
        run_stream(stream_input(stream_paths), two_task_bundle, cfg, out, workers=workers, batch_size=128)
        outputs[workers] = (
            (out / DECISIONS_FILE).read_bytes(),
            (out / ACCEPTED_FILE).read_bytes(),
            stable_stats(out / STATS_FILE),
        )
    assert outputs[1] == outputs[4] == outputs[8]


def test_batch_size_does_not_change_decisions(tmp_path, stream_paths, two_task_bundle):
    cfg = FilterConfig(tau=0.22)
    decisions = {}
    for batch_size in (1, 97, 4096):
        out = tmp_path / f"b{batch_size}"
        stats = run_stream(stream_input(stream_paths), two_task_bundle, cfg, out, batch_size=batch_size)
        rows = read_lines(out / DECISIONS_FILE)
        decisions[batch_size] = ([(r["id"], r["accepted"], r["rejected_by"]) for r in rows], stats.kernel_row_evaluations)
    assert decisions[1] == decisions[97] == decisions[4096]


def naive_kde(x, rows, kappa) -> float:
    terms = [kappa * sum(a * b for a, b in zip(x, r)) for r in rows]
    top = max(terms)
    return top + math.log(sum(math.exp(t - top) for t in terms)) - math.log(len(terms))


def naive_decision(v, s, alt_v, alt_s, bundle, cfg) -> tuple[bool, str, float]:
    """행 단위 반복문으로만 계산한 판정 (accepted, rejected_by, alignment score)"""
    score = sum(a * b for a, b in zip(v, s))
    if not score > cfg.tau:
        return False, "alignment", score

    if cfg.baseline == "cit_trainfree":
        best = max(sum(a * b for a, b in zip(s, r)) for task in bundle.tasks for r in task.text_refs.rows.tolist())
        return (True, "none", score) if best > cfg.tau_text else (False, "relevance", score)
    if cfg.baseline == "color_samplewise":
        gain = sum(a * b for a, b in zip(alt_v, alt_s)) - score
        return (True, "none", score) if gain > 0.0 else (False, "relevance", score)

    relevant, specific = [], []
    for task in bundle.tasks:
        text_ok = naive_kde(s, task.text_refs.rows.tolist(), task.kappa_text) > task.relevance_threshold_text.log_threshold
        video_ok = None
        if cfg.modality != "text":
            video_ok = (
                naive_kde(v, task.video_refs.rows.tolist(), task.kappa_video)
                > task.relevance_threshold_video.log_threshold
            )
        if cfg.modality == "text":
            relevant.append(text_ok)
        elif cfg.modality == "video":
            relevant.append(video_ok)
        elif cfg.modality == "union":
            relevant.append(text_ok or video_ok)
        else:
            relevant.append(text_ok and video_ok)
        distance = math.sqrt(sum((a - b) ** 2 for a, b in zip(s, task.root.tolist())))
        specific.append(distance > task.specificity_threshold)

    if cfg.combine == "joint_same_task":
        accepted = any(r and p for r, p in zip(relevant, specific))
    else:
        accepted = any(relevant) and any(specific)
    if accepted:
        return True, "none", score
    return False, "specificity" if any(relevant) else "relevance", score


@pytest.mark.parametrize(
    "cfg",
    [
        FilterConfig(tau=0.22),
        FilterConfig(tau=0.2, modality="intersection"),
        FilterConfig(tau=0.2, modality="union", combine="independent"),
        FilterConfig(tau=0.22, baseline="cit_trainfree", tau_text=0.5),
        FilterConfig(tau=0.2, baseline="color_samplewise"),
    ],
)
def test_engine_matches_naive_loop_implementation(tmp_path, stream_paths, two_task_bundle, cfg):
    n = 1000
    stats = run_stream(stream_input(stream_paths, alt=True), two_task_bundle, cfg, tmp_path, workers=4, batch_size=256)
    rows = read_lines(tmp_path / DECISIONS_FILE)[:n]

    video, _ = read_bundle(stream_paths["video"])
    text, manifest = read_bundle(stream_paths["text"])
    alt_video, _ = read_bundle(stream_paths["alt_video"])
    alt_text, _ = read_bundle(stream_paths["alt_text"])
    assert stats.records_in == video.n

    for k, row in enumerate(rows):
        accepted, rejected_by, score = naive_decision(
            video.rows[k].tolist(),
            text.rows[k].tolist(),
            alt_video.rows[k].tolist(),
            alt_text.rows[k].tolist(),
            two_task_bundle,
            cfg,
        )
        assert row["id"] == manifest[k]["id"]
        assert (row["accepted"], row["rejected_by"]) == (accepted, rejected_by)
        assert row["alignment_score"] == pytest.approx(score, rel=1e-9, abs=1e-12)
    accepted_ids = (tmp_path / ACCEPTED_FILE).read_text().split()
    assert accepted_ids[: sum(r["accepted"] for r in rows)] == [r["id"] for r in rows if r["accepted"]]


def test_stats_are_consistent(tmp_path, stream_paths, two_task_bundle):
    stats = run_stream(stream_input(stream_paths), two_task_bundle, FilterConfig(tau=0.22), tmp_path)
    assert stats.is_consistent
    assert stats.records_in == 2000 and stats.rows_read == 2000
    assert stats.dot_products == 2000
    passed_alignment = stats.records_in - stats.rejected_by_alignment
    assert stats.root_distances == 2 * passed_alignment
    assert stats.kernel_row_evaluations == 150 * passed_alignment
    assert "clip_ratio" in format_stats_summary(stats)


def test_stats_path_override(tmp_path, stream_paths, two_task_bundle):
    target = tmp_path / "elsewhere" / "run.json"
    run_stream(stream_input(stream_paths), two_task_bundle, FilterConfig(tau=0.3), tmp_path / "out", stats_path=target)
    assert target.is_file()
    assert not (tmp_path / "out" / STATS_FILE).exists()


def test_ids_default_to_row_index(tmp_path, mixed_stream):
    texts, videos, _, _ = mixed_stream
    paths = write_stream(tmp_path, texts[:5], videos[:5])
    (tmp_path / "text.jsonl").unlink()
    batches = list(iter_stream_batches(stream_input(paths), DIM, batch_size=2))
    assert [b.ids for b in batches] == [["0", "1"], ["2", "3"], ["4"]]


def test_reader_reads_each_row_once(tmp_path, stream_paths):
    counters = {}
    total = sum(len(b) for b in iter_stream_batches(stream_input(stream_paths), DIM, 300, counters))
    assert total == counters["rows_read"] == 2000


def test_pair_length_mismatch(tmp_path, mixed_stream, two_task_bundle):
    texts, videos, _, _ = mixed_stream
    paths = write_stream(tmp_path, texts[:10], videos[:9])
    with pytest.raises(error.BundlePairMismatch):
        run_stream(stream_input(paths), two_task_bundle, FilterConfig(tau=0.28), tmp_path / "out")


def test_manifest_count_mismatch(tmp_path, mixed_stream, two_task_bundle):
    texts, videos, _, _ = mixed_stream
    paths = write_stream(tmp_path, texts[:10], videos[:10])
    lines = (tmp_path / "text.jsonl").read_bytes().splitlines()
    (tmp_path / "text.jsonl").write_bytes(b"\n".join(lines[:7]) + b"\n")
    with pytest.raises(error.CountMismatch):
        run_stream(stream_input(paths), two_task_bundle, FilterConfig(tau=0.28), tmp_path / "out")


def test_bad_rows_fail_fast_or_are_skipped(tmp_path, mixed_stream, two_task_bundle):
    texts, videos, _, _ = mixed_stream
    texts = texts[:50].copy()
    texts[7] = 0.0
    paths = write_stream(tmp_path / "in", texts, videos[:50])

    with pytest.raises(error.ZeroNorm):
        run_stream(stream_input(paths), two_task_bundle, FilterConfig(tau=0.28), tmp_path / "strict")

    stats = run_stream(stream_input(paths), two_task_bundle, FilterConfig(tau=0.28), tmp_path / "lenient", skip_bad=True)
    rows = read_lines(tmp_path / "lenient" / DECISIONS_FILE)
    assert len(rows) == 50
    assert rows[7]["rejected_by"] == "error" and not rows[7]["accepted"] and "error" in rows[7]
    assert stats.bad_records == 1 and stats.records_in == 49 and stats.rows_read == 50


def test_color_baseline_needs_alt_stream(tmp_path, stream_paths, two_task_bundle):
    with pytest.raises(error.MissingAltEmbeddings):
        run_stream(stream_input(stream_paths), two_task_bundle, FilterConfig(tau=0.28, baseline="color_samplewise"), tmp_path)


def test_dimension_mismatch_with_bundle(tmp_path, two_task_bundle):
    rows = np.eye(8)[:3]
    paths = write_stream(tmp_path / "in", rows, rows)
    with pytest.raises(error.DimensionMismatch):
        run_stream(stream_input(paths), two_task_bundle, FilterConfig(tau=0.28), tmp_path / "out")


def test_invalid_run_parameters(tmp_path, stream_paths, two_task_bundle):
    with pytest.raises(error.UsageError):
        run_stream(stream_input(stream_paths), two_task_bundle, FilterConfig(tau=0.28), tmp_path, workers=0)
    with pytest.raises(error.UsageError):
        run_stream(stream_input(stream_paths), two_task_bundle, FilterConfig(tau=0.28), tmp_path, batch_size=0)


def test_clip_ratio_of_designed_mixture(tmp_path, task_directions):
    rng = np.random.default_rng(41)
    specs = [
        (f"task{t}", sample_vmf(task_directions[t], 300.0, 2000, seed=50 + t), None) for t in range(2)
    ]
    bundle = build_reference_bundle(specs, basis(0), alpha=0.05, q=0.1)

    n = 4000
    texts = sample_vmf(basis(0), 0.0, n, seed=60).rows.copy()
    in_dist = rng.random(n) < 0.3
    which = rng.integers(0, 2, size=n)
    for t in (0, 1):
        idx = np.flatnonzero(in_dist & (which == t))
        texts[idx] = sample_vmf(task_directions[t], 300.0, idx.size, seed=70 + t).rows
    # 모든 레코드가 정렬 단계를 통과하도록 코사인 0.5 로 짝짓기
    videos = pair_with_cosine(texts, np.full(n, 0.5), rng)
    paths = write_stream(tmp_path / "in", texts, videos)

    stats = run_stream(stream_input(paths), bundle, FilterConfig(tau=0.28), tmp_path / "out", workers=2)
    assert stats.rejected_by_alignment == 0
    expected = in_dist.mean() * 0.95 * 0.9
    assert abs(stats.clip_ratio - expected) <= 0.03
