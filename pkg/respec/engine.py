"""
스트리밍 필터 실행기

Reader (sequential) -> decision workers (thread pool over fixed-size batches)
-> writer (sequential, in input order). Batches are cut from the input
independently of the worker count, so outputs do not depend on it.
"""
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from contextlib import ExitStack
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
import orjson
import pendulum
from loguru import logger

from respec import error
from respec.core import BundleReader, StreamRecord, iter_manifest, manifest_path_for
from respec.filters import FilterDecision, Telemetry, decide_batch
from respec.model import DEFAULT_BATCH_SIZE, FilterConfig, StreamStats
from respec.reference import ReferenceBundle

DECISIONS_FILE = "decisions.jsonl"
ACCEPTED_FILE = "accepted_ids.txt"
STATS_FILE = "stats.json"


@dataclass(frozen=True)
class StreamInput:
    video: str
    text: str
    manifest: str | None = None
    alt_video: str | None = None
    alt_text: str | None = None

    @property
    def has_alt(self) -> bool:
        return self.alt_video is not None and self.alt_text is not None

    def resolved_manifest(self) -> Path | None:
        if self.manifest is not None:
            return Path(self.manifest)
        sidecar = manifest_path_for(self.text)
        return sidecar if sidecar.is_file() else None


@dataclass(frozen=True)
class RawBatch:
    seq: int
    start: int
    ids: list[str]
    video: np.ndarray
    text: np.ndarray
    raw_texts: list[str | None]
    alt_video: np.ndarray | None = None
    alt_text: np.ndarray | None = None

    def __len__(self):
        return len(self.ids)


def _count_manifest_lines(path: Path) -> int:
    with open(path, "rb") as f:
        return sum(1 for line in f if line.strip())


def _open_readers(stack: ExitStack, stream: StreamInput, dim: int) -> dict[str, BundleReader]:
    readers = {"video": stack.enter_context(BundleReader(stream.video)), "text": stack.enter_context(BundleReader(stream.text))}
    if stream.has_alt:
        readers["alt_video"] = stack.enter_context(BundleReader(stream.alt_video))
        readers["alt_text"] = stack.enter_context(BundleReader(stream.alt_text))

    n_video, n_text = readers["video"].info.n_rows, readers["text"].info.n_rows
    if n_video != n_text:
        raise error.BundlePairMismatch(f"{stream.video} has {n_video} rows, {stream.text} has {n_text}")
    for name, reader in readers.items():
        if reader.info.n_rows != n_video:
            raise error.BundlePairMismatch(f"{reader.path} has {reader.info.n_rows} rows, expected {n_video}")
        if name in ("video", "text") and reader.info.dim != dim:
            raise error.DimensionMismatch(dim, reader.info.dim, reader.path)
    if stream.has_alt and readers["alt_video"].info.dim != readers["alt_text"].info.dim:
        raise error.BundlePairMismatch(
            f"{stream.alt_video} dim {readers['alt_video'].info.dim} != {stream.alt_text} dim {readers['alt_text'].info.dim}"
        )
    return readers


def iter_stream_batches(
    stream: StreamInput, dim: int, batch_size: int = DEFAULT_BATCH_SIZE, counters: dict | None = None
) -> Iterator[RawBatch]:
    """입력 번들을 한 번만 앞에서부터 읽어 batch_size 행 단위로 자른다"""
    if batch_size < 1:
        raise error.UsageError(f"--batch-size must be >= 1, got {batch_size}")
    manifest_path = stream.resolved_manifest()
    with ExitStack() as stack:
        readers = _open_readers(stack, stream, dim)
        n_rows = readers["video"].info.n_rows
        manifest = None
        if manifest_path is not None:
            lines = _count_manifest_lines(manifest_path)
            if lines != n_rows:
                raise error.CountMismatch(manifest_path, n_rows, lines)
            manifest = iter_manifest(manifest_path)

        seq = 0
        start = 0
        while readers["video"].remaining > 0:
            chunk = {name: reader.read_rows(batch_size) for name, reader in readers.items()}
            count = chunk["video"].shape[0]
            if manifest is not None:
                entries = [next(manifest) for _ in range(count)]
                ids = [e["id"] for e in entries]
                raw_texts = [e.get("text") for e in entries]
            else:
                ids = [str(start + k) for k in range(count)]
                raw_texts = [None] * count
            yield RawBatch(seq, start, ids, chunk["video"], chunk["text"], raw_texts, chunk.get("alt_video"), chunk.get("alt_text"))
            seq += 1
            start += count

        if counters is not None:
            counters["rows_read"] = readers["video"].rows_read


def _decide_raw(raw: RawBatch, bundle: ReferenceBundle, cfg: FilterConfig, skip_bad: bool):
    telemetry = Telemetry()
    records: list[StreamRecord] = []
    slots: list[FilterDecision | int] = []
    for k, record_id in enumerate(raw.ids):
        try:
            record = StreamRecord(
                id=record_id,
                video=raw.video[k],
                text=raw.text[k],
                raw_text=raw.raw_texts[k],
                alt_video=None if raw.alt_video is None else raw.alt_video[k],
                alt_text=None if raw.alt_text is None else raw.alt_text[k],
            )
        except error.ReSpecError as e:
            if not skip_bad:
                raise
            logger.warning(f"row {raw.start + k} ({record_id!r}) skipped: {e}")
            slots.append(FilterDecision.failed(record_id, str(e)))
            continue
        slots.append(len(records))
        records.append(record)

    decided = decide_batch(records, bundle, cfg, telemetry)
    return [decided[s] if isinstance(s, int) else s for s in slots], telemetry


def write_decision_line(fh, decision: FilterDecision):
    fh.write(orjson.dumps(decision.to_log_dict()))
    fh.write(b"\n")


def _check_inputs(stream: StreamInput, bundle: ReferenceBundle, cfg: FilterConfig):
    if cfg.baseline == "color_samplewise" and not stream.has_alt:
        raise error.MissingAltEmbeddings("<stream>")
    if cfg.needs_video:
        for task in bundle.tasks:
            if not task.has_video:
                raise error.MissingModalityReferences(task.task_name, "video")


def run_stream(
    stream: StreamInput,
    bundle: ReferenceBundle,
    cfg: FilterConfig,
    output,
    workers: int = 1,
    batch_size: int = DEFAULT_BATCH_SIZE,
    skip_bad: bool = False,
    stats_path=None,
    config_echo: dict | None = None,
) -> StreamStats:
    if workers < 1:
        raise error.UsageError(f"--workers must be >= 1, got {workers}")
    _check_inputs(stream, bundle, cfg)

    out = Path(output)
    out.mkdir(parents=True, exist_ok=True)
    stats = StreamStats(started_at=pendulum.now("UTC").to_iso8601_string(), config=config_echo or {})
    telemetry = Telemetry()
    counters: dict = {}
    began = time.perf_counter()
    logger.info(
        f"filtering {stream.text} against {len(bundle)} task(s) "
        f"(baseline={cfg.baseline}, tau={cfg.tau}, modality={cfg.modality}, workers={workers})"
    )

    def emit(decisions, batch_telemetry, decisions_fh, accepted_fh):
        telemetry.merge(batch_telemetry)
        for decision in decisions:
            write_decision_line(decisions_fh, decision)
            stats.count(decision.rejected_by)
            if decision.accepted:
                accepted_fh.write(decision.id.encode("utf-8") + b"\n")

    batches = iter_stream_batches(stream, bundle.dim, batch_size, counters)
    with open(out / DECISIONS_FILE, "wb") as decisions_fh, open(out / ACCEPTED_FILE, "wb") as accepted_fh:
        if workers == 1:
            for raw in batches:
                emit(*_decide_raw(raw, bundle, cfg, skip_bad), decisions_fh, accepted_fh)
        else:
            window = workers * 2
            pending = deque()
            with ThreadPoolExecutor(max_workers=workers) as pool:
                for raw in batches:
                    pending.append(pool.submit(_decide_raw, raw, bundle, cfg, skip_bad))
                    if len(pending) >= window:
                        emit(*pending.popleft().result(), decisions_fh, accepted_fh)
                while pending:
                    emit(*pending.popleft().result(), decisions_fh, accepted_fh)

    rows_read = counters.get("rows_read", 0)
    if rows_read != stats.records_in + stats.bad_records:
        raise error.ReSpecError(f"read {rows_read} rows but decided {stats.records_in + stats.bad_records}")

    stats.rows_read = rows_read
    stats.dot_products = telemetry.dot_products
    stats.kernel_row_evaluations = telemetry.kernel_row_evaluations
    stats.root_distances = telemetry.root_distances
    stats.wall_time = time.perf_counter() - began
    stats.finished_at = pendulum.now("UTC").to_iso8601_string()
    stats.finalize()

    write_stats(stats, stats_path if stats_path is not None else out / STATS_FILE)
    return stats


def write_stats(stats: StreamStats, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(orjson.dumps(stats.dict(), option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS))


def format_stats_summary(stats: StreamStats) -> str:
    rate = stats.records_in / stats.wall_time if stats.wall_time > 0 else 0.0
    rows = [
        ("records_in", stats.records_in),
        ("accepted", stats.accepted),
        ("clip_ratio", f"{stats.clip_ratio:.4f}"),
        ("rejected_by_alignment", stats.rejected_by_alignment),
        ("rejected_by_relevance", stats.rejected_by_relevance),
        ("rejected_by_specificity", stats.rejected_by_specificity),
        ("bad_records", stats.bad_records),
        ("dot_products", stats.dot_products),
        ("kernel_row_evaluations", stats.kernel_row_evaluations),
        ("root_distances", stats.root_distances),
        ("wall_time_s", f"{stats.wall_time:.3f}"),
        ("records_per_s", f"{rate:.0f}"),
    ]
    width = max(len(name) for name, _ in rows)
    return "\n".join(f"{name.ljust(width)}  {value}" for name, value in rows)
