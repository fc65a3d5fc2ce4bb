"""
합성 태스크와 스트림 생성 (seed 고정)

Output layout under ``out``::

    root.rspc
    refs/<task>.text.rspc (+ .jsonl captions)   refs/<task>.video.rspc
    stream/text.rspc (+ text.jsonl manifest)    stream/video.rspc
    stream/alt_text.rspc stream/alt_video.rspc  (when alt is enabled)
    labels.jsonl                                ground-truth source per record
    synth.json                                  parameters and paths
"""
from pathlib import Path

import numpy as np
import orjson
from loguru import logger

from respec.core import normalize, write_bundle, write_manifest
from respec.model import SynthConfig
from respec.vmf import sample_vmf

BACKGROUND = "background"
GENERAL_WORDS = [f"common{k}" for k in range(60)]
BACKGROUND_WORDS = [f"misc{k}" for k in range(400)]
ALIGNMENT_RANGE = (0.1, 0.7)
REFERENCE_ALIGNMENT_RANGE = (0.3, 0.7)
ALT_NOISE = 0.1


def task_names(count: int) -> list[str]:
    return [f"task{i}" for i in range(count)]


def random_unit(dim: int, rng: np.random.Generator) -> np.ndarray:
    return normalize(rng.standard_normal(dim), "random direction")


def pair_with_cosine(text_rows: np.ndarray, cosines: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """각 text 행과 지정된 코사인을 갖는 단위 벡터"""
    g = rng.standard_normal(text_rows.shape)
    g -= np.sum(g * text_rows, axis=1, keepdims=True) * text_rows
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    c = np.clip(cosines, -1.0, 1.0)[:, None]
    return c * text_rows + np.sqrt(1.0 - c * c) * g


def captions(vocab: list[str], n: int, rng: np.random.Generator, own_words: int = 4, general_words: int = 3) -> list[str]:
    out = []
    for _ in range(n):
        words = list(rng.choice(vocab, own_words)) + list(rng.choice(GENERAL_WORDS, general_words))
        rng.shuffle(words)
        out.append(" ".join(words))
    return out


def _seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1))


def _relative(path: Path, base: Path) -> str:
    return path.relative_to(base).as_posix()


def _write_json(data: dict, path: Path):
    path.write_bytes(orjson.dumps(data, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS))


def generate(cfg: SynthConfig, out) -> dict:
    out = Path(out)
    (out / "refs").mkdir(parents=True, exist_ok=True)
    (out / "stream").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    names = task_names(cfg.tasks)

    root = random_unit(cfg.dim, rng)
    write_bundle(root[None, :], None, out / "root.rspc")

    directions = {}
    vocab = {}
    refs = {}
    for name in names:
        directions[name] = random_unit(cfg.dim, rng)
        vocab[name] = [f"{name}_w{k}" for k in range(40)]
        text = sample_vmf(directions[name], cfg.kappa, cfg.ref_size, _seed(rng)).rows
        text_manifest = [
            {"id": f"{name}-{k:06d}", "text": caption}
            for k, caption in enumerate(captions(vocab[name], cfg.ref_size, rng))
        ]
        text_path = out / "refs" / f"{name}.text.rspc"
        write_bundle(text, text_manifest, text_path)
        entry = {"text": _relative(text_path, out)}
        if cfg.video_refs:
            video = pair_with_cosine(text, rng.uniform(*REFERENCE_ALIGNMENT_RANGE, size=cfg.ref_size), rng)
            video_path = out / "refs" / f"{name}.video.rspc"
            write_bundle(video, None, video_path)
            entry["video"] = _relative(video_path, out)
        refs[name] = entry

    n = cfg.stream_size
    n_in = int(round(cfg.in_dist_rate * n))
    sources = np.array([names[i] for i in rng.integers(0, cfg.tasks, size=n_in)] + [BACKGROUND] * (n - n_in), dtype=object)
    sources = sources[rng.permutation(n)] if n else sources

    text_rows = np.empty((n, cfg.dim))
    raw_texts: list[str | None] = [None] * n
    for name in names + [BACKGROUND]:
        idx = np.flatnonzero(sources == name)
        if idx.shape[0] == 0:
            continue
        if name == BACKGROUND:
            text_rows[idx] = sample_vmf(root, 0.0, idx.shape[0], _seed(rng)).rows
            texts = captions(BACKGROUND_WORDS, idx.shape[0], rng)
        else:
            text_rows[idx] = sample_vmf(directions[name], cfg.kappa, idx.shape[0], _seed(rng)).rows
            texts = captions(vocab[name], idx.shape[0], rng)
        for k, i in enumerate(idx):
            raw_texts[i] = texts[k]

    cosines = rng.uniform(*ALIGNMENT_RANGE, size=n)
    video_rows = pair_with_cosine(text_rows, cosines, rng)
    ids = [f"rec-{k:06d}" for k in range(n)]
    manifest = [{"id": ids[k], "text": raw_texts[k], "meta": {"source": str(sources[k])}} for k in range(n)]

    stream = {"text": str(out / "stream" / "text.rspc"), "video": str(out / "stream" / "video.rspc")}
    write_bundle(text_rows, manifest, stream["text"])
    write_bundle(video_rows, None, stream["video"])
    if cfg.alt:
        alt_cosines = cosines + rng.normal(0.0, ALT_NOISE, size=n)
        stream["alt_text"] = str(out / "stream" / "alt_text.rspc")
        stream["alt_video"] = str(out / "stream" / "alt_video.rspc")
        write_bundle(text_rows, None, stream["alt_text"])
        write_bundle(pair_with_cosine(text_rows, alt_cosines, rng), None, stream["alt_video"])

    labels_path = out / "labels.jsonl"
    write_manifest([{"id": ids[k], "source": str(sources[k])} for k in range(n)], labels_path)

    counts = {name: int(np.sum(sources == name)) for name in names + [BACKGROUND]}
    summary = {
        "config": cfg.dict(),
        "root": "root.rspc",
        "refs": refs,
        "stream": {k: _relative(Path(v), out) for k, v in stream.items()},
        "labels": "labels.jsonl",
        "counts": counts,
    }
    _write_json(summary, out / "synth.json")
    logger.info(f"synthetic data (seed={cfg.seed}) written to {out}: {counts}")
    return summary
