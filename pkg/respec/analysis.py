"""
필터링 결과 분포 분석

- frechet_distance: ||m_A - m_B||^2 + Tr(C_A + C_B - 2 (C_A C_B)^(1/2))
- ngram_kl: KL(reference || candidate) over hashed unigram+bigram histograms
- report: clip ratio, rejection shares and per-task pass rates from a decision log
"""
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import orjson
import scipy.linalg
from loguru import logger
from scipy.special import rel_entr

from respec import error
from respec.core import EmbeddingMatrix, read_bundle
from respec.model import DEFAULT_BUCKETS

COVARIANCE_EPS = 1e-6
SYMMETRY_TOLERANCE = 1e-9
NGRAM_HASH = "blake2b-64"
NGRAM_ORDERS = (1, 2)


def _as_rows(X) -> np.ndarray:
    rows = X.rows if isinstance(X, EmbeddingMatrix) else np.asarray(X, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows[:, None]
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise error.EmptyInput(f"moment fit needs a non-empty 2-D matrix, got shape {rows.shape}")
    return rows


@dataclass(frozen=True)
class GaussianMoments:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        if self.covariance.shape != (self.dim, self.dim):
            raise error.DimensionMismatch((self.dim, self.dim), self.covariance.shape, "GaussianMoments covariance")
        if not np.allclose(self.covariance, self.covariance.T, rtol=0.0, atol=SYMMETRY_TOLERANCE):
            raise error.NumericError("covariance is not symmetric")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def fit_moments(X) -> GaussianMoments:
    rows = _as_rows(X)
    mean = rows.mean(axis=0)
    if rows.shape[0] < 2:
        cov = np.zeros((rows.shape[1], rows.shape[1]))
    else:
        cov = np.atleast_2d(np.cov(rows, rowvar=False))
    return GaussianMoments(mean, 0.5 * (cov + cov.T))


def concat_embeddings(video, text) -> np.ndarray:
    """[video | text] 2z 차원 결합"""
    V, S = _as_rows(video), _as_rows(text)
    if V.shape != S.shape:
        raise error.DimensionMismatch(V.shape, S.shape, "concat_embeddings")
    return np.hstack([V, S])


def _sqrt_psd(M: np.ndarray) -> np.ndarray:
    try:
        w, U = scipy.linalg.eigh(M)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise error.EigenFailure(str(e))
    return (U * np.sqrt(np.clip(w, 0.0, None))) @ U.T


def frechet_from_moments(a: GaussianMoments, b: GaussianMoments, eps: float = COVARIANCE_EPS) -> float:
    if a.dim != b.dim:
        raise error.DimensionMismatch(a.dim, b.dim, "frechet_distance")
    eye = np.eye(a.dim)
    cov_a = a.covariance + eps * eye
    cov_b = b.covariance + eps * eye

    # Tr((C_A C_B)^(1/2)) = Tr((C_A^(1/2) C_B C_A^(1/2))^(1/2))
    root_a = _sqrt_psd(cov_a)
    middle = root_a @ cov_b @ root_a
    middle = 0.5 * (middle + middle.T)
    try:
        eig = scipy.linalg.eigh(middle, eigvals_only=True)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise error.EigenFailure(str(e))
    trace_sqrt = float(np.sum(np.sqrt(np.clip(eig, 0.0, None))))

    diff = a.mean - b.mean
    return float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_sqrt)


def frechet_distance(A, B, eps: float = COVARIANCE_EPS) -> float:
    rows_a, rows_b = _as_rows(A), _as_rows(B)
    if rows_a.shape[1] != rows_b.shape[1]:
        raise error.DimensionMismatch(rows_a.shape[1], rows_b.shape[1], "frechet_distance")
    for rows, name in ((rows_a, "A"), (rows_b, "B")):
        if rows.shape[0] <= rows.shape[1]:
            logger.debug(f"frechet_distance: set {name} has {rows.shape[0]} rows for dim {rows.shape[1]}, relying on eps")
    return frechet_from_moments(fit_moments(rows_a), fit_moments(rows_b), eps)


# ---------------------------------------------------------------------------
# hashed n-gram KL
# ---------------------------------------------------------------------------


def tokenize(text: str) -> list[str]:
    return text.lower().split()


def ngrams(text: str) -> list[str]:
    tokens = tokenize(text)
    grams = []
    for order in NGRAM_ORDERS:
        grams.extend(" ".join(tokens[i : i + order]) for i in range(len(tokens) - order + 1))
    return grams


def ngram_bucket(gram: str, buckets: int = DEFAULT_BUCKETS) -> int:
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % buckets


@dataclass(frozen=True)
class NGramHistogram:
    probabilities: np.ndarray
    smoothing: float
    total_ngrams: int

    @property
    def buckets(self) -> int:
        return self.probabilities.shape[0]


def ngram_histogram(texts: Iterable[str], buckets: int = DEFAULT_BUCKETS, which: str = "corpus") -> NGramHistogram:
    if buckets < 1:
        raise error.UsageError(f"bucket count must be >= 1, got {buckets}")
    indices = [ngram_bucket(g, buckets) for text in texts for g in ngrams(text or "")]
    if not indices:
        raise error.EmptyCorpus(which)
    counts = np.bincount(np.asarray(indices, dtype=np.int64), minlength=buckets).astype(np.float64)
    smoothing = 1.0 / buckets
    smoothed = counts + smoothing
    return NGramHistogram(smoothed / smoothed.sum(), smoothing, len(indices))


def ngram_kl(ref_texts: Sequence[str], cand_texts: Sequence[str], buckets: int = DEFAULT_BUCKETS) -> float:
    """KL(ref || cand), nats"""
    p = ngram_histogram(ref_texts, buckets, "reference texts")
    q = ngram_histogram(cand_texts, buckets, "candidate texts")
    return max(0.0, float(np.sum(rel_entr(p.probabilities, q.probabilities))))


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def read_decision_log(path) -> list[dict]:
    rows = []
    with open(path, "rb") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rows.append(orjson.loads(line))
            except orjson.JSONDecodeError as e:
                raise error.ManifestError(path, line_no, f"invalid decision line ({e})")
    return rows


def _share(count: int, total: int) -> float:
    return count / total if total else 0.0


def report(decisions: Sequence[dict], manifests: Sequence[dict] | None = None, buckets: int = DEFAULT_BUCKETS) -> dict:
    """
    Summarize a decision log.
    manifests (optional) are stream manifest entries; a ``meta.source`` label
    per id adds acceptance rates per source.
    """
    valid = [d for d in decisions if d.get("rejected_by") != "error"]
    total = len(valid)
    accepted = sum(1 for d in valid if d["accepted"])
    rejected = {k: sum(1 for d in valid if d["rejected_by"] == k) for k in ("alignment", "relevance", "specificity")}

    per_task: dict[str, dict] = {}
    for d in valid:
        for t in d.get("per_task", []):
            entry = per_task.setdefault(t["task"], {"evaluated": 0, "relevance": 0, "specificity": 0, "both": 0})
            entry["evaluated"] += 1
            entry["relevance"] += int(t["rel_pass"])
            entry["specificity"] += int(t["spec_pass"])
            entry["both"] += int(t["rel_pass"] and t["spec_pass"])
    tasks = {
        name: {
            "evaluated": e["evaluated"],
            "relevance_pass_rate": _share(e["relevance"], e["evaluated"]),
            "specificity_pass_rate": _share(e["specificity"], e["evaluated"]),
            "joint_pass_rate": _share(e["both"], e["evaluated"]),
        }
        for name, e in sorted(per_task.items())
    }

    out = {
        "records": total,
        "accepted": accepted,
        "clip_ratio": _share(accepted, total),
        "bad_records": len(decisions) - total,
        "rejection_shares": {k: _share(v, total) for k, v in rejected.items()},
        "rejection_counts": rejected,
        "per_task": tasks,
        "metadata": {
            "ngram_hash": NGRAM_HASH,
            "ngram_orders": list(NGRAM_ORDERS),
            "ngram_buckets": buckets,
            "ngram_smoothing": "add-1/B",
            "ngram_tokenizer": "lowercase+whitespace",
            "kl_direction": "KL(downstream || filtered)",
            "frechet_eps": COVARIANCE_EPS,
        },
    }

    if manifests:
        source_of = {m["id"]: (m.get("meta") or {}).get("source") for m in manifests}
        by_source: dict[str, list[int]] = {}
        for d in valid:
            source = source_of.get(d["id"])
            if source is None:
                continue
            counts = by_source.setdefault(source, [0, 0])
            counts[0] += 1
            counts[1] += int(d["accepted"])
        out["by_source"] = {
            s: {"records": n, "accepted": a, "acceptance_rate": _share(a, n)} for s, (n, a) in sorted(by_source.items())
        }
    return out


def format_report(summary: dict) -> str:
    lines = [
        f"records      {summary['records']}",
        f"accepted     {summary['accepted']}",
        f"clip_ratio   {summary['clip_ratio']:.4f}",
        f"bad_records  {summary['bad_records']}",
        "",
        "rejected_by  count  share",
    ]
    for name, share in summary["rejection_shares"].items():
        lines.append(f"{name:<12} {summary['rejection_counts'][name]:>5}  {share:.4f}")
    if summary["per_task"]:
        lines += ["", f"{'task':<20} {'evaluated':>9} {'rel':>7} {'spec':>7} {'joint':>7}"]
        for name, t in summary["per_task"].items():
            lines.append(
                f"{name:<20} {t['evaluated']:>9} {t['relevance_pass_rate']:>7.4f} "
                f"{t['specificity_pass_rate']:>7.4f} {t['joint_pass_rate']:>7.4f}"
            )
    if summary.get("by_source"):
        lines += ["", f"{'source':<20} {'records':>7} {'accepted':>8} {'rate':>7}"]
        for name, s in summary["by_source"].items():
            lines.append(f"{name:<20} {s['records']:>7} {s['accepted']:>8} {s['acceptance_rate']:>7.4f}")
    return "\n".join(lines)


def accepted_mask(decisions: Sequence[dict]) -> np.ndarray:
    return np.array([bool(d["accepted"]) for d in decisions], dtype=bool)


def filtered_vs_downstream(
    accepted_video,
    accepted_text,
    task,
    accepted_texts: Sequence[str] | None = None,
    reference_texts: Sequence[str] | None = None,
    buckets: int = DEFAULT_BUCKETS,
) -> dict:
    """수용된 데이터와 한 태스크의 참조 집합 사이 거리"""
    out = {"task": task.task_name, "accepted": int(_as_rows(accepted_text).shape[0])}
    out["frechet_text"] = frechet_distance(accepted_text, task.text_refs)
    if task.has_video and task.video_refs.n == task.text_refs.n:
        out["frechet_concat"] = frechet_distance(
            concat_embeddings(accepted_video, accepted_text), concat_embeddings(task.video_refs, task.text_refs)
        )
    if accepted_texts is not None and reference_texts is not None:
        out["ngram_kl"] = ngram_kl(reference_texts, accepted_texts, buckets)
    return out


def load_accepted(decisions: Sequence[dict], video_path, text_path, manifest_path=None):
    """결정 로그 순서대로 스트림을 읽어 수용된 행만 반환"""
    video, _ = read_bundle(video_path)
    text, manifest = read_bundle(text_path, manifest_path=Path(manifest_path) if manifest_path else None)
    if video.n != len(decisions) or text.n != len(decisions):
        raise error.CountMismatch(text_path, text.n, len(decisions))
    mask = accepted_mask(decisions)
    texts = None
    if manifest is not None:
        texts = [m.get("text") or "" for m, keep in zip(manifest, mask) if keep]
    return video.rows[mask], text.rows[mask], texts


def write_report(summary: dict, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(orjson.dumps(summary, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS))

