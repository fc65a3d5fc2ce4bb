"""
레코드 단위 필터 판정

Cascade: alignment -> relevance (per task) -> specificity (per task).
FilterConfig.stages turns the per-task stages off for component ablations.
Every comparison is strict, so a value equal to its threshold is rejected.
"""
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from respec import error
from respec.core import StreamRecord, dot
from respec.gaussian import gaussian_log_density, gaussian_log_density_batch
from respec.model import DecisionRow, FilterConfig, TaskTraceRow
from respec.reference import ReferenceBundle, TaskReference, root_distances
from respec.vmf import kde_log_density, kde_log_density_batch, single_vmf_log_density


@dataclass
class Telemetry:
    """판정 중에 증가하는 연산량 카운터"""

    dot_products: int = 0
    kernel_row_evaluations: int = 0
    root_distances: int = 0

    def merge(self, other: "Telemetry"):
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class TaskTrace:
    task_name: str
    relevance_pass: bool
    specificity_distance: float | None
    specificity_pass: bool
    relevance_log_density_text: float | None = None
    relevance_pass_text: bool | None = None
    relevance_log_density_video: float | None = None
    relevance_pass_video: bool | None = None

    @property
    def passes(self) -> bool:
        return self.relevance_pass and self.specificity_pass

    def to_row(self) -> TaskTraceRow:
        both = self.relevance_log_density_text is not None and self.relevance_log_density_video is not None
        primary = (
            self.relevance_log_density_text
            if self.relevance_log_density_text is not None
            else self.relevance_log_density_video
        )
        return TaskTraceRow(
            task=self.task_name,
            rel_logd=primary,
            rel_pass=self.relevance_pass,
            spec_dist=self.specificity_distance,
            spec_pass=self.specificity_pass,
            rel_pass_text=self.relevance_pass_text if both else None,
            rel_logd_video=self.relevance_log_density_video if both else None,
            rel_pass_video=self.relevance_pass_video if both else None,
        )


@dataclass(frozen=True)
class FilterDecision:
    id: str
    accepted: bool
    rejected_by: str
    alignment_score: float | None = None
    alignment_pass: bool = False
    per_task: tuple[TaskTrace, ...] = field(default_factory=tuple)
    baseline_score: float | None = None
    error: str | None = None

    def __post_init__(self):
        if self.accepted != (self.rejected_by == "none"):
            raise error.ReSpecError(f"decision {self.id!r}: accepted={self.accepted} with rejected_by={self.rejected_by}")
        if self.accepted and not self.alignment_pass:
            raise error.ReSpecError(f"decision {self.id!r}: accepted without passing alignment")

    @classmethod
    def failed(cls, record_id: str, reason: str) -> "FilterDecision":
        return cls(id=record_id, accepted=False, rejected_by="error", error=reason)

    def to_row(self) -> DecisionRow:
        return DecisionRow(
            id=self.id,
            accepted=self.accepted,
            rejected_by=self.rejected_by,
            alignment_score=self.alignment_score,
            per_task=[t.to_row() for t in self.per_task],
            baseline_score=self.baseline_score,
            error=self.error,
        )

    def to_log_dict(self) -> dict:
        return self.to_row().dict(exclude_none=True)


def _rejection(passes_relevance: bool) -> str:
    return "specificity" if passes_relevance else "relevance"


def _check_dim(record: StreamRecord, bundle: ReferenceBundle):
    if record.dim != bundle.dim:
        raise error.DimensionMismatch(bundle.dim, record.dim, f"record {record.id!r}")


def _modalities(modality: str) -> tuple[bool, bool]:
    """(text 사용, video 사용)"""
    return modality in ("text", "union", "intersection"), modality in ("video", "union", "intersection")


def _combine_modalities(modality: str, pass_text, pass_video):
    if modality == "text":
        return pass_text
    if modality == "video":
        return pass_video
    if modality == "union":
        return pass_text | pass_video
    return pass_text & pass_video


# ---------------------------------------------------------------------------
# 단일 레코드 필터
# ---------------------------------------------------------------------------


def alignment_pass(v, s, tau: float, telemetry: Telemetry | None = None) -> tuple[bool, float]:
    score = dot(v, s)
    if telemetry is not None:
        telemetry.dot_products += 1
    return score > tau, score


def _density(x, ref: TaskReference, modality: str, density: str, telemetry: Telemetry | None) -> tuple[bool, float]:
    if density == "vmf":
        params, threshold = ref.vmf_terms(modality)
        value = single_vmf_log_density(x, params)
        rows = 1
    elif density == "gaussian":
        params, threshold = ref.gaussian_terms(modality)
        value = gaussian_log_density(x, params)
        rows = 1
    else:
        matrix, kappa, threshold = ref.kde_terms(modality)
        value = kde_log_density(x, matrix, kappa)
        rows = matrix.n
    if telemetry is not None:
        telemetry.kernel_row_evaluations += rows
    return value > threshold.log_threshold, value


def _task_relevance(record: StreamRecord, ref: TaskReference, modality: str, density: str, telemetry) -> dict:
    use_text, use_video = _modalities(modality)
    if use_video and not ref.has_video:
        raise error.MissingModalityReferences(ref.task_name, "video")
    out = {}
    pass_text = pass_video = None
    if use_text:
        pass_text, out["relevance_log_density_text"] = _density(record.text, ref, "text", density, telemetry)
        out["relevance_pass_text"] = pass_text
    if use_video:
        pass_video, out["relevance_log_density_video"] = _density(record.video, ref, "video", density, telemetry)
        out["relevance_pass_video"] = pass_video
    out["relevance_pass"] = bool(_combine_modalities(modality, pass_text, pass_video))
    return out


def relevance_pass(
    x,
    ref: TaskReference,
    modality: str = "text",
    density: str = "kde",
    telemetry: Telemetry | None = None,
) -> tuple[bool, float]:
    """
    x 는 임베딩(text/video 모드) 또는 StreamRecord (모든 모드).
    Returns the combined flag and the primary-modality log density.
    """
    if isinstance(x, StreamRecord):
        detail = _task_relevance(x, ref, modality, density, telemetry)
        primary = detail.get("relevance_log_density_text", detail.get("relevance_log_density_video"))
        return detail["relevance_pass"], primary
    if modality not in ("text", "video"):
        raise error.UsageError(f"modality {modality!r} needs a StreamRecord with both embeddings")
    return _density(x, ref, modality, density, telemetry)


def specificity_pass(s, ref: TaskReference, telemetry: Telemetry | None = None) -> tuple[bool, float]:
    s = np.asarray(s, dtype=np.float64)
    if s.shape != ref.root.shape:
        raise error.DimensionMismatch(ref.root.shape[0], s.shape[-1] if s.ndim else s.shape, "specificity_pass")
    distance = float(root_distances(s, ref.root)[0])
    if telemetry is not None:
        telemetry.root_distances += 1
    return distance > ref.specificity_threshold, distance


def _verdict(traces: Sequence[TaskTrace], combine: str) -> tuple[bool, str]:
    any_relevant = any(t.relevance_pass for t in traces)
    if combine == "joint_same_task":
        accepted = any(t.passes for t in traces)
    else:
        accepted = any_relevant and any(t.specificity_pass for t in traces)
    return accepted, "none" if accepted else _rejection(any_relevant)


def respec_decide(
    record: StreamRecord, bundle: ReferenceBundle, cfg: FilterConfig, telemetry: Telemetry | None = None
) -> FilterDecision:
    """
    비활성 단계는 계산하지 않고 통과로 본다. stages 가 비어 있으면
    alignment 만 적용한다.
    """
    _check_dim(record, bundle)
    aligned, score = alignment_pass(record.video, record.text, cfg.tau, telemetry)
    if not aligned:
        return FilterDecision(record.id, False, "alignment", score, False)
    if not cfg.stages:
        return FilterDecision(record.id, True, "none", score, True)

    traces = []
    for ref in bundle.tasks:
        relevance = {"relevance_pass": True}
        if cfg.uses_relevance:
            relevance = _task_relevance(record, ref, cfg.modality, cfg.density, telemetry)
        specific, distance = True, None
        if cfg.uses_specificity:
            specific, distance = specificity_pass(record.text, ref, telemetry)
        traces.append(TaskTrace(ref.task_name, specificity_distance=distance, specificity_pass=specific, **relevance))

    accepted, rejected_by = _verdict(traces, cfg.combine)
    return FilterDecision(record.id, accepted, rejected_by, score, True, tuple(traces))


def baseline_threshold_decide(record: StreamRecord, tau: float, telemetry: Telemetry | None = None) -> FilterDecision:
    aligned, score = alignment_pass(record.video, record.text, tau, telemetry)
    return FilterDecision(record.id, aligned, "none" if aligned else "alignment", score, aligned)


def baseline_cit_trainfree_decide(
    record: StreamRecord,
    bundle: ReferenceBundle,
    tau_text: float,
    tau: float,
    telemetry: Telemetry | None = None,
) -> FilterDecision:
    """정렬 통과 후 다운스트림 텍스트와의 최대 코사인 유사도 > tau_text"""
    _check_dim(record, bundle)
    aligned, score = alignment_pass(record.video, record.text, tau, telemetry)
    if not aligned:
        return FilterDecision(record.id, False, "alignment", score, False)
    best = -np.inf
    for ref in bundle.tasks:
        best = max(best, float(np.max(ref.text_refs.rows @ record.text)))
        if telemetry is not None:
            telemetry.kernel_row_evaluations += ref.text_refs.n
    accepted = best > tau_text
    return FilterDecision(record.id, accepted, "none" if accepted else "relevance", score, True, baseline_score=best)


def baseline_color_samplewise_decide(
    record: StreamRecord, tau: float, telemetry: Telemetry | None = None
) -> FilterDecision:
    """정렬 통과 후 <alt_v, alt_s> - <v, s> > 0"""
    if not record.has_alt:
        raise error.MissingAltEmbeddings(record.id)
    aligned, score = alignment_pass(record.video, record.text, tau, telemetry)
    if not aligned:
        return FilterDecision(record.id, False, "alignment", score, False)
    _, alt_score = alignment_pass(record.alt_video, record.alt_text, 0.0, telemetry)
    gain = alt_score - score
    accepted = gain > 0.0
    return FilterDecision(record.id, accepted, "none" if accepted else "relevance", score, True, baseline_score=gain)


def decide(
    record: StreamRecord, bundle: ReferenceBundle, cfg: FilterConfig, telemetry: Telemetry | None = None
) -> FilterDecision:
    _check_dim(record, bundle)
    if cfg.baseline == "lb_threshold":
        return baseline_threshold_decide(record, cfg.tau, telemetry)
    if cfg.baseline == "cit_trainfree":
        return baseline_cit_trainfree_decide(record, bundle, cfg.tau_text, cfg.tau, telemetry)
    if cfg.baseline == "color_samplewise":
        return baseline_color_samplewise_decide(record, cfg.tau, telemetry)
    return respec_decide(record, bundle, cfg, telemetry)


# ---------------------------------------------------------------------------
# 배치 판정 (엔진 경로)
# ---------------------------------------------------------------------------


def _batch_density(Q: np.ndarray, ref: TaskReference, modality: str, density: str, telemetry: Telemetry):
    if density == "vmf":
        params, threshold = ref.vmf_terms(modality)
        values = params.kappa * (Q @ params.mu)
        telemetry.kernel_row_evaluations += Q.shape[0]
    elif density == "gaussian":
        params, threshold = ref.gaussian_terms(modality)
        values = gaussian_log_density_batch(Q, params)
        telemetry.kernel_row_evaluations += Q.shape[0]
    else:
        matrix, kappa, threshold = ref.kde_terms(modality)
        values = kde_log_density_batch(Q, matrix, kappa)
        telemetry.kernel_row_evaluations += Q.shape[0] * matrix.n
    return values > threshold.log_threshold, values


def _respec_batch(records, V, S, scores, aligned, bundle, cfg, telemetry) -> list[FilterDecision]:
    idx = np.flatnonzero(aligned)
    S_p, V_p = S[idx], V[idx]
    use_text, use_video = _modalities(cfg.modality)
    skipped = np.ones(idx.shape[0], dtype=bool)

    task_columns = []
    for ref in bundle.tasks if cfg.stages else ():
        pass_t = logd_t = pass_v = logd_v = dist = None
        rel = spec = skipped
        if cfg.uses_relevance:
            if use_video and not ref.has_video:
                raise error.MissingModalityReferences(ref.task_name, "video")
            if use_text:
                pass_t, logd_t = _batch_density(S_p, ref, "text", cfg.density, telemetry)
            if use_video:
                pass_v, logd_v = _batch_density(V_p, ref, "video", cfg.density, telemetry)
            rel = _combine_modalities(cfg.modality, pass_t, pass_v)
        if cfg.uses_specificity:
            dist = root_distances(S_p, ref.root)
            telemetry.root_distances += idx.shape[0]
            spec = dist > ref.specificity_threshold
        task_columns.append((ref.task_name, rel, spec, dist, pass_t, logd_t, pass_v, logd_v))

    decisions: list[FilterDecision | None] = [None] * len(records)
    for i in np.flatnonzero(~aligned):
        decisions[i] = FilterDecision(records[i].id, False, "alignment", float(scores[i]), False)

    for j, i in enumerate(idx):
        if not cfg.stages:
            decisions[i] = FilterDecision(records[i].id, True, "none", float(scores[i]), True)
            continue
        traces = []
        for name, rel, spec, dist, pass_t, logd_t, pass_v, logd_v in task_columns:
            traces.append(
                TaskTrace(
                    task_name=name,
                    relevance_pass=bool(rel[j]),
                    specificity_distance=None if dist is None else float(dist[j]),
                    specificity_pass=bool(spec[j]),
                    relevance_log_density_text=None if logd_t is None else float(logd_t[j]),
                    relevance_pass_text=None if pass_t is None else bool(pass_t[j]),
                    relevance_log_density_video=None if logd_v is None else float(logd_v[j]),
                    relevance_pass_video=None if pass_v is None else bool(pass_v[j]),
                )
            )
        accepted, rejected_by = _verdict(traces, cfg.combine)
        decisions[i] = FilterDecision(records[i].id, accepted, rejected_by, float(scores[i]), True, tuple(traces))
    return decisions


def decide_batch(
    records: Sequence[StreamRecord],
    bundle: ReferenceBundle,
    cfg: FilterConfig,
    telemetry: Telemetry | None = None,
) -> list[FilterDecision]:
    """decide() 와 같은 규칙을 행렬 연산으로 한 블록에 적용"""
    if telemetry is None:
        telemetry = Telemetry()
    if not records:
        return []
    for record in records:
        _check_dim(record, bundle)
        if cfg.baseline == "color_samplewise" and not record.has_alt:
            raise error.MissingAltEmbeddings(record.id)

    V = np.stack([r.video for r in records])
    S = np.stack([r.text for r in records])
    scores = np.einsum("ij,ij->i", V, S)
    telemetry.dot_products += len(records)
    aligned = scores > cfg.tau

    if cfg.baseline == "respec":
        return _respec_batch(records, V, S, scores, aligned, bundle, cfg, telemetry)

    decisions = []
    if cfg.baseline == "lb_threshold":
        for record, score, ok in zip(records, scores, aligned):
            decisions.append(FilterDecision(record.id, bool(ok), "none" if ok else "alignment", float(score), bool(ok)))
        return decisions

    idx = np.flatnonzero(aligned)
    if cfg.baseline == "cit_trainfree":
        best = np.full(idx.shape[0], -np.inf)
        for ref in bundle.tasks:
            if idx.shape[0]:
                best = np.maximum(best, (S[idx] @ ref.text_refs.rows.T).max(axis=1))
            telemetry.kernel_row_evaluations += idx.shape[0] * ref.text_refs.n
        passed = best > cfg.tau_text
    else:
        alt_V = np.stack([records[i].alt_video for i in idx]) if idx.shape[0] else np.empty((0, 0))
        alt_S = np.stack([records[i].alt_text for i in idx]) if idx.shape[0] else np.empty((0, 0))
        best = np.einsum("ij,ij->i", alt_V, alt_S) - scores[idx]
        telemetry.dot_products += idx.shape[0]
        passed = best > 0.0

    position = {int(i): j for j, i in enumerate(idx)}
    for i, record in enumerate(records):
        j = position.get(i)
        if j is None:
            decisions.append(FilterDecision(record.id, False, "alignment", float(scores[i]), False))
            continue
        ok = bool(passed[j])
        decisions.append(
            FilterDecision(
                record.id, ok, "none" if ok else "relevance", float(scores[i]), True, baseline_score=float(best[j])
            )
        )
    return decisions
