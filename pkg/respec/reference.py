"""
다운스트림 태스크 참조 번들 생성/저장/로드

Bundle directory layout::

    bundle.json                 header (pydantic BundleHeader, orjson)
    root.rspc                   root text embedding (1 row)
    000-<task>.text.rspc        text reference matrix per task
    000-<task>.video.rspc       optional video reference matrix
"""
import hashlib
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import orjson
from loguru import logger
from pydantic import ValidationError

from respec import error
from respec.core import EmbeddingMatrix, quantile, read_bundle, write_bundle
from respec.model import (
    BUNDLE_VERSION,
    DEFAULT_ALPHA,
    DEFAULT_GAUSSIAN_RIDGE,
    DEFAULT_Q,
    BuildConfig,
    BundleHeader,
    TaskEntry,
    ThresholdEntry,
)
from respec.gaussian import GaussianParams, fit_gaussian, gaussian_threshold
from respec.vmf import (
    DensityThreshold,
    VmfParams,
    estimate_kappa,
    self_density_threshold,
    single_vmf_threshold,
)

HEADER_FILE = "bundle.json"
ROOT_FILE = "root.rspc"


@dataclass(frozen=True)
class TaskReference:
    task_name: str
    text_refs: EmbeddingMatrix
    kappa_text: float
    relevance_threshold_text: DensityThreshold
    vmf_text: VmfParams
    vmf_threshold_text: DensityThreshold
    root: np.ndarray
    specificity_threshold: float
    q: float
    video_refs: EmbeddingMatrix | None = None
    kappa_video: float | None = None
    relevance_threshold_video: DensityThreshold | None = None
    vmf_video: VmfParams | None = None
    vmf_threshold_video: DensityThreshold | None = None
    gaussian_text: GaussianParams | None = None
    gaussian_threshold_text: DensityThreshold | None = None
    gaussian_video: GaussianParams | None = None
    gaussian_threshold_video: DensityThreshold | None = None

    @property
    def dim(self) -> int:
        return self.text_refs.dim

    @property
    def has_video(self) -> bool:
        return self.video_refs is not None

    def kde_terms(self, modality: str) -> tuple[EmbeddingMatrix, float, DensityThreshold]:
        if modality == "text":
            return self.text_refs, self.kappa_text, self.relevance_threshold_text
        if not self.has_video:
            raise error.MissingModalityReferences(self.task_name, "video")
        return self.video_refs, self.kappa_video, self.relevance_threshold_video

    def vmf_terms(self, modality: str) -> tuple[VmfParams, DensityThreshold]:
        if modality == "text":
            return self.vmf_text, self.vmf_threshold_text
        if not self.has_video:
            raise error.MissingModalityReferences(self.task_name, "video")
        return self.vmf_video, self.vmf_threshold_video

    def gaussian_terms(self, modality: str) -> tuple[GaussianParams, DensityThreshold]:
        if modality == "text":
            return self.gaussian_text, self.gaussian_threshold_text
        if not self.has_video:
            raise error.MissingModalityReferences(self.task_name, "video")
        return self.gaussian_video, self.gaussian_threshold_video

    def reference_rows(self, modality: str) -> int:
        matrix, _, _ = self.kde_terms(modality)
        return matrix.n


@dataclass(frozen=True)
class ReferenceBundle:
    tasks: tuple[TaskReference, ...]
    dim: int
    build_config: BuildConfig
    root_refs: EmbeddingMatrix

    def __post_init__(self):
        names = [t.task_name for t in self.tasks]
        if len(set(names)) != len(names):
            raise error.UsageError(f"duplicate task names: {names}")
        for task in self.tasks:
            if task.dim != self.dim:
                raise error.DimensionMismatch(self.dim, task.dim, f"task {task.task_name!r}")
        object.__setattr__(self, "tasks", tuple(self.tasks))

    def __len__(self):
        return len(self.tasks)

    def task(self, name: str) -> TaskReference:
        for t in self.tasks:
            if t.task_name == name:
                return t
        raise KeyError(name)

    @property
    def root(self) -> np.ndarray:
        return self.root_refs.rows[0]

    @property
    def task_names(self) -> list[str]:
        return [t.task_name for t in self.tasks]

    @property
    def has_video(self) -> bool:
        return all(t.has_video for t in self.tasks)


def root_distances(S, root) -> np.ndarray:
    """delta_r(s) = ||s - s_r|| for each row of S"""
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    return np.linalg.norm(S - root[None, :], axis=1)


def storage_precision(matrix: EmbeddingMatrix) -> EmbeddingMatrix:
    """RSPC1 저장 정밀도(float32)로 맞춘 행렬. 저장 후 다시 읽어도 같은 행이 나오도록 한다"""
    if matrix.payload is not None:
        return matrix
    return EmbeddingMatrix.from_rows(matrix.to_payload())


def root_matrix(root) -> EmbeddingMatrix:
    """루트 임베딩을 저장 정밀도의 1행 행렬로 만든다"""
    if not isinstance(root, EmbeddingMatrix):
        root = EmbeddingMatrix.from_rows(np.asarray(root, dtype=np.float64)[None, :], "root embedding")
    if root.n != 1:
        raise error.DimensionMismatch("1 row", root.n, "root embedding")
    return storage_precision(root)


def _check_level(value: float, name: str):
    if not 0.0 < value < 1.0:
        raise error.POutOfRange(f"{name}={value}")


def build_task_reference(
    name: str,
    text_bundle: EmbeddingMatrix,
    video_bundle: EmbeddingMatrix | None,
    root,
    alpha: float = DEFAULT_ALPHA,
    q: float = DEFAULT_Q,
    loo: bool = True,
    ridge: float = DEFAULT_GAUSSIAN_RIDGE,
) -> TaskReference:
    _check_level(alpha, "alpha")
    _check_level(q, "q")
    text = storage_precision(text_bundle)
    root = root_matrix(root).rows[0]
    if root.shape[0] != text.dim:
        raise error.DimensionMismatch(text.dim, root.shape[0], f"task {name!r} root")

    kappa_text = estimate_kappa(text)
    if kappa_text <= 0.0:
        raise error.KappaZero(name, "text")
    rel_text = self_density_threshold(text, kappa_text, alpha, loo)
    vmf_text = VmfParams(text.mean_direction(), kappa_text)
    vmf_thr_text = single_vmf_threshold(text, vmf_text, alpha)
    gauss_text = fit_gaussian(text, ridge)
    gauss_thr_text = gaussian_threshold(text, gauss_text, alpha)

    video = kappa_video = rel_video = vmf_video = vmf_thr_video = gauss_video = gauss_thr_video = None
    if video_bundle is not None:
        video = storage_precision(video_bundle)
        if video.dim != text.dim:
            raise error.DimensionMismatch(text.dim, video.dim, f"task {name!r} video references")
        kappa_video = estimate_kappa(video)
        if kappa_video <= 0.0:
            raise error.KappaZero(name, "video")
        rel_video = self_density_threshold(video, kappa_video, alpha, loo)
        vmf_video = VmfParams(video.mean_direction(), kappa_video)
        vmf_thr_video = single_vmf_threshold(video, vmf_video, alpha)
        gauss_video = fit_gaussian(video, ridge)
        gauss_thr_video = gaussian_threshold(video, gauss_video, alpha)

    spec_threshold = quantile(root_distances(text.rows, root), q)

    logger.info(
        f"task {name!r}: N_text={text.n} kappa_text={kappa_text:.2f} rel_thr={rel_text.log_threshold:.4f} "
        f"spec_thr={spec_threshold:.4f}"
        + (f" N_video={video.n} kappa_video={kappa_video:.2f}" if video is not None else "")
    )
    return TaskReference(
        task_name=name,
        text_refs=text,
        kappa_text=kappa_text,
        relevance_threshold_text=rel_text,
        vmf_text=vmf_text,
        vmf_threshold_text=vmf_thr_text,
        root=root,
        specificity_threshold=spec_threshold,
        q=q,
        video_refs=video,
        kappa_video=kappa_video,
        relevance_threshold_video=rel_video,
        vmf_video=vmf_video,
        vmf_threshold_video=vmf_thr_video,
        gaussian_text=gauss_text,
        gaussian_threshold_text=gauss_thr_text,
        gaussian_video=gauss_video,
        gaussian_threshold_video=gauss_thr_video,
    )


def build_reference_bundle(
    task_specs,
    root,
    alpha: float = DEFAULT_ALPHA,
    q: float = DEFAULT_Q,
    loo: bool = True,
    modality: str = "text",
    workers: int = 1,
    ridge: float = DEFAULT_GAUSSIAN_RIDGE,
) -> ReferenceBundle:
    """task_specs: (name, text matrix, video matrix | None) 목록"""
    task_specs = list(task_specs)
    if not task_specs:
        raise error.UsageError("at least one --task is required")
    root_refs = root_matrix(root)

    def build(spec):
        name, text, video = spec
        return build_task_reference(name, text, video, root_refs, alpha, q, loo, ridge)

    if workers > 1 and len(task_specs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            tasks = list(pool.map(build, task_specs))
    else:
        tasks = [build(spec) for spec in task_specs]

    sizes = {
        t.task_name: {"text": t.text_refs.n, **({"video": t.video_refs.n} if t.has_video else {})} for t in tasks
    }
    build_config = BuildConfig(
        alpha=alpha, q=q, loo=loo, gaussian_ridge=ridge, modality=modality, reference_sizes=sizes
    )
    return ReferenceBundle(tuple(tasks), tasks[0].dim, build_config, root_refs)


# ---------------------------------------------------------------------------
# 저장 / 로드
# ---------------------------------------------------------------------------


def file_checksum(path) -> str:
    h = hashlib.blake2b(digest_size=8)
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name) or "task"


def _threshold_entry(thr: DensityThreshold | None) -> ThresholdEntry | None:
    return None if thr is None else ThresholdEntry(**thr.to_dict())


def _threshold(entry: ThresholdEntry | None) -> DensityThreshold | None:
    return None if entry is None else DensityThreshold(entry.log_threshold, entry.alpha, entry.leave_one_out)


def save_bundle(bundle: ReferenceBundle, path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)

    write_bundle(bundle.root_refs, None, out / ROOT_FILE)
    entries = []
    for index, task in enumerate(bundle.tasks):
        stem = f"{index:03d}-{_safe_name(task.task_name)}"
        text_file = f"{stem}.text.rspc"
        write_bundle(task.text_refs, None, out / text_file)
        checksums = {text_file: file_checksum(out / text_file)}
        video_file = None
        if task.has_video:
            video_file = f"{stem}.video.rspc"
            write_bundle(task.video_refs, None, out / video_file)
            checksums[video_file] = file_checksum(out / video_file)
        entries.append(
            TaskEntry(
                name=task.task_name,
                n_text=task.text_refs.n,
                n_video=task.video_refs.n if task.has_video else None,
                kappa_text=task.kappa_text,
                kappa_video=task.kappa_video,
                relevance_threshold_text=_threshold_entry(task.relevance_threshold_text),
                relevance_threshold_video=_threshold_entry(task.relevance_threshold_video),
                vmf_threshold_text=_threshold_entry(task.vmf_threshold_text),
                vmf_threshold_video=_threshold_entry(task.vmf_threshold_video),
                gaussian_threshold_text=_threshold_entry(task.gaussian_threshold_text),
                gaussian_threshold_video=_threshold_entry(task.gaussian_threshold_video),
                specificity_threshold=task.specificity_threshold,
                q=task.q,
                text_file=text_file,
                video_file=video_file,
                checksums=checksums,
            )
        )

    header = BundleHeader(
        version=BUNDLE_VERSION,
        dim=bundle.dim,
        build_config=bundle.build_config,
        root_file=ROOT_FILE,
        root_checksum=file_checksum(out / ROOT_FILE),
        tasks=entries,
    )
    (out / HEADER_FILE).write_bytes(orjson.dumps(header.dict(), option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS))
    logger.info(f"saved reference bundle with {len(entries)} task(s) to {out}")
    return out


def _load_matrix(directory: Path, name: str, expected_checksum: str | None) -> EmbeddingMatrix:
    path = directory / name
    if not path.is_file():
        raise error.MissingMatrixFile(path)
    if expected_checksum is None:
        raise error.DataError(f"{directory / HEADER_FILE}: no checksum recorded for {name}")
    matrix, _ = read_bundle(path)
    found = file_checksum(path)
    if found != expected_checksum:
        raise error.ChecksumMismatch(path, expected_checksum, found)
    return matrix


def load_bundle(path, verify: bool = False) -> ReferenceBundle:
    directory = Path(path)
    header_path = directory / HEADER_FILE
    if not header_path.is_file():
        raise error.MissingMatrixFile(header_path)
    try:
        raw = orjson.loads(header_path.read_bytes())
    except orjson.JSONDecodeError as e:
        raise error.DataError(f"{header_path}: bundle header is not valid JSON ({e})")
    if not isinstance(raw, dict):
        raise error.DataError(f"{header_path}: bundle header must be a JSON object")
    if raw.get("version") != BUNDLE_VERSION:
        raise error.VersionUnsupported(header_path, raw.get("version"))
    try:
        header = BundleHeader.parse_obj(raw)
    except ValidationError as e:
        raise error.DataError(f"{header_path}: invalid bundle header\n{e}")

    root_refs = _load_matrix(directory, header.root_file, header.root_checksum)
    root = root_refs.rows[0]
    ridge = header.build_config.gaussian_ridge

    tasks = []
    for entry in header.tasks:
        text = _load_matrix(directory, entry.text_file, entry.checksums.get(entry.text_file))
        if text.dim != header.dim:
            raise error.DimensionMismatch(header.dim, text.dim, str(directory / entry.text_file))
        video = None
        if entry.video_file is not None:
            video = _load_matrix(directory, entry.video_file, entry.checksums.get(entry.video_file))
            if video.dim != header.dim:
                raise error.DimensionMismatch(header.dim, video.dim, str(directory / entry.video_file))
        tasks.append(
            TaskReference(
                task_name=entry.name,
                text_refs=text,
                kappa_text=entry.kappa_text,
                relevance_threshold_text=_threshold(entry.relevance_threshold_text),
                vmf_text=VmfParams(text.mean_direction(), entry.kappa_text),
                vmf_threshold_text=_threshold(entry.vmf_threshold_text),
                root=root,
                specificity_threshold=entry.specificity_threshold,
                q=entry.q,
                video_refs=video,
                kappa_video=entry.kappa_video,
                relevance_threshold_video=_threshold(entry.relevance_threshold_video),
                vmf_video=VmfParams(video.mean_direction(), entry.kappa_video) if video is not None else None,
                vmf_threshold_video=_threshold(entry.vmf_threshold_video),
                gaussian_text=fit_gaussian(text, ridge),
                gaussian_threshold_text=_threshold(entry.gaussian_threshold_text),
                gaussian_video=fit_gaussian(video, ridge) if video is not None else None,
                gaussian_threshold_video=_threshold(entry.gaussian_threshold_video),
            )
        )

    bundle = ReferenceBundle(tuple(tasks), header.dim, header.build_config, root_refs)
    if verify:
        drift = verify_bundle(bundle)
        for item in drift:
            logger.warning(
                f"task {item['task']!r}: stored {item['field']}={item['stored']!r} "
                f"but recomputed {item['recomputed']!r}"
            )
        if not drift:
            logger.info(f"bundle {directory}: stored thresholds match recomputation")
    return bundle


def verify_bundle(bundle: ReferenceBundle) -> list[dict]:
    """저장된 임계값을 행렬에서 다시 계산해 차이를 보고한다"""
    cfg = bundle.build_config
    drift = []
    for task in bundle.tasks:
        fresh = build_task_reference(
            task.task_name,
            task.text_refs,
            task.video_refs,
            bundle.root_refs,
            cfg.alpha,
            task.q,
            cfg.loo,
            cfg.gaussian_ridge,
        )
        pairs = {
            "kappa_text": (task.kappa_text, fresh.kappa_text),
            "relevance_threshold_text": (
                task.relevance_threshold_text.log_threshold,
                fresh.relevance_threshold_text.log_threshold,
            ),
            "vmf_threshold_text": (task.vmf_threshold_text.log_threshold, fresh.vmf_threshold_text.log_threshold),
            "gaussian_threshold_text": (
                task.gaussian_threshold_text.log_threshold,
                fresh.gaussian_threshold_text.log_threshold,
            ),
            "specificity_threshold": (task.specificity_threshold, fresh.specificity_threshold),
        }
        if task.has_video:
            pairs["kappa_video"] = (task.kappa_video, fresh.kappa_video)
            pairs["relevance_threshold_video"] = (
                task.relevance_threshold_video.log_threshold,
                fresh.relevance_threshold_video.log_threshold,
            )
            pairs["vmf_threshold_video"] = (
                task.vmf_threshold_video.log_threshold,
                fresh.vmf_threshold_video.log_threshold,
            )
            pairs["gaussian_threshold_video"] = (
                task.gaussian_threshold_video.log_threshold,
                fresh.gaussian_threshold_video.log_threshold,
            )
        for field, (stored, recomputed) in pairs.items():
            if stored != recomputed:
                drift.append({"task": task.task_name, "field": field, "stored": stored, "recomputed": recomputed})
    return drift
