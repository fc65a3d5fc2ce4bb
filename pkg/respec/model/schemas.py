from pydantic import BaseModel, BaseSettings, validator, root_validator
from typing import Literal, Any
import os


MODALITY_LITERAL = Literal["text", "video", "union", "intersection"]

COMBINE_LITERAL = Literal["joint_same_task", "independent"]

BASELINE_LITERAL = Literal["respec", "lb_threshold", "cit_trainfree", "color_samplewise"]

DENSITY_LITERAL = Literal["kde", "vmf", "gaussian"]

STAGE_LITERAL = Literal["relevance", "specificity"]

REJECTED_BY_LITERAL = Literal["none", "alignment", "relevance", "specificity", "error"]

# 기본값
DEFAULT_ALPHA = 0.05
DEFAULT_Q = 0.1
DEFAULT_TAU = 0.28
DEFAULT_TAU_TEXT = 0.55
TAU_SWEEP = (0.30, 0.28, 0.26, 0.24, 0.22, 0.20)
DEFAULT_BUCKETS = 10_000
DEFAULT_BATCH_SIZE = 1024
DEFAULT_STAGES = ("relevance", "specificity")
DEFAULT_GAUSSIAN_RIDGE = 1e-4

BUNDLE_VERSION = 1

COMBINE_ALIASES = {"joint": "joint_same_task", "joint_same_task": "joint_same_task", "independent": "independent"}

MODALITIES_NEEDING_VIDEO = ("video", "union", "intersection")


def find_env_file():
    current_path = os.path.abspath(__file__)
    while True:
        parent_path = os.path.dirname(current_path)
        env_path = os.path.join(parent_path, ".env")
        dev_env_path = os.path.join(parent_path, ".env.dev")
        if os.path.isfile(dev_env_path):
            return dev_env_path
        elif os.path.isfile(env_path):
            return env_path
        if parent_path == current_path:
            break
        current_path = parent_path
    return None


env_path = find_env_file()


class Settings(BaseSettings):
    WORKERS: int | None = None
    BATCH_SIZE: int = DEFAULT_BATCH_SIZE
    LOG_LEVEL: str = "INFO"
    LOG_DIR: str | None = None

    class Config:
        env_prefix = "RESPEC_"
        env_file = env_path
        env_file_encoding = "utf-8"

    @validator("WORKERS")
    def validate_workers(cls, v):
        if v is not None and v < 1:
            raise ValueError("RESPEC_WORKERS must be >= 1")
        return v

    @validator("LOG_LEVEL")
    def validate_log_level(cls, v):
        v = v.upper()
        if v not in ("TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"unknown log level {v}")
        return v


class FilterConfig(BaseModel):
    tau: float
    modality: MODALITY_LITERAL = "text"
    combine: COMBINE_LITERAL = "joint_same_task"
    baseline: BASELINE_LITERAL = "respec"
    tau_text: float = DEFAULT_TAU_TEXT
    density: DENSITY_LITERAL = "kde"
    stages: tuple[STAGE_LITERAL, ...] = DEFAULT_STAGES

    class Config:
        allow_mutation = False

    @validator("combine", pre=True)
    def parse_combine(cls, v):
        if isinstance(v, str) and v in COMBINE_ALIASES:
            return COMBINE_ALIASES[v]
        return v

    @validator("stages", pre=True)
    def parse_stages(cls, v):
        # "relevance,specificity" / "none" / 목록 모두 허용
        if isinstance(v, str):
            v = [] if v.strip().lower() in ("", "none") else [s.strip() for s in v.split(",")]
        return v

    @validator("stages")
    def order_stages(cls, v):
        return tuple(s for s in DEFAULT_STAGES if s in v)

    @validator("tau", "tau_text")
    def validate_cosine(cls, v, field):
        if not -1.0 <= v <= 1.0:
            raise ValueError(f"{field.name} must be in [-1, 1], got {v}")
        return v

    @property
    def needs_video(self) -> bool:
        return self.baseline == "respec" and self.uses_relevance and self.modality in MODALITIES_NEEDING_VIDEO

    @property
    def uses_relevance(self) -> bool:
        return "relevance" in self.stages

    @property
    def uses_specificity(self) -> bool:
        return "specificity" in self.stages


class RunConfig(FilterConfig):
    """CLI 플래그 + 설정 파일 + 환경 변수를 합친 실행 설정"""

    tau: float = DEFAULT_TAU
    bundle: str | None = None
    video: str | None = None
    text: str | None = None
    manifest: str | None = None
    alt_video: str | None = None
    alt_text: str | None = None
    out: str | None = None
    stats: str | None = None
    alpha: float = DEFAULT_ALPHA
    q: float = DEFAULT_Q
    loo: bool = True
    gaussian_ridge: float = DEFAULT_GAUSSIAN_RIDGE
    workers: int = 1
    batch_size: int = DEFAULT_BATCH_SIZE
    seed: int | None = None
    skip_bad: bool = False

    @validator("alpha", "q")
    def validate_level(cls, v, field):
        if not 0.0 < v < 1.0:
            raise ValueError(f"{field.name} must be in (0, 1), got {v}")
        return v

    @validator("gaussian_ridge")
    def validate_ridge(cls, v):
        if not v > 0:
            raise ValueError(f"gaussian_ridge must be > 0, got {v}")
        return v

    @validator("workers", "batch_size")
    def validate_positive(cls, v, field):
        if v < 1:
            raise ValueError(f"{field.name} must be >= 1, got {v}")
        return v

    def filter_config(self) -> FilterConfig:
        return FilterConfig(**self.dict(include=set(FilterConfig.__fields__)))


class ThresholdEntry(BaseModel):
    log_threshold: float
    alpha: float
    leave_one_out: bool


class TaskEntry(BaseModel):
    name: str
    n_text: int
    n_video: int | None = None
    kappa_text: float
    kappa_video: float | None = None
    relevance_threshold_text: ThresholdEntry
    relevance_threshold_video: ThresholdEntry | None = None
    vmf_threshold_text: ThresholdEntry
    vmf_threshold_video: ThresholdEntry | None = None
    gaussian_threshold_text: ThresholdEntry
    gaussian_threshold_video: ThresholdEntry | None = None
    specificity_threshold: float
    q: float
    text_file: str
    video_file: str | None = None
    checksums: dict[str, str]

    @root_validator
    def validate_video(cls, values):
        has_video = values.get("video_file") is not None
        for key in (
            "kappa_video",
            "relevance_threshold_video",
            "vmf_threshold_video",
            "gaussian_threshold_video",
            "n_video",
        ):
            if (values.get(key) is not None) != has_video:
                raise ValueError(f"task {values.get('name')!r}: {key} inconsistent with video_file")
        return values


class BuildConfig(BaseModel):
    alpha: float
    q: float
    loo: bool
    gaussian_ridge: float = DEFAULT_GAUSSIAN_RIDGE
    modality: MODALITY_LITERAL = "text"
    reference_sizes: dict[str, dict[str, int]] = {}


class BundleHeader(BaseModel):
    version: int
    dim: int
    build_config: BuildConfig
    root_file: str
    root_checksum: str
    tasks: list[TaskEntry]

    @validator("tasks")
    def validate_unique(cls, v):
        names = [t.name for t in v]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate task names in {names}")
        return v


class TaskTraceRow(BaseModel):
    # rel_logd 는 주 모달리티(text, video 모드에서는 video) 밀도, rel_pass 는 결합된 관련성 판정
    task: str
    rel_logd: float | None = None
    rel_pass: bool
    spec_dist: float | None = None
    spec_pass: bool
    rel_pass_text: bool | None = None
    rel_logd_video: float | None = None
    rel_pass_video: bool | None = None


class DecisionRow(BaseModel):
    id: str
    accepted: bool
    rejected_by: REJECTED_BY_LITERAL
    alignment_score: float | None = None
    per_task: list[TaskTraceRow] = []
    baseline_score: float | None = None
    error: str | None = None


class StreamStats(BaseModel):
    records_in: int = 0
    accepted: int = 0
    rejected_by_alignment: int = 0
    rejected_by_relevance: int = 0
    rejected_by_specificity: int = 0
    bad_records: int = 0
    dot_products: int = 0
    kernel_row_evaluations: int = 0
    root_distances: int = 0
    rows_read: int = 0
    wall_time: float = 0.0
    clip_ratio: float = 0.0
    started_at: str | None = None
    finished_at: str | None = None
    config: dict[str, Any] = {}

    def count(self, rejected_by: str):
        if rejected_by == "none":
            self.accepted += 1
        elif rejected_by == "alignment":
            self.rejected_by_alignment += 1
        elif rejected_by == "relevance":
            self.rejected_by_relevance += 1
        elif rejected_by == "specificity":
            self.rejected_by_specificity += 1
        elif rejected_by == "error":
            self.bad_records += 1
            return
        self.records_in += 1

    def finalize(self):
        self.clip_ratio = self.accepted / self.records_in if self.records_in else 0.0
        return self

    @property
    def is_consistent(self) -> bool:
        rejected = self.rejected_by_alignment + self.rejected_by_relevance + self.rejected_by_specificity
        return self.accepted + rejected == self.records_in and 0.0 <= self.clip_ratio <= 1.0


class SynthConfig(BaseModel):
    """합성 태스크/스트림 생성 설정. seed 는 필수"""

    seed: int
    dim: int = 64
    tasks: int = 2
    ref_size: int = 2000
    stream_size: int = 10_000
    kappa: float = 300.0
    in_dist_rate: float = 0.3
    video_refs: bool = True
    alt: bool = True

    @validator("dim")
    def validate_dim(cls, v):
        if v < 2:
            raise ValueError(f"dim must be >= 2, got {v}")
        return v

    @validator("tasks", "ref_size")
    def validate_positive(cls, v, field):
        if v < 1 or (field.name == "ref_size" and v < 2):
            raise ValueError(f"{field.name} too small: {v}")
        return v

    @validator("stream_size")
    def validate_stream(cls, v):
        if v < 0:
            raise ValueError(f"stream_size must be >= 0, got {v}")
        return v

    @validator("kappa")
    def validate_kappa(cls, v):
        if not v > 0:
            raise ValueError(f"kappa must be > 0, got {v}")
        return v

    @validator("in_dist_rate")
    def validate_rate(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"in_dist_rate must be in [0, 1], got {v}")
        return v
