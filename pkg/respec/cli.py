"""
respec 명령 모음 (fire 로 노출)

    python run.py synth --seed 42 --out data
    python run.py build-ref --task='[task0,task1]' --text='[a.rspc,b.rspc]' --root root.rspc --out bundle
    python run.py filter --bundle bundle --video v.rspc --text t.rspc --out run
    python run.py analyze --log run/decisions.jsonl --out report

List-valued flags (--task, --text, --video, --ref-text) take one value or a
bracketed list; entries are paired by position.
"""
from pathlib import Path

import fire
import orjson
from pydantic import ValidationError

from respec import error
from respec.analysis import filtered_vs_downstream, format_report, load_accepted, read_decision_log, report, write_report
from respec.core import read_bundle, read_manifest
from respec.engine import StreamInput, format_stats_summary, run_stream
from respec.model import DEFAULT_BUCKETS, RunConfig, SynthConfig
from respec.reference import build_reference_bundle, load_bundle, save_bundle
from respec.synth import generate
from respec.utility import (
    get_error,
    log_config_message,
    log_error_message,
    log_message,
    log_stats_message,
    logger,
    settings,
    setup_logging,
)
from respec.utils.validation import (
    validate_alt_pair,
    validate_bundle_dir,
    validate_command,
    validate_pairing,
    validate_paths,
    validate_required,
)


def _as_list(value) -> list[str]:
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return [str(v) for v in value]
    text = str(value).strip()
    if text.startswith("[") and text.endswith("]"):
        # fire 가 리스트로 해석하지 못한 경로 목록
        return [v.strip().strip("\"'") for v in text[1:-1].split(",") if v.strip()]
    return [text]


def _check(name: str, *groups):
    ok, errors = validate_command(name, *groups)
    if not ok:
        raise error.UsageError(f"{name}: " + "; ".join(errors))


def _read_config_file(path) -> dict:
    if path is None:
        return {}
    if not Path(path).is_file():
        raise error.UsageError(f"--config {path}: file not found")
    try:
        data = orjson.loads(Path(path).read_bytes())
    except orjson.JSONDecodeError as e:
        raise error.UsageError(f"--config {path}: invalid JSON ({e})")
    if not isinstance(data, dict):
        raise error.UsageError(f"--config {path}: expected a JSON object")
    unknown = set(data) - set(RunConfig.__fields__)
    if unknown:
        raise error.UsageError(f"--config {path}: unknown keys {sorted(unknown)}")
    return data


def resolve_config(flags: dict, config_path=None) -> RunConfig:
    """CLI 플래그 > --config 파일 > RESPEC_* 환경 변수 > 기본값"""
    merged = {}
    if settings.WORKERS is not None:
        merged["workers"] = settings.WORKERS
    merged["batch_size"] = settings.BATCH_SIZE
    merged |= _read_config_file(config_path)
    merged |= {k: v for k, v in flags.items() if v is not None}
    try:
        return RunConfig(**merged)
    except ValidationError as e:
        raise error.UsageError(f"invalid configuration\n{e}")


def _read_root(path):
    matrix, _ = read_bundle(path)
    if matrix.n != 1:
        raise error.DataError(f"--root {path}: expected a one-row bundle, found {matrix.n} rows")
    return matrix


class ReSpecCLI:
    """다운스트림 태스크 인지 스트리밍 필터

    Args:
        log_level: loguru level (default RESPEC_LOG_LEVEL or INFO)
        log_dir: directory for a rotating respec.log file sink
    """

    def __init__(self, log_level=None, log_dir=None):
        if log_level is not None or log_dir is not None:
            setup_logging(log_level, log_dir)

    def build_ref(
        self,
        task=None,
        text=None,
        video=None,
        root=None,
        out=None,
        alpha=None,
        q=None,
        loo=None,
        no_loo=False,
        ridge=None,
        workers=None,
        config=None,
        verify=False,
    ):
        """참조 번들 생성

        Args:
            task: task name(s), paired by position with --text / --video
            text: RSPC1 text reference bundle(s), one per task
            video: optional RSPC1 video reference bundle(s), one per task
            root: one-row RSPC1 bundle holding the empty-string text embedding
            out: output bundle directory
            alpha: relevance significance level, the alpha-quantile of reference self-densities.
                Default 0.05, the calibration level of the vMF-KDE relevance test: about 95% of
                held-out in-task captions pass.
            q: specificity quantile of reference root distances. Default 0.1: the 10% of reference
                captions closest to the empty-caption root embedding define "generic".
            loo: leave-one-out self-density calibration (default on; --no-loo disables).
                Without it every reference row scores its own kernel and the threshold collapses
                at large kappa.
            ridge: diagonal ridge added to the covariance of the gaussian relevance density
                (default 1e-4, only used by --density gaussian)
            workers: build tasks in parallel
            config: JSON file with RunConfig keys
            verify: reload the written bundle and recompute every threshold
        """
        tasks, texts, videos = _as_list(task), _as_list(text), _as_list(video)
        _check(
            "build-ref",
            validate_required({"task": tasks, "text": texts, "root": root, "out": out}),
            validate_pairing(tasks, texts, videos),
            validate_paths({"text": texts, "video": videos or None, "root": root}),
        )
        if no_loo:
            loo = False
        cfg = resolve_config({"alpha": alpha, "q": q, "loo": loo, "gaussian_ridge": ridge, "workers": workers}, config)
        log_config_message(cfg.dict(include={"alpha", "q", "loo", "gaussian_ridge", "workers"}), "build-ref config")

        specs = []
        for i, name in enumerate(tasks):
            text_matrix, _ = read_bundle(texts[i])
            video_matrix = read_bundle(videos[i])[0] if videos else None
            specs.append((name, text_matrix, video_matrix))
        bundle = build_reference_bundle(
            specs, _read_root(root), cfg.alpha, cfg.q, cfg.loo, cfg.modality, cfg.workers, cfg.gaussian_ridge
        )
        save_bundle(bundle, out)
        if verify:
            load_bundle(out, verify=True)

        lines = [f"{'task':<20} {'N_text':>7} {'kappa_text':>11} {'rel_thr':>11} {'spec_thr':>9}"]
        for t in bundle.tasks:
            lines.append(
                f"{t.task_name:<20} {t.text_refs.n:>7} {t.kappa_text:>11.3f} "
                f"{t.relevance_threshold_text.log_threshold:>11.4f} {t.specificity_threshold:>9.5f}"
            )
        print("\n".join(lines))

    def filter(
        self,
        bundle=None,
        video=None,
        text=None,
        manifest=None,
        out=None,
        tau=None,
        modality=None,
        combine=None,
        baseline=None,
        tau_text=None,
        density=None,
        stages=None,
        workers=None,
        batch_size=None,
        alt_video=None,
        alt_text=None,
        skip_bad=None,
        stats=None,
        config=None,
    ):
        """스트림 필터링

        Args:
            bundle: reference bundle directory from build-ref
            video: RSPC1 stream video bundle
            text: RSPC1 stream text bundle (row-paired with --video)
            manifest: JSON-lines manifest with record ids (default: sidecar of --text)
            out: output directory for decisions.jsonl, accepted_ids.txt, stats.json
            tau: alignment cosine threshold. Default 0.28, the cosine cut used for large web
                image-text curation; the supported sweep is 0.30 down to 0.20 in steps of 0.02.
            modality: relevance modality, text | video | union | intersection. Default text: task
                captions are more concentrated than task videos, and video alone over-accepts.
            combine: joint (one task passes relevance and specificity) | independent
            baseline: respec | lb_threshold | cit_trainfree | color_samplewise
            tau_text: text similarity threshold of the train-free CiT baseline. Default 0.55, that
                baseline's own default and the best value in its threshold sweep.
            density: kde (vMF kernel density, default) | vmf (single vMF fit) |
                gaussian (single full-covariance gaussian fit); the last two are relevance ablations
            stages: per-task stages to run after alignment, e.g. relevance,specificity (default),
                relevance, specificity or none; disabled stages count as passing
            workers: decision threads (fallback RESPEC_WORKERS, default 1)
            batch_size: records per decision batch (no effect on decisions)
            alt_video: second-model video bundle for color_samplewise
            alt_text: second-model text bundle for color_samplewise
            skip_bad: record malformed rows as error rows instead of failing
            stats: stats JSON path (default <out>/stats.json)
            config: JSON file with RunConfig keys
        """
        flags = {
            "bundle": bundle,
            "video": video,
            "text": text,
            "manifest": manifest,
            "out": out,
            "tau": tau,
            "modality": modality,
            "combine": combine,
            "baseline": baseline,
            "tau_text": tau_text,
            "density": density,
            "stages": stages,
            "workers": workers,
            "batch_size": batch_size,
            "alt_video": alt_video,
            "alt_text": alt_text,
            "skip_bad": skip_bad,
            "stats": stats,
        }
        cfg = resolve_config(flags, config)
        _check(
            "filter",
            validate_required({"bundle": cfg.bundle, "video": cfg.video, "text": cfg.text, "out": cfg.out}),
            validate_bundle_dir(cfg.bundle),
            validate_paths(
                {
                    "video": cfg.video,
                    "text": cfg.text,
                    "manifest": cfg.manifest,
                    "alt_video": cfg.alt_video,
                    "alt_text": cfg.alt_text,
                }
            ),
            validate_alt_pair(cfg.alt_video, cfg.alt_text),
        )
        log_config_message(cfg.dict(), "filter config")

        references = load_bundle(cfg.bundle)
        stream = StreamInput(cfg.video, cfg.text, cfg.manifest, cfg.alt_video, cfg.alt_text)
        result = run_stream(
            stream,
            references,
            cfg.filter_config(),
            cfg.out,
            workers=cfg.workers,
            batch_size=cfg.batch_size,
            skip_bad=cfg.skip_bad,
            stats_path=cfg.stats,
            config_echo=cfg.dict(),
        )
        log_stats_message(result.dict())
        print(format_stats_summary(result))

    def synth(
        self,
        seed=None,
        out=None,
        dim=64,
        tasks=2,
        ref_size=2000,
        stream_size=10_000,
        kappa=300.0,
        in_dist_rate=0.3,
        video_refs=True,
        alt=True,
    ):
        """합성 태스크/스트림 생성 (seed 필수)

        Args:
            seed: random seed (required)
            out: output directory
            dim: embedding dimension
            tasks: number of downstream tasks
            ref_size: reference rows per task
            stream_size: stream records
            kappa: vMF concentration of task texts
            in_dist_rate: share of stream records drawn from some task
            video_refs: also write per-task video references
            alt: also write second-model (alt) stream bundles
        """
        _check("synth", validate_required({"seed": seed, "out": out}))
        try:
            cfg = SynthConfig(
                seed=seed,
                dim=dim,
                tasks=tasks,
                ref_size=ref_size,
                stream_size=stream_size,
                kappa=kappa,
                in_dist_rate=in_dist_rate,
                video_refs=video_refs,
                alt=alt,
            )
        except ValidationError as e:
            raise error.UsageError(f"synth: invalid arguments\n{e}")
        summary = generate(cfg, out)
        print(f"synthetic data written to {out}")
        for name, count in summary["counts"].items():
            print(f"  {name:<12} {count}")

    def analyze(
        self,
        log=None,
        out=None,
        manifest=None,
        bundle=None,
        video=None,
        text=None,
        task=None,
        ref_text=None,
        buckets=DEFAULT_BUCKETS,
    ):
        """결정 로그 요약과 분포 비교

        Args:
            log: decisions.jsonl from filter
            out: output directory for report.json
            manifest: stream manifest; meta.source labels add per-source rates
            bundle: reference bundle, enables Frechet distances to each task
            video: stream video bundle (with --text and --bundle)
            text: stream text bundle (with --video and --bundle)
            task: restrict distribution metrics to these task(s)
            ref_text: per-task reference text manifest(s), paired with --task, for n-gram KL
            buckets: hashed n-gram bucket count (default 10000)
        """
        tasks, ref_texts = _as_list(task), _as_list(ref_text)
        _check(
            "analyze",
            validate_required({"log": log}),
            validate_paths({"log": log, "manifest": manifest, "video": video, "text": text, "ref_text": ref_texts or None}),
            validate_bundle_dir(bundle),
            ["--ref-text needs one --task per file"] if ref_texts and len(ref_texts) != len(tasks) else [],
            ["--video and --text must be given together"] if (video is None) != (text is None) else [],
        )

        decisions = read_decision_log(log)
        manifests = read_manifest(manifest) if manifest else None
        summary = report(decisions, manifests, buckets)

        if bundle is not None and video is not None and summary["accepted"] > 0:
            references = load_bundle(bundle)
            accepted_video, accepted_text, accepted_texts = load_accepted(decisions, video, text, manifest)
            names = tasks or references.task_names
            distributions = []
            for i, name in enumerate(names):
                try:
                    ref = references.task(name)
                except KeyError:
                    raise error.UsageError(f"--task {name}: not in bundle {bundle} ({references.task_names})")
                reference_texts = None
                if ref_texts:
                    reference_texts = [m.get("text") or "" for m in read_manifest(ref_texts[i])]
                distributions.append(
                    filtered_vs_downstream(
                        accepted_video, accepted_text, ref, accepted_texts if reference_texts else None, reference_texts, buckets
                    )
                )
            summary["distribution"] = distributions
        elif bundle is not None:
            logger.warning("distribution metrics skipped: need --video/--text and at least one accepted record")

        if out is not None:
            write_report(summary, Path(out) / "report.json")
            log_message(f"report written to {Path(out) / 'report.json'}")
        print(format_report(summary))
        for d in summary.get("distribution", []):
            print(" ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in d.items()))


def main(argv=None) -> int:
    """fire 실행 후 오류 종류를 종료 코드로 변환 (usage 1, data 2, numeric 3)"""
    try:
        fire.Fire(ReSpecCLI, command=argv, name="respec")
    except error.ReSpecError as e:
        log_error_message(e, "respec")
        logger.debug(get_error(e))
        return e.exit_code
    except fire.core.FireExit as e:
        return 0 if e.code in (0, None) else 1
    return 0
