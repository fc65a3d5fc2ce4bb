#!/usr/bin/env python3
"""
respec 전체 파이프라인 검증 스크립트
synth -> build-ref -> filter -> analyze 를 임시 디렉토리에서 실행하고
재현성과 기본 성질을 확인합니다.

    python scripts/test_system.py --seed 42 --stream-size 10000
"""

import sys
import tempfile
from pathlib import Path

import fire
import orjson
from loguru import logger

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from respec.cli import main as respec_main  # noqa: E402

STABLE_STATS_KEYS = ("records_in", "accepted", "rejected_by_alignment", "rejected_by_relevance", "rejected_by_specificity")


class ReSpecSystemTester:
    def __init__(self, seed: int = 42, stream_size: int = 10_000, ref_size: int = 2000, dim: int = 64):
        self.seed = seed
        self.synth_args = [
            "--seed", str(seed),
            "--dim", str(dim),
            "--ref-size", str(ref_size),
            "--stream-size", str(stream_size),
        ]
        self.test_results = []
        self.passed = 0
        self.failed = 0

    def test(self, name: str, condition: bool, error_msg: str = ""):
        """테스트 결과 기록"""
        if condition:
            self.passed += 1
            logger.info(f"✓ {name}")
            self.test_results.append((name, "PASS", ""))
        else:
            self.failed += 1
            logger.error(f"✗ {name}: {error_msg}")
            self.test_results.append((name, "FAIL", error_msg))

    def run_pipeline(self, base: Path, workers: int) -> dict:
        data, bundle, run, report = base / "data", base / "bundle", base / "run", base / "report"
        refs = data / "refs"
        stream = data / "stream"
        codes = [
            respec_main(["synth", "--out", str(data), *self.synth_args]),
            respec_main(
                [
                    "build-ref",
                    "--task=[task0,task1]",
                    f"--text=[{refs / 'task0.text.rspc'},{refs / 'task1.text.rspc'}]",
                    f"--video=[{refs / 'task0.video.rspc'},{refs / 'task1.video.rspc'}]",
                    "--root", str(data / "root.rspc"),
                    "--out", str(bundle),
                    "--verify",
                ]
            ),
            respec_main(
                [
                    "filter",
                    "--bundle", str(bundle),
                    "--video", str(stream / "video.rspc"),
                    "--text", str(stream / "text.rspc"),
                    "--out", str(run),
                    "--workers", str(workers),
                ]
            ),
            respec_main(
                [
                    "analyze",
                    "--log", str(run / "decisions.jsonl"),
                    "--manifest", str(stream / "text.jsonl"),
                    "--out", str(report),
                ]
            ),
        ]
        return {
            "codes": codes,
            "decisions": (run / "decisions.jsonl").read_bytes() if (run / "decisions.jsonl").exists() else b"",
            "report": orjson.loads((report / "report.json").read_bytes()) if (report / "report.json").exists() else {},
            "stats": orjson.loads((run / "stats.json").read_bytes()) if (run / "stats.json").exists() else {},
        }

    def run_all_tests(self):
        """모든 테스트 실행"""
        logger.info(f"=== respec 파이프라인 검증 시작 (seed={self.seed}) ===")
        with tempfile.TemporaryDirectory() as tmp:
            first = self.run_pipeline(Path(tmp) / "w1", workers=1)
            second = self.run_pipeline(Path(tmp) / "w4", workers=4)

        logger.info("\n[1/3] 실행 결과")
        self.test("모든 명령 종료 코드 0 (workers=1)", first["codes"] == [0, 0, 0, 0], str(first["codes"]))
        self.test("모든 명령 종료 코드 0 (workers=4)", second["codes"] == [0, 0, 0, 0], str(second["codes"]))

        logger.info("\n[2/3] 재현성")
        self.test("결정 로그 바이트 동일", first["decisions"] == second["decisions"], "decisions.jsonl differs")
        self.test("리포트 동일", first["report"] == second["report"], "report.json differs")
        self.test(
            "통계 카운터 동일",
            all(first["stats"].get(k) == second["stats"].get(k) for k in STABLE_STATS_KEYS),
            "stats counters differ",
        )

        logger.info("\n[3/3] 필터 성질")
        stats = first["stats"]
        rejected = sum(stats.get(k, 0) for k in STABLE_STATS_KEYS[2:])
        self.test(
            "accepted + rejected == records_in",
            stats.get("accepted", -1) + rejected == stats.get("records_in"),
            str(stats),
        )
        by_source = first["report"].get("by_source", {})
        background = by_source.get("background", {}).get("acceptance_rate", 1.0)
        task_rates = [v["acceptance_rate"] for k, v in by_source.items() if k != "background"]
        self.test(
            "태스크 레코드 수용률 > 배경 수용률",
            bool(task_rates) and min(task_rates) > background,
            f"task={task_rates} background={background}",
        )
        self.print_summary()

    def print_summary(self):
        """테스트 결과 요약"""
        total = self.passed + self.failed
        logger.info("\n" + "=" * 50)
        logger.info(f"총 테스트: {total}")
        logger.info(f"성공: {self.passed}")
        logger.info(f"실패: {self.failed}")
        if self.failed > 0:
            logger.info("\n실패한 테스트:")
            for name, status, error in self.test_results:
                if status == "FAIL":
                    logger.info(f"  - {name}: {error}")
        else:
            logger.info("\n✅ 모든 테스트를 통과했습니다!")


def main(seed: int = 42, stream_size: int = 10_000, ref_size: int = 2000, dim: int = 64):
    tester = ReSpecSystemTester(seed, stream_size, ref_size, dim)
    tester.run_all_tests()
    if tester.failed > 0:
        sys.exit(1)


if __name__ == "__main__":
    fire.Fire(main)
