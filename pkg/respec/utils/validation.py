"""
명령 인자 검증 유틸리티 (입출력 전에 실행)
"""
from pathlib import Path

from respec.utility.LogMaker import logger


def validate_required(values: dict) -> list[str]:
    """필수 플래그 누락 검사"""
    return [f"--{flag.replace('_', '-')} is required" for flag, value in values.items() if value in (None, "", [])]


def validate_paths(paths: dict) -> list[str]:
    """입력 파일 존재 여부 검사. values 는 경로 또는 경로 목록"""
    errors = []
    for flag, value in paths.items():
        if value is None:
            continue
        for path in value if isinstance(value, list) else [value]:
            if not Path(path).is_file():
                errors.append(f"--{flag.replace('_', '-')} {path}: file not found")
    return errors


def validate_bundle_dir(path) -> list[str]:
    if path is None:
        return []
    if not (Path(path) / "bundle.json").is_file():
        return [f"--bundle {path}: not a reference bundle directory (bundle.json missing)"]
    return []


def validate_pairing(tasks: list, texts: list, videos: list) -> list[str]:
    """--task / --text / --video 위치별 짝 검사"""
    errors = []
    if len(texts) != len(tasks):
        errors.append(f"--task given {len(tasks)} time(s) but --text given {len(texts)} time(s)")
    if videos and len(videos) != len(tasks):
        errors.append(f"--video given {len(videos)} time(s), expected 0 or {len(tasks)}")
    if len(set(tasks)) != len(tasks):
        errors.append(f"--task names must be unique: {tasks}")
    return errors


def validate_alt_pair(alt_video, alt_text) -> list[str]:
    if (alt_video is None) != (alt_text is None):
        return ["--alt-video and --alt-text must be given together"]
    return []


def validate_command(name: str, *groups: list[str]) -> tuple[bool, list[str]]:
    """검증 결과 취합

    Returns:
        tuple: (검증 성공 여부, 오류 메시지 목록)
    """
    errors = [e for group in groups for e in group]
    if errors:
        for e in errors:
            logger.error(f"{name} argument error: {e}")
        return False, errors
    logger.debug(f"{name} arguments validated")
    return True, []
