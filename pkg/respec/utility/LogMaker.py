import sys
import os
import traceback
from loguru import logger
from devtools import pformat
from respec.utility.setting import settings

CONSOLE_FORMAT = "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level}</level> | <level>{message}</level>"
FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} | {level} | {name}:{function}:{line} | {message}"

_sink_ids: list[int] = []


def setup_logging(level: str | None = None, log_dir: str | None = None):
    """로깅 시스템 초기화 (stderr + 선택적 파일 로테이션)"""
    level = (level or settings.LOG_LEVEL).upper()
    log_dir = log_dir if log_dir is not None else settings.LOG_DIR

    logger.remove()
    _sink_ids.clear()
    _sink_ids.append(logger.add(sys.stderr, colorize=True, level=level, format=CONSOLE_FORMAT))
    if log_dir:
        _sink_ids.append(
            logger.add(
                os.path.join(log_dir, "respec.log"),
                rotation="1 days",
                retention="7 days",
                level=level,
                format=FILE_FORMAT,
            )
        )
    return logger


setup_logging()


def get_error(e):
    tb = traceback.extract_tb(e.__traceback__)
    error_msg = []

    for tb_info in tb:
        error_msg.append(f"File {tb_info.filename}, line {tb_info.lineno}, in {tb_info.name}")
        if tb_info.line and "raise error." in tb_info.line:
            continue
        error_msg.append(f"  {tb_info.line}")

    error_msg.append(str(e))

    return "\n".join(error_msg)


def log_message(message="None", level="INFO"):
    logger.log(level.upper(), message)


def log_error_message(error, name):
    if isinstance(error, Exception):
        error = str(error)
    logger.error(f"{name} failed\n{error}")


def log_config_message(config: dict, name="config"):
    logger.info(f"effective {name}\n{pformat(config)}")


def log_stats_message(stats: dict):
    logger.info(
        "records_in={records_in} accepted={accepted} clip_ratio={clip_ratio:.4f} "
        "rejected(alignment={rejected_by_alignment}, relevance={rejected_by_relevance}, "
        "specificity={rejected_by_specificity}) bad={bad_records} wall_time={wall_time:.2f}s".format(**stats)
    )
