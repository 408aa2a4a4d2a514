import logging
import os

from dotenv import load_dotenv

load_dotenv()


def get_worker_count() -> int:
    raw = os.environ.get("MSTHERMO_WORKERS")
    if not raw:
        return os.cpu_count() or 1
    try:
        workers = int(raw)
    except ValueError:
        raise RuntimeError(f"MSTHERMO_WORKERS must be an integer, got {raw!r}") from None
    if workers < 1:
        raise RuntimeError(f"MSTHERMO_WORKERS must be >= 1, got {workers}")
    return workers


def get_output_dir() -> str:
    return os.environ.get("MSTHERMO_OUTPUT_DIR") or "results"


def get_cache_dir() -> str:
    return os.environ.get("MSTHERMO_CACHE_DIR") or ".msthermo-cache"


def get_log_level() -> int:
    name = (os.environ.get("MSTHERMO_LOG_LEVEL") or "INFO").upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.INFO
