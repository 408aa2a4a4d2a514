"""Shared utility helpers used across the config, report and CLI layers."""
from typing import Iterable, List


def safe_float(value, default=0.0) -> float:
    """Safely convert a value to float, handling None and strings."""
    if value is None:
        return default
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(value.strip())
        except (ValueError, TypeError):
            return default
    return default


def float_list(value, default=()) -> List[float]:
    """Parse ``"0.5, 0.2,0.1"`` into floats; blanks fall back to ``default``."""
    if value is None or (isinstance(value, str) and not value.strip()):
        return list(default)
    if isinstance(value, (int, float)):
        return [float(value)]
    return [float(part) for part in str(value).split(",") if part.strip()]


def name_list(value, default=()) -> List[str]:
    if value is None or not str(value).strip():
        return list(default)
    return [part.strip() for part in str(value).split(",") if part.strip()]


def fmt17(value) -> str:
    """Fixed 17-significant-digit text so CSV baselines diff byte-for-byte."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    try:
        return format(float(value), ".17g")
    except (TypeError, ValueError):
        return str(value)


def fmt_row(values: Iterable) -> List[str]:
    return [fmt17(v) for v in values]
