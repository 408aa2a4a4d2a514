"""Central finite differences of vectorized fields.

Every derivative of a coefficient field (∇x·a, ∇y·h, ∇x·h', ∇y·α, ∂t log ρ, ...)
goes through these helpers. ``div_*`` contracts the LAST axis of the field value
with the derivative index, so ∇x·h' is ``div_x`` of h transposed.
"""
from __future__ import annotations

from typing import Callable, List

import numpy as np

DEFAULT_STEP = 1e-4
NESTED_STEP = 1e-3


def _partials(fn: Callable, x, y, t, wrt: str, step: float) -> List[np.ndarray]:
    base = x if wrt == "x" else y
    parts = []
    for j in range(base.shape[1]):
        shift = np.zeros(base.shape[1])
        shift[j] = step
        if wrt == "x":
            hi, lo = fn(x + shift, y, t), fn(x - shift, y, t)
        else:
            hi, lo = fn(x, y + shift, t), fn(x, y - shift, t)
        parts.append((np.asarray(hi, float) - np.asarray(lo, float)) / (2.0 * step))
    return parts


def grad_x(fn, x, y, t, step: float = DEFAULT_STEP) -> np.ndarray:
    return np.stack(_partials(fn, x, y, t, "x", step), axis=-1)


def grad_y(fn, x, y, t, step: float = DEFAULT_STEP) -> np.ndarray:
    return np.stack(_partials(fn, x, y, t, "y", step), axis=-1)


def div_x(fn, x, y, t, step: float = DEFAULT_STEP) -> np.ndarray:
    parts = _partials(fn, x, y, t, "x", step)
    return sum(part[..., j] for j, part in enumerate(parts))


def div_y(fn, x, y, t, step: float = DEFAULT_STEP) -> np.ndarray:
    parts = _partials(fn, x, y, t, "y", step)
    return sum(part[..., j] for j, part in enumerate(parts))


def d_dt(fn, x, y, t: float, step: float = DEFAULT_STEP) -> np.ndarray:
    return (np.asarray(fn(x, y, t + step), float) - np.asarray(fn(x, y, t - step), float)) / (2.0 * step)


def grad(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, step: float) -> np.ndarray:
    """Gradient of a function of x alone; result (..., m) appended."""
    parts = []
    for j in range(x.shape[-1]):
        shift = np.zeros(x.shape[-1])
        shift[j] = step
        parts.append((np.asarray(fn(x + shift), float) - np.asarray(fn(x - shift), float)) / (2.0 * step))
    return np.stack(parts, axis=-1)


def div(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, step: float) -> np.ndarray:
    total = 0.0
    for j in range(x.shape[-1]):
        shift = np.zeros(x.shape[-1])
        shift[j] = step
        diff = (np.asarray(fn(x + shift), float) - np.asarray(fn(x - shift), float)) / (2.0 * step)
        total = total + diff[..., j]
    return total
