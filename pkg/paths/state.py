"""Per-step state handed to functional integrands."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional

import numpy as np


@dataclass
class StepState:
    """Left-endpoint state of a batch of paths at time ``t``.

    Multiscale runs fill ``y``, ``epsilon`` and ``values``; limit runs fill
    ``w``, ``A`` and ``root`` (the symmetric square root of the extended
    diffusion, whose rows load the increments ΔB).
    """

    x: np.ndarray
    t: float
    y: Optional[np.ndarray] = None
    epsilon: Optional[float] = None
    values: Any = None
    w: Optional[np.ndarray] = None
    A: Optional[np.ndarray] = None
    root: Optional[np.ndarray] = None
    cache: Dict[str, Any] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.x.shape[0]

    def memo(self, key: str, compute: Callable[[], Any]) -> Any:
        """Share one evaluation between integrands of the same step."""
        if key not in self.cache:
            self.cache[key] = compute()
        return self.cache[key]
