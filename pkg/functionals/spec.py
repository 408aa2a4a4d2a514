"""Functional specifications: integrand bundles and their roles."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigurationError
from model.comparable import BACKWARD, FORWARD, ComparableSpec
from paths.state import StepState

EPSILON_LEVEL = "epsilon_level"
LIMIT_TOTAL = "limit_total"
LIMIT_REGULAR = "limit_regular"
LIMIT_ANOMALOUS = "limit_anomalous"
ROLES = (EPSILON_LEVEL, LIMIT_TOTAL, LIMIT_REGULAR, LIMIT_ANOMALOUS)
SIDES = (FORWARD, BACKWARD)

Integrand = Callable[[StepState], np.ndarray]
# (x0, y0, x, y, t) -> (P,); y0 and y are None on limit runs
Boundary = Callable[[np.ndarray, Optional[np.ndarray], np.ndarray, Optional[np.ndarray], float], np.ndarray]


@dataclass(frozen=True, eq=False)
class IntegrandBundle:
    """``dw`` loads the run's increments (P, noise width), ``dt`` is the drift
    (P,), ``boundary`` is added whenever the value is read.

    ``quad`` (P, p, p) loads the centred squares ΔWΔW' − I·dt: the second-order
    Itô–Taylor term of a function increment written in Itô form.
    """

    dw: Optional[Integrand] = None
    dt: Optional[Integrand] = None
    boundary: Optional[Boundary] = None
    quad: Optional[Integrand] = None


@dataclass(frozen=True, eq=False)
class FunctionalSpec:
    name: str
    side: str
    role: str
    comparable: Optional[ComparableSpec] = None
    bundle: Optional[IntegrandBundle] = None
    combination: Tuple[Tuple[str, float], ...] = ()
    gated: bool = True
    flags: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.side not in SIDES:
            raise ConfigurationError(f"functional {self.name}: unknown side {self.side!r}")
        if self.role not in ROLES:
            raise ConfigurationError(f"functional {self.name}: unknown role {self.role!r}")
        if (self.bundle is None) == (not self.combination):
            raise ConfigurationError(f"functional {self.name}: give either an integrand bundle or a combination")

    @property
    def is_limit(self) -> bool:
        return self.role != EPSILON_LEVEL

    def with_flags(self, *flags: str) -> "FunctionalSpec":
        return replace(self, flags=tuple(dict.fromkeys(self.flags + flags)))


def difference(name: str, total: FunctionalSpec, part: FunctionalSpec, role: str = LIMIT_ANOMALOUS, gated: bool = True) -> FunctionalSpec:
    """``total − part`` read per path, so additivity is exact."""
    return FunctionalSpec(
        name=name,
        side=total.side,
        role=role,
        comparable=total.comparable,
        combination=((total.name, 1.0), (part.name, -1.0)),
        gated=gated,
        flags=tuple(dict.fromkeys(total.flags + part.flags)),
    )


def summed(name: str, parts: Sequence[FunctionalSpec], role: str = EPSILON_LEVEL, gated: bool = True) -> FunctionalSpec:
    head = parts[0]
    flags: Tuple[str, ...] = ()
    for p in parts:
        flags += p.flags
    return FunctionalSpec(
        name=name,
        side=head.side,
        role=role,
        comparable=head.comparable,
        combination=tuple((p.name, 1.0) for p in parts),
        gated=gated,
        flags=tuple(dict.fromkeys(flags)),
    )


def spec_flags(specs: Sequence[FunctionalSpec]) -> Tuple[str, ...]:
    out: Tuple[str, ...] = ()
    for s in specs:
        out += s.flags
    return tuple(dict.fromkeys(out))
