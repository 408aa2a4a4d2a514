"""Error types raised across the simulation, averaging and harness layers.

Statistical checks never raise; they return verdicts. Everything here signals a
model, numerical or configuration problem that stops the pipeline.
"""
from __future__ import annotations

from typing import Optional


def _where(point) -> str:
    if point is None:
        return ""
    return f" at {point}"


class MsThermoError(Exception):
    """Base class; ``module`` names the layer that raised."""

    module = "msthermo"

    def __str__(self) -> str:
        return f"[{self.module}] {super().__str__()}"


class ModelEvaluationError(MsThermoError, ValueError):
    module = "model_core"

    def __init__(self, message: str, point=None):
        super().__init__(message + _where(point))
        self.point = point


class SingularDiffusionError(MsThermoError, ValueError):
    module = "model_core"

    def __init__(self, message: str, point=None, rcond: Optional[float] = None):
        extra = f" (rcond={rcond:.3e})" if rcond is not None else ""
        super().__init__(message + extra + _where(point))
        self.point = point
        self.rcond = rcond


class InvalidDensityError(MsThermoError, ValueError):
    module = "cell_solver"


class CellSolverError(MsThermoError, RuntimeError):
    module = "cell_solver"

    def __init__(self, message: str, condition: Optional[float] = None, point=None):
        extra = f" (condition estimate {condition:.3e})" if condition is not None else ""
        super().__init__(message + extra + _where(point))
        self.condition = condition
        self.point = point


class CenteringError(MsThermoError, ValueError):
    module = "cell_solver"

    def __init__(self, message: str, defect: float, point=None):
        super().__init__(f"{message}: integral of rhs*rho = {defect:.3e}" + _where(point))
        self.defect = defect
        self.point = point


class DependencyError(MsThermoError, LookupError):
    module = "averaging"


class AveragingError(MsThermoError, ValueError):
    module = "averaging"

    def __init__(self, message: str, point=None):
        super().__init__(message + _where(point))
        self.point = point


class DivergentFunctionalError(MsThermoError, ValueError):
    module = "functionals"

    def __init__(self, message: str, assumption: Optional[str] = None):
        tag = f" [{assumption}]" if assumption else ""
        super().__init__(message + tag)
        self.assumption = assumption


class IneligibleModelError(MsThermoError, ValueError):
    module = "functionals"

    def __init__(self, message: str, residuals: Optional[dict] = None):
        detail = ""
        if residuals:
            detail = " (" + ", ".join(f"{k}={v:.3e}" for k, v in sorted(residuals.items())) + ")"
        super().__init__(message + detail)
        self.residuals = dict(residuals or {})


class NumericalError(MsThermoError, ArithmeticError):
    module = "path_engine"

    def __init__(self, message: str, point=None):
        super().__init__(message + _where(point))
        self.point = point


class UnsupportedModelError(MsThermoError, NotImplementedError):
    module = "path_engine"


class EstimationError(MsThermoError, ValueError):
    module = "harness"


class ConfigurationError(MsThermoError, ValueError):
    module = "harness"
