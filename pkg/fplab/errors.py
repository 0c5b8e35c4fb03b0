from __future__ import annotations

from pathlib import Path
from typing import Any


class LabError(ValueError):
    """Base class for every failure raised by the laboratory."""

    code = "lab_error"

    def __init__(self, message: str, **details: Any) -> None:
        super().__init__(message)
        self.message = message
        self.details = details

    def to_record(self) -> dict:
        record = {"error": self.code, "message": self.message}
        record.update({key: jsonable(value) for key, value in self.details.items()})
        return record


class GridError(LabError):
    code = "invalid_grid"


class GridMismatchError(LabError):
    code = "grid_mismatch"


class FieldShapeError(LabError):
    code = "field_shape"


class NonFiniteFieldError(LabError):
    code = "non_finite_field"


class AsymmetricMatrixError(LabError):
    code = "asymmetric_matrix"


class EllipticityError(LabError):
    code = "ellipticity"


class MollifierResolutionError(LabError):
    code = "under_resolved_kernel"


class AdmissibleRangeError(LabError):
    code = "admissible_range"


class CflError(LabError):
    code = "cfl_violation"


class LinearSolveError(LabError):
    code = "linear_solve"


class NumericalFailureError(LabError):
    code = "numerical_failure"


class DiagnosticsError(LabError):
    code = "missing_diagnostics"


class HorizonMismatchError(LabError):
    code = "horizon_mismatch"


class ProfileError(LabError):
    code = "invalid_profile"


class DensityError(LabError):
    code = "invalid_density"


class ParticleBlowUpError(LabError):
    code = "particle_blow_up"


class ReportError(LabError):
    code = "invalid_report"


class HypothesisViolation(LabError):
    code = "hypothesis_violation"


class ScenarioValidationError(LabError):
    code = "scenario_validation"

    def __init__(self, message: str, issues: list[dict] | None = None, **details: Any) -> None:
        super().__init__(message, **details)
        self.issues = list(issues or [])

    def to_record(self) -> dict:
        record = super().to_record()
        record["issues"] = self.issues
        return record


def jsonable(value: Any) -> Any:
    """Plain JSON value; non-finite floats become strings."""
    if isinstance(value, (str, int, bool)) or value is None:
        return value
    if isinstance(value, float):
        return value if value == value and abs(value) != float("inf") else str(value)
    if isinstance(value, (list, tuple)):
        return [jsonable(item) for item in value]
    if isinstance(value, dict):
        return {str(key): jsonable(item) for key, item in value.items()}
    if hasattr(value, "tolist"):
        return jsonable(value.tolist())
    if isinstance(value, Path):
        return str(value)
    try:
        return jsonable(float(value))
    except (TypeError, ValueError):
        return str(value)
