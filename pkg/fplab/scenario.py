"""Scenario documents: JSON in, validated schema, concrete fields out."""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal, get_args

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from rapidfuzz import process

from .errors import ScenarioValidationError, jsonable
from .grid_fields import (
    REGULARITY_CLASSES,
    CoefficientParams,
    CoefficientSet,
    Grid,
    ScalarField,
    TimeGrid,
    gen_coefficients,
)
from .hypotheses import RegimeInputs, check_assumptions, evaluate_regimes

SCENARIO_MATCH_THRESHOLD = 78


def _parse_infinity(value: Any) -> Any:
    if isinstance(value, str) and value.strip().lower() in {"inf", "infinity", "+inf"}:
        return math.inf
    return value


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)


class GridSpec(_Strict):
    d: int = Field(1, ge=1, le=3)
    n: int = Field(..., ge=8)
    L: float = Field(2.0 * math.pi, gt=0)

    @field_validator("n")
    @classmethod
    def _power_of_two(cls, value: int) -> int:
        if value & (value - 1):
            raise ValueError(f"n must be a power of two (got {value})")
        return value


class TimeSpec(_Strict):
    T: float = Field(..., gt=0)
    nt: int = Field(..., ge=1)


class CoefficientSpec(_Strict):
    regularity: str = Field(..., alias="class")
    seed: int | None = Field(None, ge=0)
    params: CoefficientParams = Field(default_factory=CoefficientParams)

    @field_validator("regularity")
    @classmethod
    def _known_class(cls, value: str) -> str:
        if value not in REGULARITY_CLASSES:
            match = process.extractOne(value, REGULARITY_CLASSES, score_cutoff=SCENARIO_MATCH_THRESHOLD)
            hint = f"; did you mean {match[0]!r}?" if match else ""
            raise ValueError(f"unknown coefficient class {value!r}{hint}")
        return value


class InitialParams(_Strict):
    k: int = 1
    amplitude: float = 1.0
    offset: float = 0.0
    axis: int = Field(0, ge=0)
    phase: float = 0.0
    center: list[float] | float | None = None
    width: float = Field(0.5, gt=0)
    normalize: bool = False


class InitialSpec(_Strict):
    kind: Literal["mode", "bump", "uniform", "zero"] = "mode"
    params: InitialParams = Field(default_factory=InitialParams)


class MollifierSpec(_Strict):
    family: Literal["bump", "gaussian_truncated"] | None = None
    delta: float | None = Field(None, gt=0)


class SolverSpec(_Strict):
    form: Literal["fp_div", "fp"] = "fp_div"
    scheme: Literal["centered_flux", "upwind_flux"] = "centered_flux"
    tol: float | None = Field(None, gt=0, le=1e-6)
    max_iter: int | None = Field(None, ge=1)
    q_list: list[float] = Field(default_factory=lambda: [2.0, 4.0])
    snapshot_every: int = Field(1, ge=1)

    @field_validator("q_list", mode="before")
    @classmethod
    def _parse_q_list(cls, value: Any) -> Any:
        if isinstance(value, list):
            return [_parse_infinity(item) for item in value]
        return value


class SdeSpec(_Strict):
    N: int = Field(..., ge=1)
    dt: float = Field(..., gt=0)
    seed: int | None = Field(None, ge=0)
    bins: int | None = Field(None, ge=16)


class LadderSpec(_Strict):
    n: list[int] | None = None
    delta: list[float] | None = None


@dataclass(frozen=True, eq=False)
class Problem:
    label: str
    grid: Grid
    coefficients: CoefficientSet
    u0: ScalarField
    time_grid: TimeGrid
    q: float


class Scenario(_Strict):
    label: str
    grid: GridSpec
    time: TimeSpec
    coefficients: CoefficientSpec
    initial: InitialSpec = Field(default_factory=InitialSpec)
    q: float = Field(2.0, gt=1)
    mollifier: MollifierSpec = Field(default_factory=MollifierSpec)
    solver: SolverSpec = Field(default_factory=SolverSpec)
    sde: SdeSpec | None = None
    ladder: LadderSpec = Field(default_factory=LadderSpec)
    seed: int = Field(0, ge=0)

    @field_validator("q", mode="before")
    @classmethod
    def _parse_q(cls, value: Any) -> Any:
        return _parse_infinity(value)

    @property
    def coefficient_seed(self) -> int:
        return self.coefficients.seed if self.coefficients.seed is not None else self.seed

    @property
    def sde_seed(self) -> int:
        if self.sde is not None and self.sde.seed is not None:
            return self.sde.seed
        return self.seed

    def with_overrides(self, seed: int | None = None, n: int | None = None) -> "Scenario":
        data = self.model_dump(by_alias=True)
        if seed is not None:
            data["seed"] = int(seed)
            data["coefficients"]["seed"] = None
            if data.get("sde"):
                data["sde"]["seed"] = None
        if n is not None:
            data["grid"]["n"] = int(n)
        return parse_scenario(data, source=f"{self.label} (overridden)")

    def canonical(self) -> dict:
        return jsonable(self.model_dump(by_alias=True))

    def build(self, n: int | None = None, check_ellipticity: bool = True) -> Problem:
        grid = Grid(self.grid.d, int(n or self.grid.n), self.grid.L)
        coefficients = gen_coefficients(
            self.coefficients.regularity,
            grid,
            self.coefficients.params,
            seed=self.coefficient_seed,
            check_ellipticity=check_ellipticity,
        )
        return Problem(
            label=self.label,
            grid=grid,
            coefficients=coefficients,
            u0=initial_field(self.initial, grid),
            time_grid=TimeGrid(self.time.T, self.time.nt),
            q=self.q,
        )


def initial_field(spec: InitialSpec, grid: Grid) -> ScalarField:
    params = spec.params
    mesh = grid.mesh()
    if spec.kind == "zero":
        values = np.zeros(grid.shape)
    elif spec.kind == "uniform":
        values = np.full(grid.shape, 1.0 / grid.volume)
    elif spec.kind == "mode":
        if params.axis >= grid.d:
            raise ScenarioValidationError(
                "initial mode axis outside the grid dimension",
                issues=[{"field": "initial.params.axis", "message": f"axis must be < d={grid.d}"}],
            )
        x = mesh[params.axis]
        values = params.offset + params.amplitude * np.sin(2.0 * np.pi * params.k * x / grid.L + params.phase)
    else:
        center = params.center if params.center is not None else grid.L / 2.0
        center = np.broadcast_to(np.asarray(center, dtype=float), (grid.d,))
        squared = np.zeros(grid.shape)
        for axis, x in enumerate(mesh):
            offset = np.mod(x - center[axis] + grid.L / 2.0, grid.L) - grid.L / 2.0
            squared += offset**2
        values = params.offset + params.amplitude * np.exp(-squared / (2.0 * params.width**2))
    if params.normalize and spec.kind != "zero":
        mass = float(values.sum() * grid.cell_volume)
        if mass <= 0.0:
            raise ScenarioValidationError(
                "cannot normalize an initial datum with non-positive mass",
                issues=[{"field": "initial.params.normalize", "message": f"mass is {mass:.6g}"}],
            )
        values = values / mass
    return ScalarField(grid, values, 0.0)


def _nested_model(annotation: Any) -> type[BaseModel] | None:
    try:
        if isinstance(annotation, type) and issubclass(annotation, BaseModel):
            return annotation
    except TypeError:
        pass
    for argument in get_args(annotation):
        found = _nested_model(argument)
        if found is not None:
            return found
    return None


def _keys(model: type[BaseModel]) -> dict[str, Any]:
    return {(info.alias or name): info for name, info in model.model_fields.items()}


def _allowed_keys(path: tuple) -> list[str]:
    model: type[BaseModel] | None = Scenario
    for part in path:
        info = _keys(model).get(str(part))
        model = _nested_model(info.annotation) if info is not None else None
        if model is None:
            return []
    return list(_keys(model))


def _issues(exc: ValidationError, threshold: int) -> list[dict]:
    issues = []
    for error in exc.errors():
        loc = tuple(error["loc"])
        issue = {"field": ".".join(str(part) for part in loc) or "<root>", "message": error["msg"]}
        if error["type"] == "extra_forbidden" and loc:
            match = process.extractOne(str(loc[-1]), _allowed_keys(loc[:-1]), score_cutoff=threshold)
            if match:
                issue["suggestion"] = match[0]
        issues.append(issue)
    return issues


def parse_scenario(raw: Any, source: str = "<memory>", threshold: int = SCENARIO_MATCH_THRESHOLD) -> Scenario:
    try:
        return Scenario.model_validate(raw)
    except ValidationError as exc:
        issues = _issues(exc, threshold)
        raise ScenarioValidationError(
            f"{source}: {len(issues)} schema issue(s)", issues=issues, source=source
        ) from None


def load_scenario(path: Path | str, threshold: int = SCENARIO_MATCH_THRESHOLD) -> Scenario:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ScenarioValidationError(
            f"scenario file {path} does not exist", issues=[{"field": "scenario", "message": "file not found"}]
        ) from None
    except json.JSONDecodeError as exc:
        raise ScenarioValidationError(
            f"{path}: invalid JSON",
            issues=[{"field": "<root>", "message": f"{exc.msg} at line {exc.lineno}, column {exc.colno}"}],
        ) from None
    return parse_scenario(raw, source=str(path), threshold=threshold)


def resolve_scenario_path(reference: str, folder: Path | str, threshold: int = SCENARIO_MATCH_THRESHOLD) -> Path:
    """A readable path as given, else `<folder>/<reference>.json`, else a suggestion-bearing error."""
    candidate = Path(reference)
    if candidate.is_file():
        return candidate
    folder = Path(folder)
    named = folder / (reference if reference.endswith(".json") else f"{reference}.json")
    if named.is_file():
        return named
    names = sorted(path.stem for path in folder.glob("*.json"))
    match = process.extractOne(candidate.stem, names, score_cutoff=threshold) if names else None
    issue = {"field": "scenario", "message": f"no scenario named {reference!r} in {folder}"}
    message = issue["message"]
    if match:
        issue["suggestion"] = match[0]
        message += f"; did you mean {match[0]!r}?"
    raise ScenarioValidationError(message, issues=[issue])


@dataclass(frozen=True)
class ValidationReport:
    label: str
    assumptions: OrderedDict
    regimes: OrderedDict
    exponents: dict

    @property
    def passed(self) -> bool:
        return all(entry["passed"] for entry in self.assumptions.values())

    @property
    def activated(self) -> list[str]:
        return [entry["label"] for entry in self.regimes.values() if entry["passed"]]

    def to_dict(self) -> dict:
        return jsonable(
            {
                "label": self.label,
                "status": "passed" if self.passed else "failed",
                "assumptions": self.assumptions,
                "regimes": self.regimes,
                "exponents": self.exponents,
                "activated": self.activated,
            }
        )

    def summary_lines(self) -> list[str]:
        lines = [f"Scenario: {self.label}"]
        for entry in self.assumptions.values():
            mark = "✓" if entry["passed"] else "❌"
            lines.append(f"  {mark} {entry['label']} (measured {entry['value']:.6g})")
        p, q = self.exponents["p"], self.exponents["q"]
        lines.append(f"  exponents: p={p:g}, q={q:g}, 1/p + 1/q = {self.exponents['sum']:.4g}")
        for entry in self.regimes.values():
            mark = "✓" if entry["passed"] else "·"
            lines.append(f"  {mark} {entry['label']} [{entry['requirement']}]")
        return lines


def validate_scenario(source: Path | str | Scenario, threshold: int = SCENARIO_MATCH_THRESHOLD) -> ValidationReport:
    """Assumption checks and regime applicability for one scenario; ellipticity failures are listed, not raised."""
    scenario = source if isinstance(source, Scenario) else load_scenario(source, threshold)
    problem = scenario.build(check_ellipticity=False)
    c = problem.coefficients
    inputs = RegimeInputs(d=problem.grid.d, p=c.p, q=scenario.q, regularity=c.regularity)
    return ValidationReport(
        label=scenario.label,
        assumptions=check_assumptions(c),
        regimes=evaluate_regimes(inputs),
        exponents={"p": c.p, "q": scenario.q, "sum": inputs.exponent_sum},
    )
