"""Study execution: resolve a scenario, run the mapped operations, persist tables, manifest and verdicts."""

from __future__ import annotations

import hashlib
import json
import math
import time
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
import pandas as pd
from flask import current_app, has_app_context

from . import __version__, db
from .commutators import commutators_for, s1_limit
from .errors import (
    AdmissibleRangeError,
    EllipticityError,
    HypothesisViolation,
    LabError,
    MollifierResolutionError,
    NumericalFailureError,
    ScenarioValidationError,
    jsonable,
)
from .grid_fields import ROUGH_CLASSES, CoefficientSet, Grid, TimeGrid, field_frame
from .hypotheses import INFORMATIONAL, all_counted_pass, verdict, verdict_word
from .logbook import note
from .mollify import GAUSSIAN_TRUNCATION, make_mollifier
from .norms import NormDescriptor, NormReport, bochner_norm, h1_norm, lp_norm, rate_fit
from .scenario import Problem, Scenario
from .sde import SdeConfig, histogram_density, law_compare, law_doubling, sample_initial, simulate
from .solver import (
    RenormFunction,
    Solution,
    SolverConfig,
    cfl_limit,
    energy_audit,
    parabolic_budget,
    regularity_study,
    renorm_diagnostic,
    solve,
    solve_fp,
    solve_fp_div,
    stability_study,
    stable_time_grid,
)

STUDY_KINDS = ("commutator", "regularity", "stability", "energy_audit", "equivalence", "sde_compare", "solve")
GRID_LADDER_STUDIES = frozenset({"regularity", "equivalence"})
DELTA_LADDER_STUDIES = frozenset({"commutator", "stability"})
QUOTIENT_LIMIT_CLASSES = frozenset({"smooth"})
SEPARATION_CLASSES = frozenset({"bounded_jump"})
STABILITY_HALVINGS = 4
EQUIVALENCE_RATE = 1.0
CONSTANT_FORM_TOL = 1e-8
DECOMPOSITION_TOL = 1e-8
DECOMPOSITION_EPS = 1e-4
BAND_LIMIT_TOL = 1e-10
SDE_DOUBLINGS = 3
# hypotheses the scenario itself breaks; everything else is an incomplete run
REJECTIONS = (ScenarioValidationError, HypothesisViolation, EllipticityError, AdmissibleRangeError)


@dataclass(frozen=True)
class StudySettings:
    linear_tol: float = 1e-10
    linear_max_iter: int = 500
    audit_slack: float = 0.05
    default_kernel: str = "bump"
    delta0_cells: float = 16.0
    rough_delta0_cells: float = 32.0
    stability_delta0_cells: float = 32.0
    min_delta_cells: float = 2.0
    rough_min_delta_cells: float = 4.0
    cfl_fraction: float = 0.9
    sde_batch_size: int = 16384
    max_workers: int = 4
    scenario_match_threshold: int = 78
    law_distance_threshold: float = 0.05
    tool_version: str = __version__

    @classmethod
    def from_mapping(cls, config: Mapping) -> "StudySettings":
        return cls(**{f.name: config[f.name.upper()] for f in fields(cls) if f.name.upper() in config})

    def hashed(self) -> dict:
        values = asdict(self)
        # worker count and fuzzy threshold never change results
        values.pop("max_workers")
        values.pop("scenario_match_threshold")
        return values


def resolve_settings() -> StudySettings:
    if has_app_context():
        return StudySettings.from_mapping(current_app.config)
    return StudySettings()


@dataclass(frozen=True)
class StudySpec:
    kind: str
    scenario: Scenario
    out: Path
    scenario_path: str = ""
    ladder: tuple[float, ...] | None = None
    seed: int | None = None
    grid: int | None = None

    def __post_init__(self) -> None:
        issues = []
        if self.kind not in STUDY_KINDS:
            issues.append({"field": "kind", "message": f"expected one of {', '.join(STUDY_KINDS)}"})
        if self.ladder is not None:
            ladder = tuple(float(value) for value in self.ladder)
            object.__setattr__(self, "ladder", ladder)
            if not ladder:
                issues.append({"field": "ladder", "message": "ladder must not be empty"})
            elif self.kind in GRID_LADDER_STUDIES:
                if any(later <= earlier for earlier, later in zip(ladder, ladder[1:])):
                    issues.append({"field": "ladder", "message": "grid ladder must increase strictly (h decreasing)"})
            elif any(later >= earlier for earlier, later in zip(ladder, ladder[1:])) or min(ladder) <= 0.0:
                issues.append({"field": "ladder", "message": "delta ladder must be positive and decrease strictly"})
        if self.seed is not None and int(self.seed) < 0:
            issues.append({"field": "seed", "message": "seed must be a non-negative integer"})
        if issues:
            raise ScenarioValidationError(f"invalid {self.kind} study request", issues=issues)
        object.__setattr__(self, "out", Path(self.out))

    def resolved_scenario(self) -> Scenario:
        if self.seed is None and self.grid is None:
            return self.scenario
        return self.scenario.with_overrides(seed=self.seed, n=self.grid)


@dataclass
class StudyOutcome:
    verdicts: OrderedDict
    tables: dict[str, pd.DataFrame] = field(default_factory=dict)
    measurements: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RunManifest:
    tool_version: str
    study: str
    scenario_label: str
    scenario: dict
    scenario_path: str
    seeds: dict
    settings: dict
    ladder: list | None
    verdicts: dict
    status: str
    content_hash: str
    wall_time_s: float
    artifacts: list[str]
    incomplete: bool
    measurements: dict
    error: dict | None = None

    def to_dict(self) -> dict:
        return jsonable(asdict(self))


@dataclass(frozen=True)
class StudyResult:
    exit_code: int
    status: str
    manifest: RunManifest
    run_dir: Path
    logs: tuple[str, ...] = ()


def content_hash(inputs: dict, verdicts: Mapping) -> str:
    payload = json.dumps(jsonable({"inputs": inputs, "verdicts": verdicts}), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def solver_config(scenario: Scenario, settings: StudySettings, **overrides) -> SolverConfig:
    options = {
        "form": scenario.solver.form,
        "scheme": scenario.solver.scheme,
        "tol": scenario.solver.tol or settings.linear_tol,
        "max_iter": scenario.solver.max_iter or settings.linear_max_iter,
        "q_list": tuple(scenario.solver.q_list),
        "slack": settings.audit_slack,
        "snapshot_every": scenario.solver.snapshot_every,
    }
    options.update(overrides)
    return SolverConfig(**options)


def _time_grid(problem: Problem, settings: StudySettings, form: str) -> TimeGrid:
    return stable_time_grid(
        problem.coefficients, problem.time_grid.T, problem.time_grid.nt, settings.cfl_fraction, form
    )


def _is_constant(values: np.ndarray, d: int) -> bool:
    spatial = tuple(range(values.ndim - d, values.ndim))
    return bool(np.all(np.ptp(values, axis=spatial) == 0.0))


def _kernel_fits(family: str, delta: float, grid: Grid) -> bool:
    radius = delta * (GAUSSIAN_TRUNCATION if family == "gaussian_truncated" else 1.0)
    return radius < grid.L / 2.0


def default_delta_ladder(
    grid: Grid, regularity: str, family: str, settings: StudySettings, start_cells: float | None = None
) -> list[float]:
    rough = regularity in ROUGH_CLASSES
    if start_cells is None:
        start_cells = settings.rough_delta0_cells if rough else settings.delta0_cells
    floor = (settings.rough_min_delta_cells if rough else settings.min_delta_cells) * grid.h
    deltas, delta = [], start_cells * grid.h
    while delta >= floor * (1.0 - 1e-12):
        if _kernel_fits(family, delta, grid):
            deltas.append(delta)
        delta /= 2.0
    if not deltas:
        raise MollifierResolutionError(
            f"no admissible delta between {start_cells:g}h and {floor / grid.h:g}h on n={grid.n}", n=grid.n
        )
    return deltas


def kernel_family(scenario: Scenario, settings: StudySettings) -> str:
    return scenario.mollifier.family or settings.default_kernel


def _delta_ladder(spec: StudySpec, scenario: Scenario, problem: Problem, settings: StudySettings, start_cells=None):
    if spec.ladder:
        return list(spec.ladder)
    if scenario.ladder.delta:
        return list(scenario.ladder.delta)
    if scenario.mollifier.delta is not None:
        return [scenario.mollifier.delta]
    return default_delta_ladder(
        problem.grid, problem.coefficients.regularity, kernel_family(scenario, settings), settings, start_cells
    )


def _grid_ladder(spec: StudySpec, scenario: Scenario) -> list[int]:
    if spec.ladder:
        return [int(value) for value in spec.ladder]
    if scenario.ladder.n:
        return list(scenario.ladder.n)
    n = scenario.grid.n if spec.grid is None else spec.grid
    return [n, 2 * n, 4 * n]


def _bochner(slices, c: CoefficientSet, p: float = 1.0, order: int = 0) -> float:
    return bochner_norm(slices, c.times, r=2.0, p=p, order=order, horizon=c.horizon)


def _band_limited(values: np.ndarray, grid: Grid) -> bool:
    """Spectrum confined to |k| < n/4 on every axis, so products of two such fields do not alias."""
    axes = tuple(range(values.ndim - grid.d, values.ndim))
    spectrum = np.abs(np.fft.fftn(values, axes=axes))
    peak = float(spectrum.max())
    if peak == 0.0:
        return True
    index = np.abs(np.fft.fftfreq(grid.n, 1.0 / grid.n))
    high = np.zeros(grid.shape, dtype=bool)
    for axis in range(grid.d):
        shape = [1] * grid.d
        shape[axis] = grid.n
        high = high | (index.reshape(shape) >= grid.n / 4)
    return float(spectrum[..., high].max()) <= BAND_LIMIT_TOL * peak


def _commutator_cell(problem: Problem, delta: float, family: str) -> tuple[list[dict], dict]:
    """Long-format norm rows (one per commutator kind) and the gap metrics of one delta."""
    started = time.perf_counter()
    c, w, grid = problem.coefficients, problem.u0, problem.grid
    m = make_mollifier(family, delta, grid)
    cs = commutators_for(c, w, m, problem.label, with_kernel_form=True)
    limits = [s1_limit(a, w) for a in c.a]
    r = cs.r
    gaps = {
        "delta": delta,
        "delta_cells": delta / grid.h,
        "s1_limit_L1": _bochner(limits, c),
        "quotient_limit_gap_L1": _bochner([q - lim for q, lim in zip(cs.s1.quotient.slices, limits)], c),
        "decomposition_gap_L1": _bochner(
            [whole - first - second for whole, first, second in zip(r.r.slices, r.r1.slices, r.r2.slices)], c
        ),
        "kernel_gap_L1": _bochner([k - conv for k, conv in zip(cs.kernel_r1.slices, r.r1.slices)], c),
    }
    elapsed = time.perf_counter() - started
    rows = [
        {
            "kind": kind,
            "delta": delta,
            "delta_cells": delta / grid.h,
            "L1": commutator.norm(1.0),
            "L2": commutator.norm(2.0),
            "H-1": commutator.norm(2.0, order=-1),
            "wall_time_s": elapsed,
        }
        for kind, commutator in cs.by_kind().items()
    ]
    return rows, gaps


def _norms(table: pd.DataFrame, kind: str, column: str) -> list[float]:
    return table.loc[table["kind"] == kind, column].tolist()


def _decay_report(label: str, deltas: list[float], values: list[float], order: int) -> NormReport:
    descriptor = NormDescriptor(p=2.0 if order else 1.0, r=2.0, order=order)
    return NormReport(label=label, descriptor=descriptor, abscissae=tuple(deltas), values=tuple(values))


def run_commutator_study(scenario: Scenario, spec: StudySpec, settings: StudySettings, logs: list[str]) -> StudyOutcome:
    problem = scenario.build()
    c, w, grid = problem.coefficients, problem.u0, problem.grid
    family = kernel_family(scenario, settings)
    deltas = _delta_ladder(spec, scenario, problem, settings)
    note(logs, f"Commutator ladder on n={grid.n}: {len(deltas)} deltas from {deltas[0]:.4g} to {deltas[-1]:.4g}")
    with ThreadPoolExecutor(max_workers=settings.max_workers) as executor:
        cells = list(executor.map(lambda delta: _commutator_cell(problem, delta, family), deltas))
    table = pd.DataFrame([row for rows, _ in cells for row in rows])
    gaps = pd.DataFrame([cell_gaps for _, cell_gaps in cells])

    sup_b = max(float(np.abs(b.values).max()) for b in c.b)
    sup_a = max(float(np.abs(a.values).max()) for a in c.a)
    w_scale = max(1.0, h1_norm(w))
    volume = max(1.0, grid.volume)
    b_constant = all(_is_constant(b.values, grid.d) for b in c.b)
    a_constant = all(_is_constant(a.values, grid.d) for a in c.a)

    verdicts: OrderedDict = OrderedDict()
    # spectral products alias unless both factors are band-limited
    band_limited = _band_limited(w.values, grid) and all(_band_limited(b.values, grid) for b in c.b)
    split_scale = [
        first + second + DECOMPOSITION_EPS
        for first, second in zip(_norms(table, "r1", "L1"), _norms(table, "r2", "L1"))
    ]
    relative_gap = max(gap / scale for gap, scale in zip(gaps["decomposition_gap_L1"], split_scale))
    verdicts["decomposition"] = verdict(
        "decomposition",
        relative_gap <= DECOMPOSITION_TOL,
        category="commutator" if band_limited else INFORMATIONAL,
        gap=float(gaps["decomposition_gap_L1"].max()),
        relative_gap=relative_gap,
        band_limited=band_limited,
    )
    kernel_gap = float(gaps["kernel_gap_L1"].max())
    verdicts["kernel_form"] = verdict(
        "kernel_form",
        kernel_gap <= 1e-8 * max(1.0, max(_norms(table, "r1", "L1"))),
        category="commutator",
        gap=kernel_gap,
    )
    if b_constant:
        floor = 1e-12 * w_scale * max(1.0, sup_b) * volume
        worst = max(_norms(table, "r", "L1"))
        verdicts["null_r"] = verdict("null_r", worst <= floor, category="commutator", worst=worst, floor=floor)
    elif len(deltas) >= 2:
        report = _decay_report(f"{problem.label}: r", deltas, _norms(table, "r", "H-1"), order=-1)
        ratio = report.final_over_initial()
        verdicts["r_dual_decay"] = verdict(
            "r_dual_decay",
            report.is_monotone_decreasing() and ratio < 0.5,
            category="commutator",
            final_over_initial=ratio,
        )
    if a_constant:
        floor = 1e-12 * grid.n**2 * max(1.0, sup_a) * volume * w_scale
        worst = max(_norms(table, "s", "L1") + _norms(table, "s1", "L1"))
        verdicts["null_s"] = verdict("null_s", worst <= floor, category="commutator", worst=worst, floor=floor)
    else:
        limit = float(gaps["s1_limit_L1"].iloc[-1])
        if c.regularity in SEPARATION_CLASSES and len(deltas) >= 2:
            dual = _decay_report(f"{problem.label}: s1 H-1", deltas, _norms(table, "s1", "H-1"), order=-1)
            mass = _decay_report(f"{problem.label}: s1 L1", deltas, _norms(table, "s1", "L1"), order=0)
            verdicts["s1_separation"] = verdict(
                "s1_separation",
                dual.is_monotone_decreasing() and dual.final_over_initial() < 0.5 and mass.final_over_initial() > 0.8,
                category="commutator",
                dual_ratio=dual.final_over_initial(),
                l1_ratio=mass.final_over_initial(),
            )
        if c.regularity in QUOTIENT_LIMIT_CLASSES and limit > 0.0:
            gap = float(gaps["quotient_limit_gap_L1"].iloc[-1])
            verdicts["s1_quotient_limit"] = verdict(
                "s1_quotient_limit", gap <= 0.05 * limit, category="commutator", relative_gap=gap / limit
            )
            residual = _norms(table, "s", "L1")[-1]
            verdicts["s_cancellation"] = verdict(
                "s_cancellation", residual < 0.10 * limit, category="commutator", relative_size=residual / limit
            )
    return StudyOutcome(verdicts, {"commutators": table, "commutator_gaps": gaps}, {"deltas": deltas})


def run_regularity_study(scenario: Scenario, spec: StudySpec, settings: StudySettings, logs: list[str]) -> StudyOutcome:
    ladder = _grid_ladder(spec, scenario)
    result = regularity_study(
        scenario,
        ladder,
        solver_config(scenario, settings, form="fp_div"),
        fraction=settings.cfl_fraction,
        max_workers=settings.max_workers,
        logs=logs,
    )
    verdicts = OrderedDict(
        gradient_uniform=verdict(
            "gradient_uniform", result.passed, category="solver", ratios=result.measurements["ratios"]
        )
    )
    return StudyOutcome(verdicts, {"gradient_budgets": result.report.to_frame()}, result.measurements)


def run_stability_study(scenario: Scenario, spec: StudySpec, settings: StudySettings, logs: list[str]) -> StudyOutcome:
    problem = scenario.build()
    if spec.ladder or scenario.ladder.delta:
        deltas = _delta_ladder(spec, scenario, problem, settings)
    else:
        h = problem.grid.h
        deltas = [
            settings.stability_delta0_cells * h / 2**k
            for k in range(STABILITY_HALVINGS + 1)
            if settings.stability_delta0_cells / 2**k >= settings.min_delta_cells * (1.0 - 1e-12)
        ]
        deltas = [delta for delta in deltas if _kernel_fits(kernel_family(scenario, settings), delta, problem.grid)]
    result = stability_study(
        scenario,
        deltas,
        solver_config(scenario, settings, form="fp_div"),
        family=kernel_family(scenario, settings),
        fraction=settings.cfl_fraction,
        max_workers=settings.max_workers,
        logs=logs,
    )
    verdicts = OrderedDict(
        cauchy_mollified=verdict(
            "cauchy_mollified", result.passed, category="solver", differences=list(result.report.values)
        )
    )
    return StudyOutcome(verdicts, {"cauchy_differences": result.report.to_frame()}, result.measurements)


def _mass_verdict(sol: Solution) -> OrderedDict:
    masses = sol.column("mass")
    l1 = lp_norm(sol.initial, 1.0)
    drift = float(np.abs(masses - masses[0]).max())
    allowance = sol.time_grid.nt * sol.config.tol * l1 + 1e-12 * max(l1, 1.0)
    return verdict("mass_conservation", drift <= allowance, category="solver", drift=drift, allowance=allowance)


def run_energy_audit(scenario: Scenario, spec: StudySpec, settings: StudySettings, logs: list[str]) -> StudyOutcome:
    problem = scenario.build()
    cfg = solver_config(scenario, settings)
    tg = _time_grid(problem, settings, cfg.form)
    sol = solve(problem.coefficients, problem.u0, tg, cfg, logs)
    c = problem.coefficients

    verdicts: OrderedDict = OrderedDict()
    tables = {"diagnostics": sol.diagnostics_frame()}
    for q in cfg.q_list:
        if not 1.0 < q < math.inf:
            continue
        audit = energy_audit(sol, c, q)
        key = f"lq_energy_q{q:g}"
        verdicts[key] = verdict("lq_energy", audit.passed, category="audit", q=q, max_ratio=audit.max_ratio)
        tables[f"energy_audit_q{q:g}"] = audit.to_frame()
    budget = parabolic_budget(sol, c)
    verdicts["parabolic_energy"] = verdict(
        "parabolic_energy", budget.passed, category="audit", gradient_budget=budget.gradient_budget
    )
    tables["parabolic_budget"] = budget.to_frame()

    peak = float(np.abs(problem.u0.values).max())
    M = 0.5 * peak if peak > 0.0 else 1.0
    trace = renorm_diagnostic(sol, RenormFunction(M, M / 8.0), c)
    verdicts["renorm_gronwall"] = verdict("renorm_gronwall", trace.passed, category="audit", M=M)
    tables["renorm_trace"] = trace.to_frame()
    verdicts["mass_conservation"] = _mass_verdict(sol)
    note(logs, f"Energy audit finished with {sum(1 for v in verdicts.values() if v['passed'])}/{len(verdicts)} checks passing")
    return StudyOutcome(verdicts, tables, {"nt": tg.nt, "dt": tg.dt})


def _equivalence_cell(scenario: Scenario, n: int, base: Problem, settings: StudySettings, tol: float):
    problem = scenario.build(n=n)
    c = problem.coefficients
    T = base.time_grid.T
    dt = base.time_grid.dt * (base.grid.n / n) ** 2
    limit = settings.cfl_fraction * min(cfl_limit(c, "fp"), cfl_limit(c, "fp_div"))
    tg = TimeGrid(T, max(math.ceil(T / dt - 1e-9), 1 if math.isinf(limit) else math.ceil(T / limit)))
    cfg = solver_config(scenario, settings, tol=tol, snapshot_every=tg.nt)
    divergence_form = solve_fp_div(c, problem.u0, tg, cfg)
    plain_form = solve_fp(c, problem.u0, tg, cfg)
    return problem.grid.h, lp_norm(plain_form.final - divergence_form.final, 2.0), tg.nt


def run_equivalence_check(scenario: Scenario, spec: StudySpec, settings: StudySettings, logs: list[str]) -> StudyOutcome:
    ladder = _grid_ladder(spec, scenario)
    base = scenario.build(n=ladder[0])
    a_constant = all(_is_constant(a.values, base.grid.d) for a in base.coefficients.a)
    tol = min(settings.linear_tol, 1e-12) if a_constant else settings.linear_tol
    with ThreadPoolExecutor(max_workers=settings.max_workers) as executor:
        cells = list(executor.map(lambda n: _equivalence_cell(scenario, n, base, settings, tol), ladder))
    for n, (_, distance, nt) in zip(ladder, cells):
        note(logs, f"Form difference on n={n} after {nt} steps: {distance:.6g}")
    report = NormReport(
        label=f"{scenario.label}: fp vs fp_div",
        descriptor=NormDescriptor(p=2.0, r=math.inf, order=0),
        abscissae=tuple(cell[0] for cell in cells),
        values=tuple(cell[1] for cell in cells),
        abscissa_name="h",
    )
    verdicts: OrderedDict = OrderedDict()
    if a_constant:
        worst = max(report.values)
        verdicts["form_agreement"] = verdict("form_agreement", worst <= CONSTANT_FORM_TOL, category="solver", worst=worst)
    else:
        fit = rate_fit(report)
        verdicts["form_convergence"] = verdict(
            "form_convergence", fit.rate >= EQUIVALENCE_RATE, category="solver", **fit.to_dict()
        )
    return StudyOutcome(verdicts, {"form_difference": report.to_frame()}, {"ladder": ladder})


def run_sde_compare(scenario: Scenario, spec: StudySpec, settings: StudySettings, logs: list[str]) -> StudyOutcome:
    if scenario.sde is None:
        raise ScenarioValidationError(
            f"scenario {scenario.label!r} has no sde block", issues=[{"field": "sde", "message": "field required"}]
        )
    problem = scenario.build()
    cfg = solver_config(scenario, settings)
    tg = _time_grid(problem, settings, cfg.form)
    sol = solve(problem.coefficients, problem.u0, tg, cfg, logs)
    sde_cfg = SdeConfig(
        N=scenario.sde.N,
        dt=min(scenario.sde.dt, tg.dt),
        seed=scenario.sde_seed,
        bins=scenario.sde.bins,
        batch_size=settings.sde_batch_size,
        max_workers=settings.max_workers,
    )
    start = sample_initial(problem.u0, sde_cfg.N, sde_cfg.seed, logs)
    ens = simulate(problem.coefficients, start, tg, sde_cfg, logs)
    comparison = law_compare(sol, ens, sde_cfg.bins)
    note(logs, f"Law distance {comparison.distance:.4g} (statistical floor {comparison.floor:.4g})")
    frame = field_frame(sol.final).rename(columns={"value": "pde"})
    frame["histogram"] = histogram_density(ens, problem.grid).values.reshape(-1)
    verdicts = OrderedDict(
        law_match=verdict(
            "law_match",
            comparison.distance <= settings.law_distance_threshold,
            category="sde",
            **comparison.to_dict(),
        )
    )
    tables = {"law": frame}
    if ens.N >> SDE_DOUBLINGS >= 1:
        ladder = law_doubling(sol, ens, SDE_DOUBLINGS, sde_cfg.bins)
        distances = [item.distance for item in ladder]
        note(logs, "Law distance by N: " + ", ".join(f"{item.N}: {item.distance:.4g}" for item in ladder))
        verdicts["law_doubling"] = verdict(
            "law_doubling",
            all(later < earlier for earlier, later in zip(distances, distances[1:])),
            category="sde",
            N=[item.N for item in ladder],
            distances=distances,
        )
        tables["law_doubling"] = pd.DataFrame([item.to_dict() for item in ladder])
    return StudyOutcome(verdicts, tables, comparison.to_dict())


def run_solve(scenario: Scenario, spec: StudySpec, settings: StudySettings, logs: list[str]) -> StudyOutcome:
    problem = scenario.build()
    cfg = solver_config(scenario, settings)
    tg = _time_grid(problem, settings, cfg.form)
    sol = solve(problem.coefficients, problem.u0, tg, cfg, logs)
    verdicts: OrderedDict = OrderedDict(mass_conservation=_mass_verdict(sol))
    if cfg.scheme == "upwind_flux":
        floor = min(float(problem.u0.values.min()), 0.0) - cfg.tol * max(1.0, float(np.abs(problem.u0.values).max()))
        lowest = float(sol.column("min_value").min())
        verdicts["positivity"] = verdict("positivity", lowest >= floor, category="solver", minimum=lowest)
    tables = {"diagnostics": sol.diagnostics_frame(), "final": field_frame(sol.final)}
    return StudyOutcome(verdicts, tables, {"nt": tg.nt, "dt": tg.dt})


_HANDLERS: dict[str, Callable[[Scenario, StudySpec, StudySettings, list[str]], StudyOutcome]] = {
    "commutator": run_commutator_study,
    "regularity": run_regularity_study,
    "stability": run_stability_study,
    "energy_audit": run_energy_audit,
    "equivalence": run_equivalence_check,
    "sde_compare": run_sde_compare,
    "solve": run_solve,
}


def _next_run_dir(base: Path) -> Path:
    base.mkdir(parents=True, exist_ok=True)
    taken = [int(path.name.split("-", 1)[1]) for path in base.glob("run-*") if path.name.split("-", 1)[1].isdigit()]
    run_dir = base / f"run-{max(taken, default=0) + 1}"
    run_dir.mkdir()
    return run_dir


def summary_lines(manifest: RunManifest) -> list[str]:
    lines = [
        f"Study: {manifest.study}",
        f"Scenario: {manifest.scenario_label}",
        f"Status: {manifest.status.upper()}",
        f"Content hash: {manifest.content_hash}",
        "",
    ]
    for entry in manifest.verdicts.values():
        prefix = f"[{entry['result']}] " if entry.get("result") else ""
        lines.append(f"{prefix}{entry['label']}: {verdict_word(entry)}")
    if manifest.error:
        lines.append(f"Error ({manifest.error.get('error')}): {manifest.error.get('message')}")
    return lines


def _record_run(manifest: RunManifest, manifest_path: Path, logs: list[str]) -> None:
    if not has_app_context():
        return
    from .models import RunRecord

    record = RunRecord(
        study=manifest.study,
        scenario_label=manifest.scenario_label,
        content_hash=manifest.content_hash,
        status=manifest.status,
        verdicts=json.dumps(jsonable(manifest.verdicts)),
        manifest_path=str(manifest_path),
        processing_logs="\n".join(logs),
    )
    db.session.add(record)
    db.session.commit()


def run_study(spec: StudySpec, settings: StudySettings | None = None, logs: list[str] | None = None) -> StudyResult:
    """Run one study; exit code 0 when every verdict passes, 1 on a failed verdict or error, 2 on rejection."""
    settings = settings or resolve_settings()
    logs = logs if logs is not None else []
    started = time.perf_counter()
    note(logs, f"Starting {spec.kind} study for {spec.scenario.label}")

    outcome: StudyOutcome | None = None
    error: dict | None = None
    try:
        scenario = spec.resolved_scenario()
        outcome = _HANDLERS[spec.kind](scenario, spec, settings, logs)
        status, exit_code = ("passed", 0) if all_counted_pass(outcome.verdicts) else ("failed", 1)
    except REJECTIONS as exc:
        scenario = spec.scenario
        status, exit_code, error = "rejected", 2, exc.to_record()
    except LabError as exc:
        scenario = spec.scenario
        status, exit_code, error = "incomplete", 1, exc.to_record()
    except (np.linalg.LinAlgError, ArithmeticError) as exc:
        scenario = spec.scenario
        failure = NumericalFailureError(f"{type(exc).__name__}: {exc}", exception=type(exc).__name__)
        status, exit_code, error = "incomplete", 1, failure.to_record()
    if error is not None:
        note(logs, f"Study stopped: {error['message']}")

    verdicts = outcome.verdicts if outcome is not None else OrderedDict()
    seeds = {
        "scenario": scenario.seed,
        "coefficients": scenario.coefficient_seed,
        "sde": scenario.sde_seed if scenario.sde is not None else None,
    }
    inputs = {
        "study": spec.kind,
        "scenario": scenario.canonical(),
        "ladder": list(spec.ladder) if spec.ladder else None,
        "seeds": seeds,
        "settings": settings.hashed(),
        "error": error,
    }
    digest = content_hash(inputs, verdicts)
    run_dir = _next_run_dir(spec.out / f"{spec.kind}-{digest[:12]}")

    artifacts = []
    for name, table in (outcome.tables if outcome is not None else {}).items():
        table.to_csv(run_dir / f"{name}.csv", index=False)
        artifacts.append(f"{name}.csv")
    if error is not None:
        (run_dir / "error.json").write_text(json.dumps(jsonable(error), indent=2), encoding="utf-8")
        artifacts.append("error.json")

    manifest = RunManifest(
        tool_version=settings.tool_version,
        study=spec.kind,
        scenario_label=scenario.label,
        scenario=scenario.canonical(),
        scenario_path=spec.scenario_path,
        seeds=seeds,
        settings=asdict(settings),
        ladder=list(spec.ladder) if spec.ladder else None,
        verdicts=jsonable(verdicts),
        status=status,
        content_hash=digest,
        wall_time_s=time.perf_counter() - started,
        artifacts=artifacts + ["summary.txt"],
        incomplete=status == "incomplete",
        measurements=jsonable(outcome.measurements if outcome is not None else {}),
        error=error,
    )
    (run_dir / "summary.txt").write_text("\n".join(summary_lines(manifest)) + "\n", encoding="utf-8")
    manifest_path = run_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest.to_dict(), indent=2), encoding="utf-8")
    note(logs, f"Study {spec.kind} finished with status: {status.upper()} ({run_dir})")
    _record_run(manifest, manifest_path, logs)
    return StudyResult(exit_code=exit_code, status=status, manifest=manifest, run_dir=run_dir, logs=tuple(logs))
