"""Time stepping for the Fokker-Planck equation in divergence and non-divergence form.

Each step is explicit conservative advection followed by backward-Euler diffusion. Both forms
share the compact periodic differences D⁺ and D⁻, so they coincide exactly when a is constant.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.optimize import brentq
from scipy.sparse.linalg import LinearOperator, bicgstab, cg

from .errors import (
    CflError,
    DiagnosticsError,
    EllipticityError,
    GridMismatchError,
    HorizonMismatchError,
    HypothesisViolation,
    LabError,
    LinearSolveError,
    NonFiniteFieldError,
    ProfileError,
    ReportError,
)
from .grid_fields import (
    CoefficientSet,
    Grid,
    ScalarField,
    TimeGrid,
    ellipticity_check,
    negative_divergence_budget,
    tilde_b,
)
from .logbook import note
from .mollify import make_mollifier, mollify_coefficients
from .norms import NormDescriptor, NormReport, lp_norm

SOLVER_FORMS = ("fp_div", "fp")
ADVECTION_SCHEMES = ("centered_flux", "upwind_flux")
MAX_LINEAR_TOL = 1e-6
REGULARITY_RATIO_LIMIT = 1.1

Forcing = Callable[[float, tuple[np.ndarray, ...]], np.ndarray]


@dataclass(frozen=True)
class SolverConfig:
    dt: float | None = None
    form: str = "fp_div"
    scheme: str = "centered_flux"
    tol: float = 1e-10
    max_iter: int = 500
    q_list: tuple[float, ...] = (2.0, 4.0)
    slack: float = 0.05
    snapshot_every: int = 1
    forcing: Forcing | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.form not in SOLVER_FORMS:
            raise LabError(f"unknown solver form {self.form!r}; expected one of {', '.join(SOLVER_FORMS)}")
        if self.scheme not in ADVECTION_SCHEMES:
            raise LabError(f"unknown advection scheme {self.scheme!r}; expected one of {', '.join(ADVECTION_SCHEMES)}")
        if not 0.0 < float(self.tol) <= MAX_LINEAR_TOL:
            raise LabError(f"linear tolerance must lie in (0, {MAX_LINEAR_TOL:g}] (got {self.tol})", tol=self.tol)
        if int(self.max_iter) < 1:
            raise LabError(f"max_iter must be >= 1 (got {self.max_iter})")
        if int(self.snapshot_every) < 1:
            raise LabError(f"snapshot_every must be >= 1 (got {self.snapshot_every})")
        if self.dt is not None and not float(self.dt) > 0.0:
            raise LabError(f"dt must be positive (got {self.dt})")
        if float(self.slack) < 0.0:
            raise LabError(f"audit slack must be non-negative (got {self.slack})")
        q_list = tuple(float(q) for q in self.q_list)
        if any(not q >= 1.0 for q in q_list):
            raise LabError(f"every q in q_list must be >= 1 (got {list(q_list)})")
        object.__setattr__(self, "q_list", q_list)
        object.__setattr__(self, "tol", float(self.tol))
        object.__setattr__(self, "max_iter", int(self.max_iter))


@dataclass(frozen=True)
class StepDiagnostics:
    step: int
    time: float
    mass: float
    l2_sq: float
    norms: dict[float, float]
    grad_sq: float
    iterations: int
    min_value: float

    def to_row(self) -> dict:
        row = {
            "step": self.step,
            "time": self.time,
            "mass": self.mass,
            "l2_sq": self.l2_sq,
            "grad_sq": self.grad_sq,
            "iterations": self.iterations,
            "min_value": self.min_value,
        }
        row.update({f"L{q:g}": value for q, value in self.norms.items()})
        return row


@dataclass(frozen=True, eq=False)
class Solution:
    form: str
    grid: Grid
    time_grid: TimeGrid
    snapshots: tuple[ScalarField, ...]
    diagnostics: tuple[StepDiagnostics, ...]
    config: SolverConfig
    logs: tuple[str, ...] = ()

    @property
    def initial(self) -> ScalarField:
        return self.snapshots[0]

    @property
    def final(self) -> ScalarField:
        return self.snapshots[-1]

    @property
    def snapshot_times(self) -> np.ndarray:
        return np.array([snapshot.time for snapshot in self.snapshots])

    @property
    def step_times(self) -> np.ndarray:
        return np.array([entry.time for entry in self.diagnostics])

    def column(self, name: str) -> np.ndarray:
        self.require_complete()
        return np.array([getattr(entry, name) for entry in self.diagnostics])

    def norm_series(self, q: float) -> np.ndarray:
        self.require_complete()
        q = float(q)
        if q not in self.diagnostics[0].norms:
            raise DiagnosticsError(
                f"no L^{q:g} diagnostics recorded; the run tracked q in {list(self.config.q_list)}",
                q=q,
            )
        return np.array([entry.norms[q] for entry in self.diagnostics])

    def require_complete(self) -> None:
        if len(self.diagnostics) != self.time_grid.nt + 1:
            raise DiagnosticsError(
                f"diagnostics cover {len(self.diagnostics)} of {self.time_grid.nt + 1} time levels",
                recorded=len(self.diagnostics),
                expected=self.time_grid.nt + 1,
            )

    def diagnostics_frame(self) -> pd.DataFrame:
        return pd.DataFrame([entry.to_row() for entry in self.diagnostics])


def _forward(u: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (np.roll(u, -1, axis) - u) / h


def _backward(u: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (u - np.roll(u, 1, axis)) / h


def divergence_form_operator(a: np.ndarray, grid: Grid) -> Callable[[np.ndarray], np.ndarray]:
    """u ↦ ½·½Σ_ij [D⁻_i(a_ij D⁺_j u) + D⁺_i(a_ij D⁻_j u)], symmetric and negative semi-definite."""
    h = grid.h

    def apply(u: np.ndarray) -> np.ndarray:
        total = np.zeros(grid.shape)
        for i in range(grid.d):
            for j in range(grid.d):
                total += _backward(a[i, j] * _forward(u, j, h), i, h)
                total += _forward(a[i, j] * _backward(u, j, h), i, h)
        return 0.25 * total

    return apply


def nondivergence_form_operator(a: np.ndarray, grid: Grid) -> Callable[[np.ndarray], np.ndarray]:
    """u ↦ ½·½Σ_ij [D⁻_i D⁺_j + D⁺_i D⁻_j](a_ij u)."""
    h = grid.h

    def apply(u: np.ndarray) -> np.ndarray:
        total = np.zeros(grid.shape)
        for i in range(grid.d):
            for j in range(grid.d):
                product = a[i, j] * u
                total += _backward(_forward(product, j, h), i, h)
                total += _forward(_backward(product, j, h), i, h)
        return 0.25 * total

    return apply


def advective_divergence(u: np.ndarray, velocity: np.ndarray, grid: Grid, scheme: str) -> np.ndarray:
    """Conservative div(v u) with face velocities ½(v_i + v_{i+1})."""
    total = np.zeros(grid.shape)
    for axis in range(grid.d):
        v = velocity[axis]
        face = 0.5 * (v + np.roll(v, -1, axis))
        right = np.roll(u, -1, axis)
        if scheme == "upwind_flux":
            flux = np.maximum(face, 0.0) * u + np.minimum(face, 0.0) * right
        else:
            flux = face * 0.5 * (u + right)
        total += (flux - np.roll(flux, 1, axis)) / grid.h
    return total


def _velocities(c: CoefficientSet, form: str):
    return tilde_b(c) if form == "fp_div" else c.b


def cfl_limit(c: CoefficientSet, form: str = "fp_div") -> float:
    """Largest admissible explicit step h / (2d·max|v|); v is b̃ for fp_div and b for fp."""
    speed = max(v.max_magnitude() for v in _velocities(c, form))
    if speed == 0.0:
        return math.inf
    return c.grid.h / (2.0 * c.grid.d * speed)


def stable_time_grid(
    c: CoefficientSet, T: float, nt_min: int = 1, fraction: float = 0.9, form: str = "fp_div"
) -> TimeGrid:
    limit = cfl_limit(c, form)
    if math.isinf(limit):
        return TimeGrid(T, max(1, int(nt_min)))
    return TimeGrid(T, max(int(nt_min), math.ceil(T / (fraction * limit))))


def _require_ellipticity(c: CoefficientSet) -> float:
    alpha_min = ellipticity_check(c.a)
    if c.alpha <= 0.0 or alpha_min < c.alpha * (1.0 - 1e-12):
        raise EllipticityError(
            f"diffusion is not uniformly elliptic with alpha={c.alpha:.6g} (smallest eigenvalue {alpha_min:.6g})",
            alpha=c.alpha,
            alpha_min=alpha_min,
        )
    return alpha_min


def _implicit_diffusion(
    rhs: np.ndarray,
    apply_l: Callable[[np.ndarray], np.ndarray],
    grid: Grid,
    dt: float,
    cfg: SolverConfig,
    symmetric: bool,
    step: int,
) -> tuple[np.ndarray, int]:
    shape = grid.shape

    def matvec(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x).reshape(shape)
        return (x - dt * apply_l(x)).ravel()

    operator = LinearOperator((grid.size, grid.size), matvec=matvec, dtype=float)
    iterations = 0

    def count(_):
        nonlocal iterations
        iterations += 1

    krylov = cg if symmetric else bicgstab
    b = rhs.ravel()
    try:
        solution, info = krylov(
            operator, b, x0=b.copy(), rtol=cfg.tol, atol=0.0, maxiter=cfg.max_iter, callback=count
        )
    except (np.linalg.LinAlgError, ArithmeticError) as exc:
        raise LinearSolveError(
            f"implicit diffusion solve broke down at step {step}: {exc}", step=step, iterations=iterations
        ) from exc
    if info != 0:
        scale = float(np.linalg.norm(b)) or 1.0
        residual = float(np.linalg.norm(b - matvec(solution))) / scale
        raise LinearSolveError(
            f"{krylov.__name__} did not converge at step {step}: {iterations} iterations, relative residual {residual:.3e}",
            step=step,
            iterations=iterations,
            residual=residual,
            info=int(info),
        )
    return solution.reshape(shape), iterations


def _diagnose(step: int, t: float, u: np.ndarray, grid: Grid, q_list: Sequence[float], iterations: int) -> StepDiagnostics:
    snapshot = ScalarField(grid, u, t)
    grad_sq = sum(float(np.sum(_forward(u, axis, grid.h) ** 2)) for axis in range(grid.d)) * grid.cell_volume
    return StepDiagnostics(
        step=step,
        time=float(t),
        mass=snapshot.integral(),
        l2_sq=float(np.sum(u**2) * grid.cell_volume),
        norms={q: lp_norm(snapshot, q) for q in q_list},
        grad_sq=grad_sq,
        iterations=iterations,
        min_value=float(u.min()),
    )


def _march(c: CoefficientSet, u0: ScalarField, tg: TimeGrid, cfg: SolverConfig, form: str, logs: list[str] | None) -> Solution:
    grid = c.grid
    if u0.grid != grid:
        raise GridMismatchError(
            "initial datum and coefficients live on different grids", expected=grid.describe(), got=u0.grid.describe()
        )
    if cfg.dt is not None and not math.isclose(cfg.dt, tg.dt, rel_tol=1e-12):
        raise LabError(f"configured dt={cfg.dt:.6g} does not match the time grid step {tg.dt:.6g}")
    _require_ellipticity(c)
    limit = cfl_limit(c, form)
    if tg.dt > limit * (1.0 + 1e-12):
        raise CflError(
            f"dt={tg.dt:.6g} violates the advective CFL bound; use dt <= {limit:.6g}",
            dt=tg.dt,
            admissible_dt=limit,
        )

    velocities = [v.values for v in _velocities(c, form)]
    build = divergence_form_operator if form == "fp_div" else nondivergence_form_operator
    operators = [build(a.values, grid) for a in c.a]
    mesh = grid.mesh() if cfg.forcing is not None else ()
    own_logs: list[str] = []
    note(own_logs, f"Solving {form} on n={grid.n}, d={grid.d} with {tg.nt} steps of dt={tg.dt:.4g}")

    u = np.array(u0.values)
    times = tg.times()
    diagnostics = [_diagnose(0, 0.0, u, grid, cfg.q_list, 0)]
    snapshots = [ScalarField(grid, u, 0.0)]
    for step in range(1, tg.nt + 1):
        t_mid = 0.5 * (times[step - 1] + times[step])
        k = c.slice_index(t_mid)
        rhs = u - tg.dt * advective_divergence(u, velocities[k], grid, cfg.scheme)
        if cfg.forcing is not None:
            rhs = rhs + tg.dt * np.broadcast_to(cfg.forcing(t_mid, mesh), grid.shape)
        u_new, iterations = _implicit_diffusion(rhs, operators[k], grid, tg.dt, cfg, form == "fp_div", step)
        # the zero mode is pinned to the explicit update
        u_new += rhs.mean() - u_new.mean()
        if not np.all(np.isfinite(u_new)):
            raise NonFiniteFieldError(f"solution became non-finite at step {step}", step=step)
        u = u_new
        diagnostics.append(_diagnose(step, times[step], u, grid, cfg.q_list, iterations))
        if step % cfg.snapshot_every == 0 or step == tg.nt:
            snapshots.append(ScalarField(grid, u, float(times[step])))

    total_iterations = sum(entry.iterations for entry in diagnostics)
    note(own_logs, f"Solved {form} on n={grid.n} in {tg.nt} steps ({total_iterations} linear iterations)")
    if logs is not None:
        logs.extend(own_logs)
    return Solution(
        form=form,
        grid=grid,
        time_grid=tg,
        snapshots=tuple(snapshots),
        diagnostics=tuple(diagnostics),
        config=cfg,
        logs=tuple(own_logs),
    )


def solve_fp_div(
    c: CoefficientSet, u0: ScalarField, tg: TimeGrid, cfg: SolverConfig | None = None, logs: list[str] | None = None
) -> Solution:
    """∂_t u + div(b̃u) − ½Σ∂_i(a_ij ∂_j u) = 0, diffusion solved by conjugate gradients."""
    return _march(c, u0, tg, cfg or SolverConfig(), "fp_div", logs)


def solve_fp(
    c: CoefficientSet, u0: ScalarField, tg: TimeGrid, cfg: SolverConfig | None = None, logs: list[str] | None = None
) -> Solution:
    """∂_t u + div(bu) − ½Σ∂_ij(a_ij u) = 0, diffusion solved by BiCGSTAB."""
    return _march(c, u0, tg, cfg or SolverConfig(form="fp"), "fp", logs)


def solve(c: CoefficientSet, u0: ScalarField, tg: TimeGrid, cfg: SolverConfig, logs: list[str] | None = None) -> Solution:
    if cfg.form == "fp":
        return solve_fp(c, u0, tg, cfg, logs)
    return solve_fp_div(c, u0, tg, cfg, logs)


def _budget_path(sol: Solution, c: CoefficientSet) -> np.ndarray:
    """∫₀^{t_n} ‖(div b̃)⁻‖_∞ with the slice frozen at each step midpoint."""
    if c.grid != sol.grid:
        raise GridMismatchError("solution and coefficients live on different grids")
    table = negative_divergence_budget(c)
    times = sol.step_times
    rates = np.array([table.at(0.5 * (t0 + t1)) for t0, t1 in zip(times, times[1:])])
    return np.concatenate([[0.0], np.cumsum(np.diff(times) * rates)])


@dataclass(frozen=True)
class EnergyAudit:
    q: float
    times: tuple[float, ...]
    ratios: tuple[float, ...]
    budget: tuple[float, ...]
    slack: float
    passed: bool

    @property
    def max_ratio(self) -> float:
        return max(self.ratios)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"time": self.times, "budget": self.budget, f"ratio_L{self.q:g}": self.ratios})


def energy_audit(sol: Solution, c: CoefficientSet, q: float, slack: float | None = None) -> EnergyAudit:
    """‖u(t)‖_q against ‖u0‖_q·exp(((q−1)/q)·∫₀ᵗ‖(div b̃)⁻‖_∞)."""
    q = float(q)
    if not 1.0 < q < math.inf:
        raise LabError(f"energy audit needs q in (1, inf) (got {q})", q=q)
    slack = sol.config.slack if slack is None else float(slack)
    norms = sol.norm_series(q)
    budget = _budget_path(sol, c)
    if norms[0] == 0.0:
        ratios = np.zeros_like(norms)
    else:
        ratios = norms / (norms[0] * np.exp((q - 1.0) / q * budget))
    return EnergyAudit(
        q=q,
        times=tuple(sol.step_times.tolist()),
        ratios=tuple(ratios.tolist()),
        budget=tuple(budget.tolist()),
        slack=slack,
        passed=bool(np.all(ratios <= 1.0 + slack)),
    )


@dataclass(frozen=True)
class ParabolicAudit:
    times: tuple[float, ...]
    lhs: tuple[float, ...]
    rhs: tuple[float, ...]
    gradient_budget: float
    slack: float
    passed: bool

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"time": self.times, "lhs": self.lhs, "rhs": self.rhs})


def parabolic_budget(sol: Solution, c: CoefficientSet, slack: float | None = None) -> ParabolicAudit:
    """‖u(t)‖₂² + α∫‖∇u‖₂² ≤ ‖u0‖₂² + ∫‖(div b̃)⁻‖_∞‖u‖₂², per step."""
    slack = sol.config.slack if slack is None else float(slack)
    times = sol.step_times
    l2_sq = sol.column("l2_sq")
    grad_sq = sol.column("grad_sq")
    if c.grid != sol.grid:
        raise GridMismatchError("solution and coefficients live on different grids")
    table = negative_divergence_budget(c)
    rates = np.array([table.at(t) for t in times])
    lhs = l2_sq + c.alpha * cumulative_trapezoid(grad_sq, times, initial=0.0)
    rhs = l2_sq[0] + cumulative_trapezoid(rates * l2_sq, times, initial=0.0)
    return ParabolicAudit(
        times=tuple(times.tolist()),
        lhs=tuple(lhs.tolist()),
        rhs=tuple(rhs.tolist()),
        gradient_budget=float(trapezoid(grad_sq, times)),
        slack=slack,
        passed=bool(np.all(lhs <= rhs * (1.0 + slack) + 1e-300)),
    )


@dataclass(frozen=True)
class RenormFunction:
    """Even C² profile equal to z² on [−M, M] and to 2M² far out.

    β″ is 2 on [0, M], ramps linearly to −c over ε, stays at −c and ramps back to 0 over ε;
    c is fixed so that the far-field value is exactly 2M². ε = 0 gives the C¹ profile with c = 2.
    """

    M: float
    eps: float = 0.0
    curvature: float = field(init=False)
    plateau_length: float = field(init=False)

    def __post_init__(self) -> None:
        M, eps = float(self.M), float(self.eps)
        if not (math.isfinite(M) and M > 0.0):
            raise ProfileError(f"truncation level M must be positive (got {self.M})", M=self.M)
        if not 0.0 <= eps <= M / 4.0:
            raise ProfileError(f"smoothing width must lie in [0, M/4] (got eps={self.eps}, M={M})", eps=self.eps, M=M)
        if eps == 0.0:
            curvature = 2.0
        else:
            upper = (2.0 * M + eps) / eps
            curvature = brentq(lambda c: _far_value(M, eps, c) - 2.0 * M**2, 1e-9, upper, xtol=1e-14, rtol=1e-14)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "eps", eps)
        object.__setattr__(self, "curvature", float(curvature))
        object.__setattr__(self, "plateau_length", (2.0 * M + eps) / curvature - eps)

    @property
    def ceiling(self) -> float:
        return 2.0 * self.M**2

    def _knots(self):
        M, eps, c, length = self.M, self.eps, self.curvature, self.plateau_length
        slope1 = 2.0 * M + eps - c * eps / 2.0
        value1 = M**2 + 2.0 * M * eps + eps**2 - (2.0 + c) * eps**2 / 6.0
        slope2 = slope1 - c * length
        value2 = value1 + slope1 * length - c * length**2 / 2.0
        return slope1, value1, slope2, value2

    def _pieces(self, z):
        r = np.abs(np.asarray(z, dtype=float))
        s = r - self.M
        eps, length = self.eps, self.plateau_length
        return r, s, (s <= 0.0), (s > 0.0) & (s <= eps), (s > eps) & (s <= eps + length), (s > eps + length) & (s <= 2.0 * eps + length)

    def value(self, z) -> np.ndarray:
        r, s, inner, ramp_up, plateau, ramp_down = self._pieces(z)
        c, eps, length = self.curvature, self.eps, self.plateau_length
        slope1, value1, slope2, value2 = self._knots()
        out = np.full(r.shape, self.ceiling)
        out[inner] = r[inner] ** 2
        if eps > 0.0:
            t = s[ramp_up]
            out[ramp_up] = self.M**2 + 2.0 * self.M * t + t**2 - (2.0 + c) * t**3 / (6.0 * eps)
            t = s[ramp_down] - eps - length
            out[ramp_down] = value2 + slope2 * t - c * t**2 / 2.0 + c * t**3 / (6.0 * eps)
        t = s[plateau] - eps
        out[plateau] = value1 + slope1 * t - c * t**2 / 2.0
        out[~inner] = np.clip(out[~inner], 0.0, self.ceiling)
        return out

    def derivative(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        r, s, inner, ramp_up, plateau, ramp_down = self._pieces(z)
        c, eps, length = self.curvature, self.eps, self.plateau_length
        slope1, _, slope2, _ = self._knots()
        out = np.zeros(r.shape)
        out[inner] = 2.0 * r[inner]
        if eps > 0.0:
            t = s[ramp_up]
            out[ramp_up] = 2.0 * self.M + 2.0 * t - (2.0 + c) * t**2 / (2.0 * eps)
            t = s[ramp_down] - eps - length
            out[ramp_down] = slope2 - c * t + c * t**2 / (2.0 * eps)
        out[plateau] = slope1 - c * (s[plateau] - eps)
        return np.sign(z) * np.maximum(out, 0.0)

    def second_derivative(self, z) -> np.ndarray:
        r, s, inner, ramp_up, plateau, ramp_down = self._pieces(z)
        c, eps, length = self.curvature, self.eps, self.plateau_length
        out = np.zeros(r.shape)
        out[inner] = 2.0
        if eps > 0.0:
            out[ramp_up] = 2.0 - (2.0 + c) * s[ramp_up] / eps
            out[ramp_down] = -c + c * (s[ramp_down] - eps - length) / eps
        out[plateau] = -c
        return out


def _far_value(M: float, eps: float, c: float) -> float:
    length = (2.0 * M + eps) / c - eps
    slope1 = 2.0 * M + eps - c * eps / 2.0
    ramp_up = 2.0 * M * eps + eps**2 - (2.0 + c) * eps**2 / 6.0
    plateau = slope1 * length - c * length**2 / 2.0
    ramp_down = (slope1 - c * length) * eps - c * eps**2 / 3.0
    return M**2 + ramp_up + plateau + ramp_down


@dataclass(frozen=True)
class RenormTrace:
    times: tuple[float, ...]
    trace: tuple[float, ...]
    bound: tuple[float, ...]
    passed: bool

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"time": self.times, "trace": self.trace, "bound": self.bound})


def renorm_diagnostic(
    sol: Solution,
    profile: RenormFunction,
    c: CoefficientSet | None = None,
    q: float = 2.0,
    slack: float | None = None,
) -> RenormTrace:
    """Σ β_M(u) h^d per snapshot, checked against trace(0)·exp((q−1)·budget(t)) + slack·trace(0)."""
    slack = sol.config.slack if slack is None else float(slack)
    trace = np.array([float(np.sum(profile.value(s.values)) * sol.grid.cell_volume) for s in sol.snapshots])
    times = sol.snapshot_times
    if c is None:
        budget = np.zeros_like(times)
    else:
        budget = np.interp(times, sol.step_times, _budget_path(sol, c))
    bound = trace[0] * np.exp((q - 1.0) * budget) + slack * trace[0]
    return RenormTrace(
        times=tuple(times.tolist()),
        trace=tuple(trace.tolist()),
        bound=tuple(bound.tolist()),
        passed=bool(np.all(trace <= bound + 1e-300)),
    )


def solution_distance(first: Solution, second: Solution) -> float:
    """max over shared snapshot times of ‖u_first − u_second‖_{L²}."""
    if first.grid != second.grid:
        raise GridMismatchError("solutions live on different grids")
    t_first, t_second = first.snapshot_times, second.snapshot_times
    if t_first.shape != t_second.shape or not np.allclose(t_first, t_second, rtol=0.0, atol=1e-12):
        raise HorizonMismatchError(
            "solutions do not share snapshot times",
            first=t_first.tolist()[-3:],
            second=t_second.tolist()[-3:],
        )
    return max(lp_norm(a - b, 2.0) for a, b in zip(first.snapshots, second.snapshots))


@dataclass(frozen=True)
class LadderResult:
    report: NormReport
    passed: bool
    measurements: dict
    logs: tuple[str, ...] = ()


def regularity_study(
    scenario,
    ladder: Sequence[int],
    cfg: SolverConfig | None = None,
    fraction: float = 0.9,
    max_workers: int = 1,
    logs: list[str] | None = None,
) -> LadderResult:
    """Gradient budgets ‖∇u^h‖_{L²L²} over a refinement ladder; uniform when successive ratios stay ≤ 1.1."""
    ladder = [int(n) for n in ladder]
    if len(ladder) < 2 or any(later <= earlier for earlier, later in zip(ladder, ladder[1:])):
        raise ReportError(f"refinement ladder must increase strictly and hold >= 2 grids (got {ladder})")
    problems = [scenario.build(n=n) for n in ladder]
    p, q = problems[0].coefficients.p, problems[0].q
    exponent_sum = 1.0 / p + 1.0 / q
    if exponent_sum > 0.5 + 1e-12:
        raise HypothesisViolation(
            f"gradient regularity needs 1/p + 1/q <= 1/2; this scenario has 1/{p:g} + 1/{q:g} = {exponent_sum:.4g}",
            p=p,
            q=q,
            exponent_sum=exponent_sum,
        )
    cfg = cfg or SolverConfig()
    study_logs: list[str] = []

    def run(problem) -> float:
        tg = stable_time_grid(problem.coefficients, problem.time_grid.T, problem.time_grid.nt, fraction)
        sol = solve_fp_div(problem.coefficients, problem.u0, tg, cfg)
        return math.sqrt(trapezoid(sol.column("grad_sq"), sol.step_times))

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as executor:
        budgets = list(executor.map(run, problems))
    for n, value in zip(ladder, budgets):
        note(study_logs, f"Gradient budget on n={n}: {value:.6g}")

    report = NormReport(
        label=f"{problems[0].label}: gradient budget",
        descriptor=NormDescriptor(p=2.0, r=2.0, order=1),
        abscissae=tuple(problem.grid.h for problem in problems),
        values=tuple(budgets),
        abscissa_name="h",
    )
    ratios = report.ratios()
    if logs is not None:
        logs.extend(study_logs)
    return LadderResult(
        report=report,
        passed=all(ratio <= REGULARITY_RATIO_LIMIT for ratio in ratios),
        measurements={"ratios": ratios, "p": p, "q": q, "ladder": ladder},
        logs=tuple(study_logs),
    )


def stability_study(
    scenario,
    deltas: Sequence[float],
    cfg: SolverConfig | None = None,
    family: str = "bump",
    n: int | None = None,
    fraction: float = 0.9,
    max_workers: int = 1,
    logs: list[str] | None = None,
) -> LadderResult:
    """Successive differences ‖u^{δ_k} − u^{δ_{k+1}}‖_{L^∞L²} of solutions with mollified coefficients.

    A monotone decrease is numerical evidence of uniqueness, not a proof of it.
    """
    deltas = [float(delta) for delta in deltas]
    if len(deltas) < 2 or any(later >= earlier for earlier, later in zip(deltas, deltas[1:])):
        raise ReportError(f"delta ladder must decrease strictly and hold >= 2 entries (got {deltas})")
    problem = scenario.build(n=n)
    mollifiers = [make_mollifier(family, delta, problem.grid) for delta in deltas]
    smoothed = [mollify_coefficients(problem.coefficients, m) for m in mollifiers]
    limit = min(cfl_limit(c) for c in smoothed)
    T = problem.time_grid.T
    nt = problem.time_grid.nt if math.isinf(limit) else max(problem.time_grid.nt, math.ceil(T / (fraction * limit)))
    tg = TimeGrid(T, nt)
    cfg = cfg or SolverConfig()
    study_logs: list[str] = []

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as executor:
        solutions = list(executor.map(lambda c: solve_fp_div(c, problem.u0, tg, cfg), smoothed))
    differences = [solution_distance(a, b) for a, b in zip(solutions, solutions[1:])]
    for delta, value in zip(deltas[1:], differences):
        note(study_logs, f"Mollified-coefficient difference at delta={delta:.4g}: {value:.6g}")

    report = NormReport(
        label=f"{problem.label}: mollified-coefficient Cauchy differences",
        descriptor=NormDescriptor(p=2.0, r=math.inf, order=0),
        abscissae=tuple(deltas[1:]),
        values=tuple(differences),
    )
    floor = 1e-10 * max(lp_norm(problem.u0, 2.0), 1e-300)
    if logs is not None:
        logs.extend(study_logs)
    return LadderResult(
        report=report,
        passed=report.is_monotone_decreasing() or max(differences) <= floor,
        measurements={"deltas": deltas, "nt": nt, "floor": floor},
        logs=tuple(study_logs),
    )
