from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, replace
from functools import lru_cache
from numbers import Integral
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from scipy.integrate import trapezoid

from .errors import (
    AdmissibleRangeError,
    AsymmetricMatrixError,
    EllipticityError,
    FieldShapeError,
    GridError,
    GridMismatchError,
    NonFiniteFieldError,
    ScenarioValidationError,
)

REGULARITY_CLASSES = (
    "smooth",
    "lipschitz",
    "w1p_singular",
    "bounded_rough",
    "divfree_2d",
    "constant",
    "bounded_jump",
)
ROUGH_CLASSES = frozenset({"w1p_singular", "bounded_rough", "bounded_jump"})
SYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on the box [0, L)^d with n nodes per axis."""

    d: int
    n: int
    L: float

    def __post_init__(self) -> None:
        if not isinstance(self.d, Integral) or isinstance(self.d, bool) or self.d not in (1, 2, 3):
            raise GridError(f"dimension d must be 1, 2 or 3 (got {self.d!r})", parameter="d", value=self.d)
        if not isinstance(self.n, Integral) or isinstance(self.n, bool):
            raise GridError(f"n must be an integer (got {self.n!r})", parameter="n", value=self.n)
        n = int(self.n)
        if n < 8 or n & (n - 1):
            raise GridError(f"n must be a power of two >= 8 (got {n})", parameter="n", value=n)
        try:
            length = float(self.L)
        except (TypeError, ValueError):
            raise GridError(f"box length L must be a number (got {self.L!r})", parameter="L", value=self.L) from None
        if not math.isfinite(length) or length <= 0:
            raise GridError(f"box length L must be positive and finite (got {self.L!r})", parameter="L", value=self.L)
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "L", length)

    @property
    def h(self) -> float:
        return self.L / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n**self.d

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    @property
    def volume(self) -> float:
        return self.L**self.d

    def axes(self) -> tuple[np.ndarray, ...]:
        coordinates = np.arange(self.n) * self.h
        return tuple(coordinates for _ in range(self.d))

    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes(), indexing="ij"))

    def derivative_symbol(self, axis: int) -> np.ndarray:
        """Symbol of the spectral first derivative; the Nyquist mode is dropped."""
        return _derivative_symbol(self.d, self.n, self.L, axis)

    def xi_squared(self) -> np.ndarray:
        return _xi_squared(self.d, self.n, self.L)

    def describe(self) -> dict:
        return {"d": self.d, "n": self.n, "L": self.L, "h": self.h}


def make_grid(d: int, n: int, L: float) -> Grid:
    return Grid(d=d, n=n, L=L)


@dataclass(frozen=True)
class TimeGrid:
    T: float
    nt: int

    def __post_init__(self) -> None:
        if not isinstance(self.nt, Integral) or int(self.nt) < 1:
            raise GridError(f"step count nt must be an integer >= 1 (got {self.nt!r})", parameter="nt")
        if not math.isfinite(float(self.T)) or float(self.T) <= 0:
            raise GridError(f"horizon T must be positive (got {self.T!r})", parameter="T")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "nt", int(self.nt))

    @property
    def dt(self) -> float:
        return self.T / self.nt

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nt + 1)


@lru_cache(maxsize=64)
def _wavenumbers(d: int, n: int, L: float, axis: int) -> np.ndarray:
    k = 2.0 * np.pi / L * np.fft.fftfreq(n, d=1.0 / n)
    shape = [1] * d
    shape[axis] = n
    k = k.reshape(shape)
    k.setflags(write=False)
    return k


@lru_cache(maxsize=64)
def _derivative_symbol(d: int, n: int, L: float, axis: int) -> np.ndarray:
    k = np.array(_wavenumbers(d, n, L, axis))
    index = [0] * d
    index[axis] = n // 2
    k[tuple(index)] = 0.0
    symbol = 1j * k
    symbol.setflags(write=False)
    return symbol


@lru_cache(maxsize=32)
def _xi_squared(d: int, n: int, L: float) -> np.ndarray:
    total = np.zeros((n,) * d)
    for axis in range(d):
        total = total + _wavenumbers(d, n, L, axis) ** 2
    total.setflags(write=False)
    return total


def fft_axes(grid: Grid) -> tuple[int, ...]:
    return tuple(range(-grid.d, 0))


def spectral_partial(values: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    axes = fft_axes(grid)
    transformed = np.fft.fftn(values, axes=axes)
    return np.real(np.fft.ifftn(grid.derivative_symbol(axis) * transformed, axes=axes))


def spectral_second(values: np.ndarray, grid: Grid, first: int, second: int) -> np.ndarray:
    axes = fft_axes(grid)
    symbol = grid.derivative_symbol(first) * grid.derivative_symbol(second)
    return np.real(np.fft.ifftn(symbol * np.fft.fftn(values, axes=axes), axes=axes))


def _freeze(values: Any, expected: tuple[int, ...], what: str) -> np.ndarray:
    array = np.array(values, dtype=float, copy=True)
    if array.shape != expected:
        array = np.broadcast_to(array, expected).copy() if array.ndim == 0 else array
    if array.shape != expected:
        raise FieldShapeError(f"{what} has shape {array.shape}, expected {expected}", shape=list(array.shape))
    bad = ~np.isfinite(array)
    if bad.any():
        raise NonFiniteFieldError(f"{what} contains {int(bad.sum())} non-finite value(s)", count=int(bad.sum()))
    array.setflags(write=False)
    return array


def _require_same_grid(*grids: Grid) -> Grid:
    first = grids[0]
    for other in grids[1:]:
        if other != first:
            raise GridMismatchError(
                f"fields live on different grids: {first.describe()} vs {other.describe()}",
                expected=first.describe(),
                got=other.describe(),
            )
    return first


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray
    time: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _freeze(self.values, self.grid.shape, "scalar field"))

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable[..., Any], time: float | None = None) -> "ScalarField":
        return cls(grid, np.broadcast_to(fn(*grid.mesh()), grid.shape), time)

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.grid, values, self.time)

    def mean(self) -> float:
        return float(self.values.mean())

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    def __add__(self, other: "ScalarField") -> "ScalarField":
        _require_same_grid(self.grid, other.grid)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        _require_same_grid(self.grid, other.grid)
        return self.with_values(self.values - other.values)

    def __mul__(self, other: "float | ScalarField") -> "ScalarField":
        if isinstance(other, ScalarField):
            _require_same_grid(self.grid, other.grid)
            return self.with_values(self.values * other.values)
        return self.with_values(self.values * float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "ScalarField":
        return self.with_values(-self.values)


@dataclass(frozen=True, eq=False)
class VectorField:
    grid: Grid
    values: np.ndarray
    time: float | None = None

    def __post_init__(self) -> None:
        expected = (self.grid.d, *self.grid.shape)
        object.__setattr__(self, "values", _freeze(self.values, expected, "vector field"))

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable[..., Sequence[Any]], time: float | None = None) -> "VectorField":
        components = fn(*grid.mesh())
        if len(components) != grid.d:
            raise FieldShapeError(f"vector field needs {grid.d} components (got {len(components)})")
        return cls(grid, np.stack([np.broadcast_to(np.asarray(c, dtype=float), grid.shape) for c in components]), time)

    @classmethod
    def constant(cls, grid: Grid, vector: Sequence[float]) -> "VectorField":
        vector = np.asarray(vector, dtype=float).reshape(-1)
        if vector.shape != (grid.d,):
            raise FieldShapeError(f"constant vector needs {grid.d} entries (got {vector.size})")
        return cls(grid, vector.reshape((grid.d,) + (1,) * grid.d) * np.ones((1, *grid.shape)))

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(grid, np.zeros((grid.d, *grid.shape)))

    def with_values(self, values: np.ndarray) -> "VectorField":
        return VectorField(self.grid, values, self.time)

    def dot(self, other: "VectorField") -> ScalarField:
        _require_same_grid(self.grid, other.grid)
        return ScalarField(self.grid, np.sum(self.values * other.values, axis=0), self.time)

    def times_scalar(self, f: ScalarField) -> "VectorField":
        _require_same_grid(self.grid, f.grid)
        return self.with_values(self.values * f.values[None])

    def max_magnitude(self) -> float:
        return float(np.sqrt(np.sum(self.values**2, axis=0)).max())

    def __add__(self, other: "VectorField") -> "VectorField":
        _require_same_grid(self.grid, other.grid)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "VectorField") -> "VectorField":
        _require_same_grid(self.grid, other.grid)
        return self.with_values(self.values - other.values)

    def __mul__(self, scale: float) -> "VectorField":
        return self.with_values(self.values * float(scale))

    __rmul__ = __mul__


def _symmetrize(values: np.ndarray, what: str) -> np.ndarray:
    array = np.asarray(values, dtype=float)
    if array.ndim < 2 or array.shape[0] != array.shape[1]:
        raise FieldShapeError(f"{what} must be square in its leading two axes (got {array.shape})")
    if not np.all(np.isfinite(array)):
        raise NonFiniteFieldError(f"{what} contains non-finite values")
    transposed = np.swapaxes(array, 0, 1)
    defect = np.abs(array - transposed)
    scale = max(1.0, float(np.abs(array).max(initial=0.0)))
    if defect.max(initial=0.0) > SYMMETRY_TOL * scale:
        worst = np.unravel_index(int(np.argmax(defect)), defect.shape)
        raise AsymmetricMatrixError(
            f"{what} is not symmetric: |a_ij - a_ji| = {defect.max():.3e} at entry {tuple(int(i) for i in worst)}",
            defect=float(defect.max()),
            entry=[int(i) for i in worst],
        )
    return 0.5 * (array + transposed)


@dataclass(frozen=True, eq=False)
class MatrixField:
    """Symmetric d×d matrix per node, stored with shape (d, d, *grid.shape)."""

    grid: Grid
    values: np.ndarray
    time: float | None = None

    def __post_init__(self) -> None:
        expected = (self.grid.d, self.grid.d, *self.grid.shape)
        array = np.asarray(self.values, dtype=float)
        if array.shape != expected:
            raise FieldShapeError(f"matrix field has shape {array.shape}, expected {expected}")
        object.__setattr__(self, "values", _freeze(_symmetrize(array, "matrix field"), expected, "matrix field"))

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable[..., Sequence[Sequence[Any]]], time: float | None = None) -> "MatrixField":
        rows = fn(*grid.mesh())
        values = np.array(
            [[np.broadcast_to(np.asarray(entry, dtype=float), grid.shape) for entry in row] for row in rows]
        )
        return cls(grid, values, time)

    @classmethod
    def constant(cls, grid: Grid, matrix: Sequence[Sequence[float]]) -> "MatrixField":
        matrix = np.asarray(matrix, dtype=float)
        if matrix.shape != (grid.d, grid.d):
            raise FieldShapeError(f"constant matrix must be {grid.d}x{grid.d} (got {matrix.shape})")
        return cls(grid, matrix.reshape(matrix.shape + (1,) * grid.d) * np.ones((1, 1, *grid.shape)))

    @classmethod
    def identity(cls, grid: Grid, scale: float = 1.0) -> "MatrixField":
        return cls.constant(grid, scale * np.eye(grid.d))

    def entry(self, i: int, j: int) -> ScalarField:
        return ScalarField(self.grid, self.values[i, j], self.time)

    def node_matrices(self) -> np.ndarray:
        return np.moveaxis(self.values, (0, 1), (-2, -1))

    def with_values(self, values: np.ndarray) -> "MatrixField":
        return MatrixField(self.grid, values, self.time)

    def __add__(self, other: "MatrixField") -> "MatrixField":
        _require_same_grid(self.grid, other.grid)
        return self.with_values(self.values + other.values)

    def __mul__(self, scale: float) -> "MatrixField":
        return self.with_values(self.values * float(scale))

    __rmul__ = __mul__


def gradient(f: ScalarField) -> VectorField:
    components = [spectral_partial(f.values, f.grid, axis) for axis in range(f.grid.d)]
    return VectorField(f.grid, np.stack(components), f.time)


def divergence(v: VectorField) -> ScalarField:
    total = np.zeros(v.grid.shape)
    for axis in range(v.grid.d):
        total += spectral_partial(v.values[axis], v.grid, axis)
    return ScalarField(v.grid, total, v.time)


def row_divergence(a: MatrixField) -> VectorField:
    """(Σ_j ∂_j a_ij)_i."""
    grid = a.grid
    rows = [sum(spectral_partial(a.values[i, j], grid, j) for j in range(grid.d)) for i in range(grid.d)]
    return VectorField(grid, np.stack(rows), a.time)


def tilde_b_field(b: VectorField, a: MatrixField) -> VectorField:
    _require_same_grid(b.grid, a.grid)
    return b - 0.5 * row_divergence(a)


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """Piecewise-constant-in-time drift and diffusion: slice k is active on [times[k], times[k+1])."""

    b: tuple[VectorField, ...]
    a: tuple[MatrixField, ...]
    alpha: float
    regularity: str
    p: float = math.inf
    times: tuple[float, ...] = (0.0,)
    horizon: float = 1.0

    def __post_init__(self) -> None:
        b = (self.b,) if isinstance(self.b, VectorField) else tuple(self.b)
        a = (self.a,) if isinstance(self.a, MatrixField) else tuple(self.a)
        times = tuple(float(t) for t in self.times)
        if not b or len(b) != len(a) or len(b) != len(times):
            raise FieldShapeError(
                f"coefficient slices disagree: {len(b)} drift, {len(a)} diffusion, {len(times)} times"
            )
        _require_same_grid(*(field.grid for field in b + a))
        if times[0] != 0.0 or any(later <= earlier for earlier, later in zip(times, times[1:])):
            raise GridError("slice times must start at 0 and increase strictly", parameter="times")
        if float(self.horizon) <= times[-1]:
            raise GridError("horizon must exceed the last slice time", parameter="horizon")
        if self.regularity not in REGULARITY_CLASSES:
            raise GridError(f"unknown regularity class {self.regularity!r}", parameter="regularity")
        if not math.isfinite(float(self.alpha)):
            raise GridError("alpha must be finite", parameter="alpha")
        if not float(self.p) >= 1.0:
            raise GridError(f"integrability exponent p must be >= 1 (got {self.p})", parameter="p")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def grid(self) -> Grid:
        return self.b[0].grid

    @property
    def n_slices(self) -> int:
        return len(self.b)

    def slice_index(self, t: float) -> int:
        return max(0, min(bisect_right(self.times, t) - 1, self.n_slices - 1))

    def at(self, t: float) -> tuple[VectorField, MatrixField]:
        k = self.slice_index(t)
        return self.b[k], self.a[k]

    def slice_bounds(self) -> np.ndarray:
        return np.array(self.times + (self.horizon,))

    def with_slices(self, b: Sequence[VectorField], a: Sequence[MatrixField]) -> "CoefficientSet":
        return replace(self, b=tuple(b), a=tuple(a))


def tilde_b(c: CoefficientSet) -> tuple[VectorField, ...]:
    return tuple(tilde_b_field(b, a) for b, a in zip(c.b, c.a))


def ellipticity_check(a: MatrixField | Sequence[MatrixField] | np.ndarray) -> float:
    """Smallest eigenvalue of a over all nodes (and slices)."""
    if isinstance(a, MatrixField):
        slices = [a.node_matrices()]
    elif isinstance(a, np.ndarray):
        symmetric = _symmetrize(a, "matrix")
        slices = [np.moveaxis(symmetric, (0, 1), (-2, -1))]
    else:
        slices = [item.node_matrices() for item in a]
    return float(min(np.linalg.eigvalsh(matrices)[..., 0].min() for matrices in slices))


@dataclass(frozen=True, eq=False)
class BudgetTable:
    times: np.ndarray
    values: np.ndarray
    integral: float
    slice_times: tuple[float, ...]
    slice_values: tuple[float, ...]
    horizon: float

    def at(self, t: float) -> float:
        k = max(0, min(bisect_right(self.slice_times, t) - 1, len(self.slice_values) - 1))
        return self.slice_values[k]

    def cumulative(self, t: float) -> float:
        """Exact integral over [0, t] of the piecewise-constant budget."""
        bounds = self.slice_times + (self.horizon,)
        total = 0.0
        for k, value in enumerate(self.slice_values):
            start, stop = bounds[k], bounds[k + 1]
            if k == len(self.slice_values) - 1:
                stop = max(stop, t)
            if t <= start:
                break
            total += value * (min(t, stop) - start)
        return total


def negative_divergence_budget(c: CoefficientSet) -> BudgetTable:
    slice_values = []
    for field in tilde_b(c):
        div = divergence(field).values
        slice_values.append(float(np.maximum(-div, 0.0).max()))
    times = c.slice_bounds()
    values = np.array(slice_values + slice_values[-1:])
    return BudgetTable(
        times=times,
        values=values,
        integral=float(trapezoid(values, times)),
        slice_times=c.times,
        slice_values=tuple(slice_values),
        horizon=c.horizon,
    )


def assumption_measurements(c: CoefficientSet) -> dict[str, float]:
    sup_a = max(float(np.abs(a.values).max()) for a in c.a)
    sup_row_div = max(float(np.abs(row_divergence(a).values).max()) for a in c.a)
    sup_b = max(b.max_magnitude() for b in c.b)
    budget = negative_divergence_budget(c)
    return {
        "sup_a": sup_a,
        "sup_row_divergence": sup_row_div,
        "sup_b": sup_b,
        "negative_divergence_integral": budget.integral,
        "alpha_min": ellipticity_check(c.a),
        "alpha_declared": c.alpha,
    }


class CoefficientParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    alpha: float = Field(0.5, gt=0)
    p: float = math.inf
    b_amp: float = 1.0
    a_amp: float = 1.0
    modes: int = Field(3, ge=1)
    max_mode: int = Field(16, ge=1)
    decay: float = Field(0.75, ge=0)
    gamma: float | None = None
    time_slices: int = Field(1, ge=1)
    horizon: float = Field(1.0, gt=0)
    time_amp: float = Field(0.25, ge=0, lt=1)
    b: list[float] | None = None
    a: list[list[float]] | None = None
    jump: float = Field(1.0, ge=0)
    width_cells: float = Field(0.25, gt=0)

    @field_validator("p", mode="before")
    @classmethod
    def _parse_infinity(cls, value: Any) -> Any:
        if isinstance(value, str) and value.strip().lower() in {"inf", "infinity", "+inf"}:
            return math.inf
        return value


def admissible_gamma_interval(d: int, p: float) -> tuple[float, float]:
    return (max(0.0, 1.0 - d / p), 1.0)


def gen_coefficients(
    cls: str,
    grid: Grid,
    params: Mapping[str, Any] | CoefficientParams | None = None,
    seed: int = 0,
    check_ellipticity: bool = True,
) -> CoefficientSet:
    if cls not in REGULARITY_CLASSES:
        raise ScenarioValidationError(
            f"unknown coefficient class {cls!r}",
            issues=[{"field": "class", "message": f"expected one of {', '.join(REGULARITY_CLASSES)}"}],
        )
    if isinstance(params, CoefficientParams):
        options = params
    else:
        try:
            options = CoefficientParams(**dict(params or {}))
        except ValidationError as exc:
            raise ScenarioValidationError(
                "invalid coefficient parameters",
                issues=[{"field": ".".join(str(p) for p in err["loc"]), "message": err["msg"]} for err in exc.errors()],
            ) from None

    rng = np.random.default_rng(seed)
    builder = _BUILDERS[cls]
    b0, a0 = builder(rng, grid, options)
    identity = np.eye(grid.d).reshape((grid.d, grid.d) + (1,) * grid.d)
    excess = a0 - options.alpha * identity

    times = tuple(k * options.horizon / options.time_slices for k in range(options.time_slices))
    b_slices, a_slices = [], []
    for t in times:
        factor = 1.0 + options.time_amp * math.sin(2.0 * math.pi * t / options.horizon)
        b_slices.append(VectorField(grid, factor * b0, t))
        a_slices.append(MatrixField(grid, options.alpha * identity + factor * excess, t))

    coefficients = CoefficientSet(
        b=tuple(b_slices),
        a=tuple(a_slices),
        alpha=options.alpha,
        regularity=cls,
        p=options.p,
        times=times,
        horizon=options.horizon,
    )
    if check_ellipticity:
        alpha_min = ellipticity_check(coefficients.a)
        if alpha_min < options.alpha * (1.0 - 1e-12):
            raise EllipticityError(
                f"diffusion has smallest eigenvalue {alpha_min:.6g} below the declared alpha {options.alpha:.6g}",
                alpha_min=alpha_min,
                alpha=options.alpha,
            )
    return coefficients


def _half_space_modes(d: int, kmax: int) -> np.ndarray:
    span = np.arange(-kmax, kmax + 1)
    modes = np.stack(np.meshgrid(*([span] * d), indexing="ij")).reshape(d, -1).T
    first_nonzero = modes[np.arange(len(modes)), np.argmax(modes != 0, axis=1)]
    return modes[first_nonzero > 0]


def _random_fourier(rng: np.random.Generator, grid: Grid, kmax: int, decay: float, amplitude: float) -> np.ndarray:
    """Real trigonometric polynomial with |k|^-decay weights, sup bounded by `amplitude`.

    Draws depend on kmax only, so refinement ladders sample the same continuum field.
    """
    modes = _half_space_modes(grid.d, kmax)
    weights = np.linalg.norm(modes, axis=1) ** (-decay)
    cos_coef = rng.standard_normal(len(modes)) * weights
    sin_coef = rng.standard_normal(len(modes)) * weights
    bound = float(np.sum(np.abs(cos_coef) + np.abs(sin_coef)))
    scale = amplitude / bound if bound > 0 else 0.0

    spectrum = np.zeros(grid.shape, dtype=complex)
    resolved = np.all(np.abs(modes) < grid.n // 2, axis=1)
    for k, a_k, b_k in zip(modes[resolved], cos_coef[resolved], sin_coef[resolved]):
        plus = tuple(int(c) % grid.n for c in k)
        minus = tuple(int(-c) % grid.n for c in k)
        spectrum[plus] += 0.5 * grid.size * scale * (a_k - 1j * b_k)
        spectrum[minus] += 0.5 * grid.size * scale * (a_k + 1j * b_k)
    return np.real(np.fft.ifftn(spectrum))


def _tent(x: np.ndarray, L: float, phase: float) -> np.ndarray:
    frac = np.mod(x / L - phase, 1.0)
    return 1.0 - 2.0 * np.abs(frac - 0.5)


def _torus_distance(grid: Grid, center: np.ndarray) -> np.ndarray:
    squared = np.zeros(grid.shape)
    for axis, x in enumerate(grid.mesh()):
        delta = np.mod(x - center[axis] + grid.L / 2.0, grid.L) - grid.L / 2.0
        squared += delta**2
    return np.sqrt(squared)


def _psd_from_sigma(sigma: np.ndarray) -> np.ndarray:
    return np.einsum("ik...,jk...->ij...", sigma, sigma)


def _alpha_identity(grid: Grid, alpha: float) -> np.ndarray:
    return alpha * np.eye(grid.d).reshape((grid.d, grid.d) + (1,) * grid.d) * np.ones((1, 1, *grid.shape))


def _build_smooth(rng, grid, opts):
    b = np.stack([_random_fourier(rng, grid, opts.modes, 2.0, opts.b_amp) for _ in range(grid.d)])
    sigma = np.array(
        [[_random_fourier(rng, grid, opts.modes, 2.0, opts.a_amp) for _ in range(grid.d)] for _ in range(grid.d)]
    )
    return b, _alpha_identity(grid, opts.alpha) + _psd_from_sigma(sigma)


def _build_lipschitz(rng, grid, opts):
    mesh = grid.mesh()
    b = np.zeros((grid.d, *grid.shape))
    for i in range(grid.d):
        for axis in range(grid.d):
            weight, phase = rng.uniform(-1.0, 1.0), rng.uniform()
            b[i] += opts.b_amp * weight * (2.0 * _tent(mesh[axis], grid.L, phase) - 1.0) / grid.d
    sigma = np.zeros((grid.d, grid.d, *grid.shape))
    for i in range(grid.d):
        for j in range(grid.d):
            phase = rng.uniform()
            sigma[i, j] = opts.a_amp * _tent(mesh[(i + j) % grid.d], grid.L, phase) / math.sqrt(grid.d)
    return b, _alpha_identity(grid, opts.alpha) + _psd_from_sigma(sigma)


def _build_w1p_singular(rng, grid, opts):
    lower, upper = admissible_gamma_interval(grid.d, opts.p)
    gamma = opts.gamma if opts.gamma is not None else 0.5 * (lower + upper)
    if not lower < gamma < upper:
        raise AdmissibleRangeError(
            f"gamma={gamma} outside the admissible interval ({lower:g}, {upper:g}) for d={grid.d}, p={opts.p:g}",
            gamma=gamma,
            interval=[lower, upper],
        )
    # singular points sit on a node of every admissible grid
    a_center = grid.L * rng.integers(3, 6, size=grid.d) / 8.0
    b_center = grid.L * rng.integers(3, 6, size=grid.d) / 8.0
    phases = rng.uniform(size=grid.d)
    floor = (grid.h / 2.0) ** 2

    r_a = np.sqrt(_torus_distance(grid, a_center) ** 2 + floor)
    r_b = np.sqrt(_torus_distance(grid, b_center) ** 2 + floor)
    mesh = grid.mesh()
    b = np.stack(
        [opts.b_amp * r_b ** (gamma - 1.0) * np.cos(2.0 * np.pi * (mesh[i] / grid.L - phases[i])) for i in range(grid.d)]
    )
    scalar = opts.alpha + opts.a_amp * r_a**gamma
    a = scalar[None, None] * np.eye(grid.d).reshape((grid.d, grid.d) + (1,) * grid.d)
    return b, a


def _build_bounded_rough(rng, grid, opts):
    b = np.stack([_random_fourier(rng, grid, opts.max_mode, opts.decay, opts.b_amp) for _ in range(grid.d)])
    sigma = np.array(
        [
            [_random_fourier(rng, grid, opts.max_mode, opts.decay, opts.a_amp) for _ in range(grid.d)]
            for _ in range(grid.d)
        ]
    )
    return b, _alpha_identity(grid, opts.alpha) + _psd_from_sigma(sigma)


def _build_divfree_2d(rng, grid, opts):
    if grid.d != 2:
        raise GridError(f"divfree_2d needs d=2 (got d={grid.d})", parameter="d")
    psi = _random_fourier(rng, grid, opts.modes, 2.0, opts.b_amp * grid.L / (2.0 * np.pi))
    b = np.stack([-spectral_partial(psi, grid, 1), spectral_partial(psi, grid, 0)])
    shift, coupling = 0.5 * opts.a_amp, 0.25 * opts.a_amp
    matrix = np.array([[opts.alpha + shift, coupling], [coupling, opts.alpha + shift]])
    return b, matrix.reshape((2, 2, 1, 1)) * np.ones((1, 1, *grid.shape))


def _build_constant(rng, grid, opts):
    vector = np.zeros(grid.d) if opts.b is None else np.asarray(opts.b, dtype=float)
    matrix = opts.alpha * np.eye(grid.d) if opts.a is None else np.asarray(opts.a, dtype=float)
    if vector.shape != (grid.d,) or matrix.shape != (grid.d, grid.d):
        raise ScenarioValidationError(
            "constant coefficients have the wrong size",
            issues=[{"field": "params.b/params.a", "message": f"need a {grid.d}-vector and a {grid.d}x{grid.d} matrix"}],
        )
    ones = np.ones(grid.shape)
    b = np.stack([vector[i] * ones for i in range(grid.d)])
    a = np.array([[matrix[i, j] * ones for j in range(grid.d)] for i in range(grid.d)])
    return b, a


def _build_bounded_jump(rng, grid, opts):
    x = grid.mesh()[0]
    width = opts.width_cells * grid.h
    indicator = 0.5 * (np.tanh((x - grid.L / 4.0) / width) - np.tanh((x - 3.0 * grid.L / 4.0) / width))
    b = np.zeros((grid.d, *grid.shape))
    b[0] = opts.b_amp * (indicator - 0.5)
    scalar = opts.alpha + opts.jump * indicator
    a = scalar[None, None] * np.eye(grid.d).reshape((grid.d, grid.d) + (1,) * grid.d)
    return b, a


_BUILDERS: dict[str, Callable[[np.random.Generator, Grid, CoefficientParams], tuple[np.ndarray, np.ndarray]]] = {
    "smooth": _build_smooth,
    "lipschitz": _build_lipschitz,
    "w1p_singular": _build_w1p_singular,
    "bounded_rough": _build_bounded_rough,
    "divfree_2d": _build_divfree_2d,
    "constant": _build_constant,
    "bounded_jump": _build_bounded_jump,
}


def field_frame(field: ScalarField | VectorField) -> pd.DataFrame:
    grid = field.grid
    columns = {name: x.reshape(-1) for name, x in zip(("x", "y", "z"), grid.mesh())}
    if isinstance(field, ScalarField):
        columns["value"] = field.values.reshape(-1)
    else:
        for axis in range(grid.d):
            columns[f"v{axis}"] = field.values[axis].reshape(-1)
    return pd.DataFrame(columns)


def export_field_csv(field: ScalarField | VectorField, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    field_frame(field).to_csv(path, index=False)
    return path
