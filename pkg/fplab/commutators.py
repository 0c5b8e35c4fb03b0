"""Mollification commutators for drift and diffusion, in convolution and kernel form.

All objects follow one convention: w^δ = w * ρ^δ, and a commutator is "operator applied to
the smoothed field" minus "smoothed operator", or the reverse where the definition says so.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import GridMismatchError, LabError
from .grid_fields import (
    CoefficientSet,
    MatrixField,
    ScalarField,
    VectorField,
    divergence,
    gradient,
    row_divergence,
    spectral_second,
)
from .mollify import Mollifier, mollify
from .norms import bochner_norm

COMMUTATOR_KINDS = ("r", "r1", "r2", "s", "s1", "s1_quotient", "s1_product")


@dataclass(frozen=True, eq=False)
class CommutatorField:
    kind: str
    delta: float
    slices: tuple[ScalarField, ...]
    times: tuple[float, ...] = (0.0,)
    horizon: float | None = None
    scenario: str = ""
    mollifier: str = ""

    def __post_init__(self) -> None:
        if self.kind not in COMMUTATOR_KINDS:
            raise LabError(f"unknown commutator kind {self.kind!r}")
        if len(self.slices) != len(self.times):
            raise LabError(f"{len(self.slices)} commutator slices for {len(self.times)} times")

    @property
    def field(self) -> ScalarField:
        return self.slices[0]

    @property
    def values(self) -> np.ndarray:
        return self.slices[0].values

    def norm(self, p: float = 1.0, order: int = 0, r: float = 2.0) -> float:
        return bochner_norm(self.slices, self.times, r=r, p=p, order=order, horizon=self.horizon)


@dataclass(frozen=True)
class RSplit:
    r: CommutatorField
    r1: CommutatorField
    r2: CommutatorField


@dataclass(frozen=True)
class S1Split:
    s1: CommutatorField
    quotient: CommutatorField
    product: CommutatorField


def _as_tuple(item) -> tuple:
    if isinstance(item, (ScalarField, VectorField, MatrixField)):
        return (item,)
    return tuple(item)


def _align(coefficients, w, m: Mollifier) -> tuple[tuple, tuple]:
    coeffs, ws = _as_tuple(coefficients), _as_tuple(w)
    if len(ws) == 1 and len(coeffs) > 1:
        ws = ws * len(coeffs)
    elif len(coeffs) == 1 and len(ws) > 1:
        coeffs = coeffs * len(ws)
    if len(coeffs) != len(ws):
        raise LabError(f"{len(coeffs)} coefficient slices cannot be paired with {len(ws)} field slices")
    for coefficient, field in zip(coeffs, ws):
        if coefficient.grid != field.grid or field.grid != m.grid:
            raise GridMismatchError(
                "commutator inputs live on different grids",
                expected=m.grid.describe(),
                got=[coefficient.grid.describe(), field.grid.describe()],
            )
    return coeffs, ws


def _wrap(kind: str, m: Mollifier, slices: Sequence[np.ndarray], grid, times, horizon, scenario) -> CommutatorField:
    if times is None:
        times = tuple(float(k) for k in range(len(slices)))
        horizon = float(len(slices)) if len(slices) > 1 else horizon
    fields = tuple(ScalarField(grid, values, t) for values, t in zip(slices, times))
    return CommutatorField(
        kind=kind,
        delta=m.delta,
        slices=fields,
        times=tuple(float(t) for t in times),
        horizon=horizon,
        scenario=scenario,
        mollifier=f"{m.family}(delta={m.delta:.6g})",
    )


def _r_slice(b: VectorField, w: ScalarField, m: Mollifier) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    w_delta = mollify(w, m)
    r = divergence(b.times_scalar(w_delta)) - mollify(divergence(b.times_scalar(w)), m)
    r1 = b.dot(gradient(w_delta)) - mollify(b.dot(gradient(w)), m)
    div_b = divergence(b)
    r2 = w_delta * div_b - mollify(w * div_b, m)
    return r.values, r1.values, r2.values


def commutator_r(b, w, m: Mollifier, *, times=None, horizon=None, scenario: str = "") -> RSplit:
    """r^δ = div(b w^δ) − div(b w) * ρ^δ together with its split r1 + r2."""
    bs, ws = _align(b, w, m)
    parts = [_r_slice(bk, wk, m) for bk, wk in zip(bs, ws)]
    grid = m.grid
    return RSplit(
        r=_wrap("r", m, [p[0] for p in parts], grid, times, horizon, scenario),
        r1=_wrap("r1", m, [p[1] for p in parts], grid, times, horizon, scenario),
        r2=_wrap("r2", m, [p[2] for p in parts], grid, times, horizon, scenario),
    )


def _kernel_r1_slice(b: VectorField, w: ScalarField, m: Mollifier) -> np.ndarray:
    d = b.grid.d
    spatial = tuple(range(1, d + 1))
    grad_w = gradient(w).values
    total = np.zeros(b.grid.shape)
    for offset, weight in m.offsets():
        b_shifted = np.roll(b.values, offset, axis=spatial)
        grad_shifted = np.roll(grad_w, offset, axis=spatial)
        total += weight * np.sum((b.values - b_shifted) * grad_shifted, axis=0)
    return total


def kernel_form_r(b, w, m: Mollifier, *, times=None, horizon=None, scenario: str = "") -> CommutatorField:
    """r1 as the quadrature of ∫ρ^δ(y)(b(x) − b(x−y))·∇w(x−y) dy over the kernel support."""
    bs, ws = _align(b, w, m)
    slices = [_kernel_r1_slice(bk, wk, m) for bk, wk in zip(bs, ws)]
    return _wrap("r1", m, slices, m.grid, times, horizon, scenario)


def _double_divergence(a: MatrixField, w: ScalarField) -> np.ndarray:
    grid = a.grid
    total = np.zeros(grid.shape)
    for i in range(grid.d):
        for j in range(grid.d):
            total += spectral_second(a.values[i, j] * w.values, grid, i, j)
    return total


def _s_slice(a: MatrixField, w: ScalarField, m: Mollifier) -> np.ndarray:
    smoothed_operator = mollify(ScalarField(a.grid, _double_divergence(a, w)), m).values
    return smoothed_operator - _double_divergence(a, mollify(w, m))


def commutator_s(a, w, m: Mollifier, *, times=None, horizon=None, scenario: str = "") -> CommutatorField:
    """s^δ = Σ_ij [∂_ij(a_ij w)] * ρ^δ − ∂_ij[a_ij w^δ]."""
    as_, ws = _align(a, w, m)
    slices = [_s_slice(ak, wk, m) for ak, wk in zip(as_, ws)]
    return _wrap("s", m, slices, m.grid, times, horizon, scenario)


def _s1_slice(a: MatrixField, w: ScalarField, m: Mollifier) -> tuple[np.ndarray, np.ndarray]:
    grid = a.grid
    grad_w = gradient(w)
    grad_w_delta = gradient(mollify(w, m))
    flux = np.zeros((grid.d, *grid.shape))
    for i in range(grid.d):
        for j in range(grid.d):
            smoothed = mollify(ScalarField(grid, a.values[i, j] * grad_w.values[j]), m).values
            flux[i] += a.values[i, j] * grad_w_delta.values[j] - smoothed
    s1 = divergence(VectorField(grid, flux)).values
    product = row_divergence(a).dot(grad_w_delta).values
    return s1, product


def commutator_s1(a, w, m: Mollifier, *, times=None, horizon=None, scenario: str = "") -> CommutatorField:
    """s1^δ = Σ_i ∂_i(Σ_j a_ij ∂_j w^δ − (a_ij ∂_j w) * ρ^δ)."""
    return split_s1(a, w, m, times=times, horizon=horizon, scenario=scenario).s1


def split_s1(a, w, m: Mollifier, *, times=None, horizon=None, scenario: str = "") -> S1Split:
    """s1^δ = quotient + product.

    product = Σ_ij ∂_i a_ij (∂_j w)^δ; quotient is the difference-quotient remainder
    Σ_ij a_ij ∂_ij w^δ − (∂_i(a_ij ∂_j w)) * ρ^δ, which tends to s1_limit for smooth data.
    """
    as_, ws = _align(a, w, m)
    parts = [_s1_slice(ak, wk, m) for ak, wk in zip(as_, ws)]
    grid = m.grid
    s1 = [p[0] for p in parts]
    product = [p[1] for p in parts]
    quotient = [total - prod for total, prod in zip(s1, product)]
    return S1Split(
        s1=_wrap("s1", m, s1, grid, times, horizon, scenario),
        quotient=_wrap("s1_quotient", m, quotient, grid, times, horizon, scenario),
        product=_wrap("s1_product", m, product, grid, times, horizon, scenario),
    )


def s1_limit(a: MatrixField, w: ScalarField) -> ScalarField:
    """−Σ_ij ∂_j w ∂_i a_ij."""
    if a.grid != w.grid:
        raise GridMismatchError("s1_limit inputs live on different grids")
    return -row_divergence(a).dot(gradient(w))


@dataclass(frozen=True)
class CommutatorSet:
    """Every commutator of one (coefficients, w, δ) cell."""

    delta: float
    r: RSplit
    s: CommutatorField
    s1: S1Split
    kernel_r1: CommutatorField | None = None

    def by_kind(self) -> dict[str, CommutatorField]:
        return {
            "r": self.r.r,
            "r1": self.r.r1,
            "r2": self.r.r2,
            "s": self.s,
            "s1": self.s1.s1,
            "s1_quotient": self.s1.quotient,
            "s1_product": self.s1.product,
        }


def commutators_for(
    c: CoefficientSet,
    w: ScalarField,
    m: Mollifier,
    scenario: str = "",
    with_kernel_form: bool = False,
) -> CommutatorSet:
    options = {"times": c.times, "horizon": c.horizon, "scenario": scenario}
    return CommutatorSet(
        delta=m.delta,
        r=commutator_r(c.b, w, m, **options),
        s=commutator_s(c.a, w, m, **options),
        s1=split_s1(c.a, w, m, **options),
        kernel_r1=kernel_form_r(c.b, w, m, **options) if with_kernel_form else None,
    )
