from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TypeVar

import numpy as np

from .errors import GridMismatchError, MollifierResolutionError
from .grid_fields import CoefficientSet, Grid, MatrixField, ScalarField, VectorField, fft_axes

KERNEL_FAMILIES = ("bump", "gaussian_truncated")
GAUSSIAN_TRUNCATION = 4.0
MIN_DELTA_CELLS = 2.0

AnyField = TypeVar("AnyField", ScalarField, VectorField, MatrixField)


@dataclass(frozen=True, eq=False)
class Mollifier:
    """Discrete kernel ρ^δ sampled on the grid, origin at node 0, Σ kernel·h^d = 1."""

    family: str
    delta: float
    grid: Grid
    kernel: np.ndarray
    normalization: float
    support_cells: int
    symbol: np.ndarray = field(repr=False)

    def offsets(self) -> list[tuple[tuple[int, ...], float]]:
        """Signed node offsets y with positive weight kernel(y)·h^d."""
        n = self.grid.n
        weights = self.kernel * self.grid.cell_volume
        result = []
        for index in zip(*np.nonzero(self.kernel > 0.0)):
            signed = tuple(int(k) if k <= n // 2 else int(k) - n for k in index)
            result.append((signed, float(weights[index])))
        return result

    def describe(self) -> dict:
        return {
            "family": self.family,
            "delta": self.delta,
            "delta_cells": self.delta / self.grid.h,
            "support_cells": self.support_cells,
            "normalization": self.normalization,
        }


def _profile(family: str, z: np.ndarray) -> np.ndarray:
    if family == "bump":
        inside = z < 1.0
        values = np.zeros_like(z)
        values[inside] = np.exp(-1.0 / (1.0 - z[inside] ** 2))
        return values
    return np.where(z <= GAUSSIAN_TRUNCATION, np.exp(-0.5 * z**2), 0.0)


def make_mollifier(family: str, delta: float, grid: Grid) -> Mollifier:
    if family not in KERNEL_FAMILIES:
        raise MollifierResolutionError(
            f"unknown kernel family {family!r}; expected one of {', '.join(KERNEL_FAMILIES)}", family=family
        )
    delta = float(delta)
    if not math.isfinite(delta) or delta < MIN_DELTA_CELLS * grid.h * (1.0 - 1e-12):
        raise MollifierResolutionError(
            f"delta={delta:.6g} is under-resolved: need delta >= {MIN_DELTA_CELLS:g}h = {MIN_DELTA_CELLS * grid.h:.6g}",
            delta=delta,
            h=grid.h,
        )
    radius = delta * (GAUSSIAN_TRUNCATION if family == "gaussian_truncated" else 1.0)
    if radius >= grid.L / 2.0:
        raise MollifierResolutionError(
            f"kernel support radius {radius:.6g} does not fit in half the box (L/2 = {grid.L / 2.0:.6g})",
            delta=delta,
            L=grid.L,
        )

    # minimum-image distances make the sampled kernel exactly even
    index = np.arange(grid.n)
    folded = np.minimum(index, grid.n - index) * grid.h
    squared = np.zeros(grid.shape)
    for axis in range(grid.d):
        shape = [1] * grid.d
        shape[axis] = grid.n
        squared = squared + folded.reshape(shape) ** 2
    raw = _profile(family, np.sqrt(squared) / delta)

    mass = float(raw.sum() * grid.cell_volume)
    kernel = raw / mass
    kernel.setflags(write=False)
    symbol = np.real(np.fft.fftn(kernel)) * grid.cell_volume
    symbol.setflags(write=False)
    return Mollifier(
        family=family,
        delta=delta,
        grid=grid,
        kernel=kernel,
        normalization=1.0 / mass,
        support_cells=int(math.floor(delta / grid.h + 1e-9)),
        symbol=symbol,
    )


def mollify(f: AnyField, m: Mollifier) -> AnyField:
    if f.grid != m.grid:
        raise GridMismatchError(
            f"field grid {f.grid.describe()} does not match mollifier grid {m.grid.describe()}",
            expected=m.grid.describe(),
            got=f.grid.describe(),
        )
    axes = fft_axes(f.grid)
    smoothed = np.real(np.fft.ifftn(m.symbol * np.fft.fftn(f.values, axes=axes), axes=axes))
    return f.with_values(smoothed)


def mollify_coefficients(c: CoefficientSet, m: Mollifier) -> CoefficientSet:
    return c.with_slices(
        [mollify(b, m) for b in c.b],
        [mollify(a, m) for a in c.a],
    )
