"""Euler–Maruyama particles for dX = b dt + σ dW with σσᵀ = a, and the histogram check of their law."""

from __future__ import annotations

import itertools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (
    AsymmetricMatrixError,
    DensityError,
    EllipticityError,
    GridMismatchError,
    HorizonMismatchError,
    LabError,
    NumericalFailureError,
    ParticleBlowUpError,
)
from .grid_fields import CoefficientSet, Grid, ScalarField, TimeGrid, ellipticity_check
from .logbook import note
from .norms import lp_norm
from .solver import Solution

MIN_BINS = 16
MASS_TOL = 1e-6
NEGATIVE_MASS_TOL = 1e-6


@dataclass(frozen=True)
class SdeConfig:
    N: int
    dt: float
    seed: int = 0
    bins: int | None = None
    batch_size: int = 16384
    max_workers: int = 4

    def __post_init__(self) -> None:
        if int(self.N) < 1:
            raise LabError(f"particle count N must be >= 1 (got {self.N})")
        if not float(self.dt) > 0.0:
            raise LabError(f"dt_sde must be positive (got {self.dt})")
        if self.bins is not None and int(self.bins) < MIN_BINS:
            raise LabError(f"histogram needs at least {MIN_BINS} bins per axis (got {self.bins})")
        if int(self.batch_size) < 1 or int(self.max_workers) < 1:
            raise LabError("batch_size and max_workers must be >= 1")


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    grid: Grid
    positions: np.ndarray
    seed: int
    time: float = 0.0

    def __post_init__(self) -> None:
        positions = np.array(self.positions, dtype=float, copy=True)
        if positions.ndim != 2 or positions.shape[1] != self.grid.d or positions.shape[0] < 1:
            raise LabError(f"positions must have shape (N, {self.grid.d}) with N >= 1 (got {positions.shape})")
        positions.setflags(write=False)
        object.__setattr__(self, "positions", positions)

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    def mean(self) -> np.ndarray:
        return self.positions.mean(axis=0)

    def variance(self) -> np.ndarray:
        return self.positions.var(axis=0)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({name: self.positions[:, axis] for axis, name in zip(range(self.grid.d), ("x", "y", "z"))})


def wrap_positions(x: np.ndarray, L: float) -> np.ndarray:
    wrapped = np.mod(x, L)
    # np.mod can round up to L for tiny negative inputs
    return np.where(wrapped >= L, wrapped - L, wrapped)


def sigma_from_a(a, node: tuple[int, ...] | int | None = None) -> np.ndarray:
    """Lower-triangular σ with σσᵀ = a for one node matrix."""
    matrix = np.atleast_2d(np.asarray(a, dtype=float))
    if matrix.shape[0] != matrix.shape[1]:
        raise LabError(f"diffusion matrix must be square (got {matrix.shape})")
    scale = max(1.0, float(np.abs(matrix).max()))
    if np.abs(matrix - matrix.T).max() > 1e-12 * scale:
        raise AsymmetricMatrixError("diffusion matrix is not symmetric", node=node)
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        eigenvalue = float(np.linalg.eigvalsh(matrix)[0])
        raise EllipticityError(
            f"diffusion matrix at node {node} is not positive definite (smallest eigenvalue {eigenvalue:.6g})",
            node=node,
            eigenvalue=eigenvalue,
        ) from None


def _batched_sigma(matrices: np.ndarray, offset: int) -> np.ndarray:
    try:
        return np.linalg.cholesky(matrices)
    except np.linalg.LinAlgError:
        smallest = np.linalg.eigvalsh(matrices)[:, 0]
        index = int(np.argmin(smallest))
        raise EllipticityError(
            f"interpolated diffusion at particle {offset + index} is not positive definite "
            f"(smallest eigenvalue {smallest[index]:.6g})",
            particle=offset + index,
            eigenvalue=float(smallest[index]),
        ) from None


def interpolate_periodic(values: np.ndarray, positions: np.ndarray, grid: Grid) -> np.ndarray:
    """Multilinear periodic interpolation of node values over the trailing d axes; returns (..., N)."""
    values = np.asarray(values, dtype=float)
    scaled = np.asarray(positions, dtype=float) / grid.h
    base = np.floor(scaled).astype(np.int64)
    frac = scaled - base
    result = 0.0
    for corner in itertools.product((0, 1), repeat=grid.d):
        index = tuple((base[:, axis] + corner[axis]) % grid.n for axis in range(grid.d))
        weight = np.ones(len(scaled))
        for axis, bit in enumerate(corner):
            weight = weight * (frac[:, axis] if bit else 1.0 - frac[:, axis])
        result = result + values[(Ellipsis, *index)] * weight
    return result


def _probability_density(u0: ScalarField, logs: list[str] | None) -> np.ndarray:
    values = u0.values
    volume = u0.grid.cell_volume
    total = float(np.abs(values).sum() * volume)
    if total == 0.0:
        raise DensityError("initial density is identically zero")
    negative = float(np.maximum(-values, 0.0).sum() * volume) / total
    if negative > NEGATIVE_MASS_TOL:
        raise DensityError(
            f"initial density has negative mass fraction {negative:.3e}; clip it explicitly before sampling",
            negative_fraction=negative,
        )
    density = np.maximum(values, 0.0)
    mass = float(density.sum() * volume)
    if abs(mass - 1.0) > MASS_TOL:
        warnings.warn(f"initial density has mass {mass:.9g}; renormalizing to 1", stacklevel=3)
        note(logs, f"Renormalized initial density from mass {mass:.9g}")
    return density / mass


def _inverse_cdf_1d(density: np.ndarray, grid: Grid, rng: np.random.Generator, N: int) -> np.ndarray:
    left = density
    right = np.roll(density, -1)
    cell_mass = 0.5 * grid.h * (left + right)
    cdf = np.concatenate([[0.0], np.cumsum(cell_mass)])
    target = rng.random(N) * cdf[-1]
    cell = np.clip(np.searchsorted(cdf, target, side="right") - 1, 0, grid.n - 1)
    remaining = np.maximum(target - cdf[cell], 0.0)
    start = left[cell]
    slope = (right[cell] - start) / grid.h
    denominator = start + np.sqrt(np.maximum(start**2 + 2.0 * slope * remaining, 0.0))
    offset = np.divide(2.0 * remaining, denominator, out=np.zeros(N), where=denominator > 0.0)
    return (cell * grid.h + np.minimum(offset, grid.h))[:, None]


def _rejection(density: np.ndarray, grid: Grid, rng: np.random.Generator, N: int) -> np.ndarray:
    ceiling = float(density.max())
    accepted: list[np.ndarray] = []
    count = 0
    while count < N:
        proposals = rng.random((2 * (N - count) + 64, grid.d)) * grid.L
        heights = rng.random(len(proposals)) * ceiling
        keep = proposals[heights < interpolate_periodic(density, proposals, grid)]
        accepted.append(keep)
        count += len(keep)
    return np.concatenate(accepted)[:N]


def sample_initial(u0: ScalarField, N: int, seed: int, logs: list[str] | None = None) -> ParticleEnsemble:
    """Draw N particles from the piecewise-(multi)linear density of u0."""
    if int(N) < 1:
        raise LabError(f"particle count N must be >= 1 (got {N})")
    grid = u0.grid
    density = _probability_density(u0, logs)
    rng = np.random.default_rng(seed)
    if grid.d == 1:
        positions = _inverse_cdf_1d(density, grid, rng, int(N))
    else:
        positions = _rejection(density, grid, rng, int(N))
    note(logs, f"Sampled {N} particles from the initial density (d={grid.d})")
    return ParticleEnsemble(grid, wrap_positions(positions, grid.L), int(seed), 0.0)


def simulate(
    c: CoefficientSet,
    ens: ParticleEnsemble,
    tg: TimeGrid,
    cfg: SdeConfig,
    logs: list[str] | None = None,
) -> ParticleEnsemble:
    """Euler–Maruyama up to tg.T; coefficients are read at each step start by multilinear interpolation."""
    grid = c.grid
    if ens.grid != grid:
        raise GridMismatchError("ensemble and coefficients live on different grids")
    if cfg.dt > tg.dt * (1.0 + 1e-12):
        raise LabError(f"dt_sde={cfg.dt:.6g} exceeds the PDE step {tg.dt:.6g}", dt_sde=cfg.dt, dt=tg.dt)
    alpha_min = ellipticity_check(c.a)
    if c.alpha <= 0.0 or alpha_min < c.alpha * (1.0 - 1e-12):
        raise EllipticityError(
            f"noise would degenerate: smallest diffusion eigenvalue {alpha_min:.6g} (alpha={c.alpha:.6g})",
            alpha=c.alpha,
            alpha_min=alpha_min,
        )

    steps = max(1, math.ceil(tg.T / cfg.dt - 1e-9))
    dt = tg.T / steps
    sqrt_dt = math.sqrt(dt)
    batch = int(cfg.batch_size)
    starts = list(range(0, ens.N, batch))
    streams = np.random.SeedSequence(cfg.seed).spawn(len(starts))

    def run(job: tuple[int, np.random.SeedSequence]) -> np.ndarray:
        offset, stream = job
        rng = np.random.default_rng(stream)
        x = np.array(ens.positions[offset : offset + batch])
        for step in range(steps):
            k = c.slice_index(step * dt)
            drift = interpolate_periodic(c.b[k].values, x, grid).T
            matrices = np.moveaxis(interpolate_periodic(c.a[k].values, x, grid), -1, 0)
            sigma = _batched_sigma(matrices, offset)
            noise = rng.standard_normal(x.shape)
            x = x + drift * dt + sqrt_dt * np.einsum("nij,nj->ni", sigma, noise)
            bad = ~np.all(np.isfinite(x), axis=1)
            if bad.any():
                index = offset + int(np.argmax(bad))
                raise ParticleBlowUpError(
                    f"particle {index} left the finite range at step {step + 1}", particle=index, step=step + 1
                )
            x = wrap_positions(x, grid.L)
        return x

    try:
        with ThreadPoolExecutor(max_workers=cfg.max_workers) as executor:
            pieces = list(executor.map(run, zip(starts, streams)))
    except (np.linalg.LinAlgError, ArithmeticError) as exc:
        raise NumericalFailureError(f"Euler-Maruyama stepping failed: {exc}", N=ens.N, steps=steps) from exc
    note(logs, f"Simulated {ens.N} particles over {steps} Euler-Maruyama steps of dt={dt:.4g}")
    return ParticleEnsemble(grid, np.concatenate(pieces), cfg.seed, tg.T)


def histogram_density(ens: ParticleEnsemble, grid: Grid | None = None) -> ScalarField:
    """Counts / (N·h^d) on node-centred cells [x_k − h/2, x_k + h/2)."""
    grid = grid or ens.grid
    index = np.floor((ens.positions + 0.5 * grid.h) / grid.h).astype(np.int64) % grid.n
    flat = np.ravel_multi_index(tuple(index.T), grid.shape)
    counts = np.bincount(flat, minlength=grid.size).reshape(grid.shape)
    return ScalarField(grid, counts / (ens.N * grid.cell_volume), ens.time)


@dataclass(frozen=True)
class LawComparison:
    distance: float
    floor: float
    bins: int
    N: int
    time: float

    def to_dict(self) -> dict:
        return {"distance": self.distance, "floor": self.floor, "bins": self.bins, "N": self.N, "time": self.time}


def law_compare(sol: Solution, ens: ParticleEnsemble, bins: int | None = None) -> LawComparison:
    """L¹ distance between the particle histogram and the terminal PDE density."""
    grid = sol.grid
    if ens.grid != grid:
        raise GridMismatchError("ensemble and solution live on different grids")
    if bins is not None and int(bins) != grid.n:
        raise LabError(f"histogram bins must match the PDE mesh (n={grid.n}, got {bins})")
    final = sol.final
    if not math.isclose(ens.time, final.time, rel_tol=1e-9, abs_tol=1e-12):
        raise HorizonMismatchError(
            f"ensemble time {ens.time:.6g} does not match the PDE horizon {final.time:.6g}",
            ensemble_time=ens.time,
            solution_time=final.time,
        )
    histogram = histogram_density(ens, grid)
    return LawComparison(
        distance=lp_norm(histogram - final, 1.0),
        floor=math.sqrt(grid.size / ens.N),
        bins=grid.n,
        N=ens.N,
        time=ens.time,
    )


def law_doubling(sol: Solution, ens: ParticleEnsemble, doublings: int = 3, bins: int | None = None) -> list[LawComparison]:
    """Law distances of the nested leading sub-ensembles N/2^k, ..., N/2, N, smallest first."""
    if doublings < 1 or ens.N >> doublings < 1:
        raise LabError(f"cannot halve N={ens.N} {doublings} times", N=ens.N, doublings=doublings)
    comparisons = []
    for k in range(doublings, -1, -1):
        size = ens.N >> k
        subset = ParticleEnsemble(ens.grid, ens.positions[:size], ens.seed, ens.time)
        comparisons.append(law_compare(sol, subset, bins))
    return comparisons


def export_ensemble_csv(ens: ParticleEnsemble, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ens.to_frame().to_csv(path, index=False)
    return path
