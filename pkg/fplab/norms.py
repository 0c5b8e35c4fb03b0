from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from .errors import LabError, ReportError
from .grid_fields import ScalarField, fft_axes


@dataclass(frozen=True)
class NormDescriptor:
    """Space exponent p, time exponent r and Sobolev order (−1, 0 or 1)."""

    p: float = 2.0
    r: float = 2.0
    order: int = 0

    def __post_init__(self) -> None:
        if self.order not in (-1, 0, 1):
            raise ReportError(f"Sobolev order must be -1, 0 or 1 (got {self.order})")
        if not float(self.p) >= 1.0 or not float(self.r) >= 1.0:
            raise ReportError(f"exponents must be >= 1 (got p={self.p}, r={self.r})")
        if self.order != 0 and float(self.p) != 2.0:
            raise ReportError("Sobolev norms are Hilbertian: order != 0 requires p = 2")

    @property
    def label(self) -> str:
        time = "inf" if math.isinf(self.r) else f"{self.r:g}"
        space = {-1: "H-1", 1: "H1"}.get(self.order, "L" + ("inf" if math.isinf(self.p) else f"{self.p:g}"))
        return f"L{time}{space}"

    def to_dict(self) -> dict:
        return {key: (str(value) if isinstance(value, float) and math.isinf(value) else value) for key, value in asdict(self).items()}


def _check_exponent(p: float) -> float:
    p = float(p)
    if not p >= 1.0:
        raise LabError(f"norm exponent p must lie in [1, inf] (got {p})", p=p)
    return p


def lp_norm(f: ScalarField, p: float) -> float:
    p = _check_exponent(p)
    magnitude = np.abs(f.values)
    if math.isinf(p):
        return float(magnitude.max())
    return float((np.sum(magnitude**p) * f.grid.cell_volume) ** (1.0 / p))


def inner(f: ScalarField, g: ScalarField) -> float:
    return float(np.sum(f.values * g.values) * f.grid.cell_volume)


def _spectral_weighted(f: ScalarField, weight: np.ndarray) -> float:
    transformed = np.fft.fftn(f.values, axes=fft_axes(f.grid))
    total = np.sum(weight * np.abs(transformed) ** 2) * f.grid.cell_volume / f.grid.size
    return float(np.sqrt(total))


def spectral_l2_norm(f: ScalarField) -> float:
    return _spectral_weighted(f, np.ones(f.grid.shape))


def h_minus1_norm(f: ScalarField) -> float:
    return _spectral_weighted(f, 1.0 / (1.0 + f.grid.xi_squared()))


def h1_norm(f: ScalarField) -> float:
    return _spectral_weighted(f, 1.0 + f.grid.xi_squared())


def gradient_l2_squared(f: ScalarField) -> float:
    """‖∇f‖²_{L²} with the same symbols as `gradient`."""
    weight = sum(np.abs(f.grid.derivative_symbol(axis)) ** 2 for axis in range(f.grid.d))
    return _spectral_weighted(f, np.broadcast_to(weight, f.grid.shape)) ** 2


def spatial_norm(f: ScalarField, p: float = 2.0, order: int = 0) -> float:
    if order == -1:
        return h_minus1_norm(f)
    if order == 1:
        return h1_norm(f)
    return lp_norm(f, p)


def bochner_norm(
    fields: Sequence[ScalarField],
    times: Sequence[float],
    r: float = 2.0,
    p: float = 2.0,
    order: int = 0,
    horizon: float | None = None,
) -> float:
    """L^r in time of a spatial norm.

    With `horizon` the slices are read as piecewise constant on [times[k], times[k+1]) up to the
    horizon and integrated exactly; otherwise the per-slice values are integrated by trapezoid.
    """
    r = _check_exponent(r)
    if len(fields) != len(times) or not fields:
        raise LabError(f"need one time per slice (got {len(fields)} slices, {len(times)} times)")
    per_slice = np.array([spatial_norm(f, p, order) for f in fields])
    if not np.all(np.isfinite(per_slice)):
        raise LabError("per-slice norms must be finite")
    if math.isinf(r):
        return float(per_slice.max())
    if horizon is not None:
        widths = np.diff(np.append(np.asarray(times, dtype=float), float(horizon)))
        return float(np.sum(per_slice**r * widths) ** (1.0 / r))
    if len(per_slice) == 1:
        return float(per_slice[0])
    return float(trapezoid(per_slice**r, np.asarray(times, dtype=float)) ** (1.0 / r))


@dataclass(frozen=True)
class NormReport:
    label: str
    descriptor: NormDescriptor
    abscissae: tuple[float, ...]
    values: tuple[float, ...]
    abscissa_name: str = "delta"

    def __post_init__(self) -> None:
        abscissae = tuple(float(x) for x in self.abscissae)
        values = tuple(float(v) for v in self.values)
        if len(abscissae) != len(values):
            raise ReportError(f"{len(abscissae)} abscissae for {len(values)} values")
        if any(not math.isfinite(v) or v < 0.0 for v in values):
            raise ReportError("report values must be finite and non-negative", values=list(values))
        if any(later >= earlier for earlier, later in zip(abscissae, abscissae[1:])):
            raise ReportError("report abscissae must decrease strictly", abscissae=list(abscissae))
        object.__setattr__(self, "abscissae", abscissae)
        object.__setattr__(self, "values", values)

    def ratios(self) -> list[float]:
        return [later / earlier if earlier > 0 else math.inf for earlier, later in zip(self.values, self.values[1:])]

    def is_monotone_decreasing(self) -> bool:
        return all(later < earlier for earlier, later in zip(self.values, self.values[1:]))

    def final_over_initial(self) -> float:
        if self.values[0] == 0.0:
            return 0.0 if self.values[-1] == 0.0 else math.inf
        return self.values[-1] / self.values[0]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({self.abscissa_name: self.abscissae, self.descriptor.label: self.values})

    def header(self, manifest_hash: str | None = None) -> dict:
        return {
            "label": self.label,
            "descriptor": self.descriptor.to_dict(),
            "abscissa": self.abscissa_name,
            "manifest_hash": manifest_hash,
        }

    def to_csv(self, path: Path, manifest_hash: str | None = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        path.with_suffix(".json").write_text(json.dumps(self.header(manifest_hash), indent=2), encoding="utf-8")
        return path


@dataclass(frozen=True)
class RateFit:
    rate: float
    intercept: float
    residual: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "rate": "inf" if math.isinf(self.rate) else self.rate,
            "intercept": None if math.isnan(self.intercept) else self.intercept,
            "residual": self.residual,
            "degenerate": self.degenerate,
        }


def rate_fit(report: NormReport, zero_floor: float = 1e-14) -> RateFit:
    if len(report.values) < 3:
        raise ReportError(f"rate fit needs at least 3 points (got {len(report.values)})")
    values = np.asarray(report.values)
    if np.any(values <= zero_floor):
        return RateFit(rate=math.inf, intercept=math.nan, residual=0.0, degenerate=True)
    log_x = np.log(np.asarray(report.abscissae))
    log_y = np.log(values)
    slope, intercept = np.polyfit(log_x, log_y, 1)
    residual = float(np.sqrt(np.mean((slope * log_x + intercept - log_y) ** 2)))
    return RateFit(rate=float(slope), intercept=float(intercept), residual=residual)
