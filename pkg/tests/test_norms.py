from __future__ import annotations

import json
import math

import numpy as np
import pandas as pd
import pytest

from fplab.errors import LabError, ReportError
from fplab.grid_fields import ScalarField
from fplab.norms import (
    NormDescriptor,
    NormReport,
    bochner_norm,
    gradient_l2_squared,
    h1_norm,
    h_minus1_norm,
    inner,
    lp_norm,
    rate_fit,
    spectral_l2_norm,
)


def test_lp_norms_of_constant(grid1d):
    one = ScalarField.constant(grid1d, 1.0)
    assert lp_norm(one, 1) == pytest.approx(2 * math.pi)
    assert lp_norm(one, 2) == pytest.approx(math.sqrt(2 * math.pi))
    assert lp_norm(one, math.inf) == 1.0
    with pytest.raises(LabError):
        lp_norm(one, 0.5)


def test_parseval(grid1d, sine):
    bumpy = sine * sine + sine
    assert spectral_l2_norm(bumpy) == pytest.approx(lp_norm(bumpy, 2), rel=1e-12)
    assert inner(sine, sine) == pytest.approx(math.pi, rel=1e-12)


@pytest.mark.parametrize("k", [1, 3, 7])
def test_sobolev_norms_of_modes(grid1d, k):
    f = ScalarField.from_function(grid1d, lambda x: np.sin(k * x))
    assert h_minus1_norm(f) == pytest.approx(math.sqrt(math.pi / (1 + k**2)), rel=1e-10)
    assert h1_norm(f) == pytest.approx(math.sqrt(math.pi * (1 + k**2)), rel=1e-10)
    assert gradient_l2_squared(f) == pytest.approx(math.pi * k**2, rel=1e-10)


def test_bochner_norm_piecewise_constant(grid1d):
    slices = [ScalarField.constant(grid1d, 1.0), ScalarField.constant(grid1d, 2.0)]
    value = bochner_norm(slices, [0.0, 0.5], r=2, p=math.inf, horizon=1.0)
    assert value == pytest.approx(math.sqrt(0.5 * 1 + 0.5 * 4))
    assert bochner_norm(slices, [0.0, 0.5], r=math.inf, p=math.inf) == 2.0
    with pytest.raises(LabError):
        bochner_norm(slices, [0.0], r=2)


def test_descriptor_rules():
    assert NormDescriptor(p=2, r=2, order=-1).label == "L2H-1"
    assert NormDescriptor(p=1, r=math.inf).label == "LinfL1"
    with pytest.raises(ReportError):
        NormDescriptor(p=1, order=-1)
    with pytest.raises(ReportError):
        NormDescriptor(order=2)


def test_report_validation():
    descriptor = NormDescriptor()
    with pytest.raises(ReportError):
        NormReport("up", descriptor, (0.1, 0.2), (1.0, 0.5))
    with pytest.raises(ReportError):
        NormReport("negative", descriptor, (0.2, 0.1), (1.0, -0.5))
    with pytest.raises(ReportError):
        NormReport("short", descriptor, (0.2, 0.1), (1.0,))


def test_report_ratios_and_monotonicity():
    report = NormReport("decay", NormDescriptor(), (0.4, 0.2, 0.1), (1.0, 0.5, 0.3))
    assert report.ratios() == pytest.approx([0.5, 0.6])
    assert report.is_monotone_decreasing()
    assert report.final_over_initial() == pytest.approx(0.3)
    flat = NormReport("flat", NormDescriptor(), (0.4, 0.2), (1.0, 1.0))
    assert not flat.is_monotone_decreasing()


def test_rate_fit_recovers_power_law():
    deltas = (0.4, 0.2, 0.1, 0.05)
    report = NormReport("quadratic", NormDescriptor(), deltas, tuple(3.0 * d**2 for d in deltas))
    fit = rate_fit(report)
    assert fit.rate == pytest.approx(2.0, abs=1e-10)
    assert fit.residual < 1e-10
    assert not fit.degenerate


def test_rate_fit_edge_cases():
    with pytest.raises(ReportError):
        rate_fit(NormReport("two", NormDescriptor(), (0.2, 0.1), (1.0, 0.5)))
    fit = rate_fit(NormReport("zeros", NormDescriptor(), (0.4, 0.2, 0.1), (0.0, 0.0, 0.0)))
    assert fit.degenerate and math.isinf(fit.rate)
    assert fit.to_dict()["rate"] == "inf"


def test_report_csv_with_header(tmp_path):
    report = NormReport("decay", NormDescriptor(p=2, r=2, order=-1), (0.2, 0.1), (1.0, 0.25))
    path = report.to_csv(tmp_path / "decay.csv", manifest_hash="abc")
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["delta", "L2H-1"]
    header = json.loads(path.with_suffix(".json").read_text())
    assert header["manifest_hash"] == "abc"
    assert header["descriptor"]["order"] == -1
