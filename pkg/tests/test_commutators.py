from __future__ import annotations

import math

import numpy as np
import pytest

from fplab.commutators import (
    commutator_r,
    commutator_s,
    commutator_s1,
    commutators_for,
    kernel_form_r,
    s1_limit,
    split_s1,
)
from fplab.errors import GridMismatchError
from fplab.grid_fields import Grid, MatrixField, ScalarField, VectorField, gen_coefficients
from fplab.mollify import make_mollifier
from fplab.norms import NormDescriptor, NormReport, lp_norm


def _smooth_pair(grid):
    b = VectorField.from_function(grid, lambda x: [1.0 + 0.5 * np.sin(x) + 0.2 * np.cos(3 * x)])
    w = ScalarField.from_function(grid, lambda x: np.exp(np.cos(x)))
    return b, w


def test_constant_drift_commutator_vanishes(grid1d, sine):
    m = make_mollifier("bump", 8 * grid1d.h, grid1d)
    split = commutator_r(VectorField.constant(grid1d, [2.5]), sine, m)
    assert np.abs(split.r.values).max() < 1e-12
    assert split.r.norm(1) < 1e-11


def test_drift_commutator_splits(grid1d):
    b, w = _smooth_pair(grid1d)
    m = make_mollifier("bump", 8 * grid1d.h, grid1d)
    split = commutator_r(b, w, m)
    gap = split.r.field - split.r1.field - split.r2.field
    assert lp_norm(gap, 1) <= 1e-12 * max(1.0, split.r.norm(1))


@pytest.mark.parametrize("family", ["bump", "gaussian_truncated"])
def test_kernel_form_matches_convolution_form(grid1d, family):
    b, w = _smooth_pair(grid1d)
    m = make_mollifier(family, 4 * grid1d.h, grid1d)
    convolution = commutator_r(b, w, m).r1
    quadrature = kernel_form_r(b, w, m)
    gap = lp_norm(quadrature.field - convolution.field, 1)
    assert gap <= 1e-6 * convolution.norm(1)


def test_kernel_form_in_two_dimensions(grid2d):
    c = gen_coefficients("divfree_2d", grid2d, seed=1)
    w = ScalarField.from_function(grid2d, lambda x, y: np.sin(x) * np.cos(y))
    m = make_mollifier("bump", 3 * grid2d.h, grid2d)
    convolution = commutator_r(c.b[0], w, m).r1
    quadrature = kernel_form_r(c.b[0], w, m)
    assert lp_norm(quadrature.field - convolution.field, 1) <= 1e-6 * convolution.norm(1)


def test_constant_diffusion_commutators_vanish(grid1d, sine):
    a = MatrixField.constant(grid1d, [[1.7]])
    m = make_mollifier("bump", 8 * grid1d.h, grid1d)
    assert np.abs(commutator_s(a, sine, m).values).max() < 1e-9
    assert np.abs(commutator_s1(a, sine, m).values).max() < 1e-9


def test_diffusion_cancellation_and_quotient_limit():
    grid = Grid(1, 1024, 2.0 * math.pi)
    a = MatrixField.from_function(grid, lambda x: [[2.0 + np.sin(x)]])
    w = ScalarField.from_function(grid, lambda x: np.sin(2 * x))
    m = make_mollifier("bump", 0.025, grid)
    limit = lp_norm(s1_limit(a, w), 1)
    split = split_s1(a, w, m)
    assert lp_norm(split.quotient.field - s1_limit(a, w), 1) <= 0.05 * limit
    assert commutator_s(a, w, m).norm(1) < 0.10 * limit
    assert lp_norm(split.product.field + s1_limit(a, w), 1) <= 0.05 * limit
    assert np.allclose(split.s1.values, split.quotient.values + split.product.values, atol=1e-12)


def test_drift_commutator_decays_in_dual_norm(grid1d):
    b, w = _smooth_pair(grid1d)
    deltas = [cells * grid1d.h for cells in (16, 8, 4, 2)]
    values = [commutator_r(b, w, make_mollifier("bump", d, grid1d)).r.norm(2, order=-1) for d in deltas]
    report = NormReport("r", NormDescriptor(p=2, order=-1), tuple(deltas), tuple(values))
    assert report.is_monotone_decreasing()
    assert report.final_over_initial() < 0.5


def test_s1_separates_norms_on_jump_diffusion():
    # the kernel must stay many cells wide, or the sampled step cancels against it in L1
    grid = Grid(1, 2048, 2.0 * math.pi)
    c = gen_coefficients("bounded_jump", grid, {"alpha": 0.5, "jump": 1.0})
    w = ScalarField.from_function(grid, np.cos)
    deltas = [0.4, 0.2, 0.1, 0.05]
    fields = [commutator_s1(c.a[0], w, make_mollifier("bump", d, grid)) for d in deltas]
    dual = NormReport("s1", NormDescriptor(p=2, order=-1), tuple(deltas), tuple(f.norm(2, order=-1) for f in fields))
    mass = NormReport("s1", NormDescriptor(p=1), tuple(deltas), tuple(f.norm(1) for f in fields))
    assert dual.is_monotone_decreasing()
    assert dual.final_over_initial() < 0.5
    assert mass.final_over_initial() > 0.8


def test_time_sliced_inputs_carry_one_field_per_slice(grid1d, sine):
    c = gen_coefficients("smooth", grid1d, {"time_slices": 3, "horizon": 1.5}, seed=2)
    m = make_mollifier("bump", 4 * grid1d.h, grid1d)
    cs = commutators_for(c, sine, m, scenario="sliced", with_kernel_form=True)
    assert len(cs.r.r.slices) == 3
    assert cs.s.times == pytest.approx(c.times)
    assert cs.s.horizon == pytest.approx(1.5)
    assert set(cs.by_kind()) == {"r", "r1", "r2", "s", "s1", "s1_quotient", "s1_product"}
    assert cs.kernel_r1.scenario == "sliced"


def test_commutator_grid_mismatch(grid1d, sine):
    m = make_mollifier("bump", 4 * grid1d.h, Grid(1, 128, grid1d.L))
    with pytest.raises(GridMismatchError):
        commutator_r(VectorField.constant(grid1d, [1.0]), sine, m)
