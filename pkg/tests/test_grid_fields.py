from __future__ import annotations

import math

import numpy as np
import pandas as pd
import pytest

from fplab.errors import (
    AdmissibleRangeError,
    AsymmetricMatrixError,
    EllipticityError,
    FieldShapeError,
    GridError,
    GridMismatchError,
    NonFiniteFieldError,
    ScenarioValidationError,
)
from fplab.grid_fields import (
    CoefficientSet,
    Grid,
    MatrixField,
    ScalarField,
    TimeGrid,
    VectorField,
    assumption_measurements,
    divergence,
    ellipticity_check,
    export_field_csv,
    gen_coefficients,
    gradient,
    make_grid,
    negative_divergence_budget,
    row_divergence,
    tilde_b,
)


def test_make_grid_spacing():
    grid = make_grid(2, 64, 1.0)
    assert grid.shape == (64, 64)
    assert grid.h == pytest.approx(1.0 / 64)
    assert grid.mesh()[0][3, 0] == pytest.approx(3.0 / 64)


@pytest.mark.parametrize("n", [0, 6, 100, 4])
def test_grid_rejects_non_power_of_two(n):
    with pytest.raises(GridError):
        Grid(1, n, 1.0)


def test_grid_rejects_dimension_and_length():
    with pytest.raises(GridError):
        Grid(4, 16, 1.0)
    with pytest.raises(GridError):
        Grid(1, 16, -1.0)


def test_time_grid_step_and_times():
    tg = TimeGrid(1.0, 4)
    assert tg.dt == pytest.approx(0.25)
    assert tg.times().tolist() == pytest.approx([0.0, 0.25, 0.5, 0.75, 1.0])
    with pytest.raises(GridError):
        TimeGrid(1.0, 0)


def test_spectral_gradient_is_exact_on_modes(grid1d):
    f = ScalarField.from_function(grid1d, lambda x: np.sin(3 * x))
    expected = 3 * np.cos(3 * grid1d.mesh()[0])
    assert np.abs(gradient(f).values[0] - expected).max() < 1e-10


def test_nyquist_mode_has_zero_derivative():
    grid = Grid(1, 16, 2.0 * math.pi)
    f = ScalarField(grid, (-1.0) ** np.arange(16))
    assert np.abs(gradient(f).values).max() < 1e-12


def test_divergence_of_gradient_matches_laplacian(grid2d):
    f = ScalarField.from_function(grid2d, lambda x, y: np.sin(x) * np.cos(2 * y))
    laplacian = divergence(gradient(f)).values
    assert np.abs(laplacian + 5 * f.values).max() < 1e-10


def test_field_validation(grid1d):
    with pytest.raises(FieldShapeError):
        ScalarField(grid1d, np.zeros(10))
    with pytest.raises(NonFiniteFieldError):
        ScalarField(grid1d, np.full(grid1d.shape, np.nan))
    with pytest.raises(GridMismatchError):
        ScalarField.constant(grid1d, 1.0) + ScalarField.constant(Grid(1, 128, grid1d.L), 1.0)


def test_matrix_field_rejects_asymmetry(grid2d):
    values = np.zeros((2, 2, *grid2d.shape))
    values[0, 1] = 1.0
    with pytest.raises(AsymmetricMatrixError):
        MatrixField(grid2d, values)


def test_tilde_b_subtracts_half_row_divergence(grid1d):
    x = grid1d.mesh()[0]
    a = MatrixField.from_function(grid1d, lambda x: [[2.0 + np.sin(x)]])
    b = VectorField.from_function(grid1d, lambda x: [np.cos(2 * x)])
    c = CoefficientSet(b=b, a=a, alpha=1.0, regularity="smooth")
    assert np.abs(row_divergence(a).values[0] - np.cos(x)).max() < 1e-10
    assert np.abs(tilde_b(c)[0].values[0] - (np.cos(2 * x) - 0.5 * np.cos(x))).max() < 1e-10


def test_ellipticity_check_returns_smallest_eigenvalue(grid2d):
    a = MatrixField.constant(grid2d, [[2.0, 0.0], [0.0, 0.5]])
    assert ellipticity_check(a) == pytest.approx(0.5)


def test_negative_divergence_budget(grid1d):
    c = CoefficientSet(
        b=VectorField.from_function(grid1d, lambda x: [np.sin(x)]),
        a=MatrixField.identity(grid1d),
        alpha=1.0,
        regularity="smooth",
    )
    table = negative_divergence_budget(c)
    assert table.integral == pytest.approx(1.0, rel=1e-10)
    assert table.cumulative(0.5) == pytest.approx(0.5, rel=1e-10)
    measurements = assumption_measurements(c)
    assert measurements["sup_b"] == pytest.approx(1.0, rel=1e-3)
    assert measurements["alpha_min"] == pytest.approx(1.0)


def test_coefficient_set_slices(grid1d):
    c = gen_coefficients("smooth", grid1d, {"time_slices": 4, "horizon": 1.0}, seed=1)
    assert c.n_slices == 4
    assert c.times == pytest.approx((0.0, 0.25, 0.5, 0.75))
    assert c.slice_index(0.3) == 1
    assert c.slice_index(5.0) == 3
    b, a = c.at(0.6)
    assert b is c.b[2] and a is c.a[2]


def test_gen_coefficients_is_deterministic(grid1d):
    first = gen_coefficients("smooth", grid1d, seed=4)
    second = gen_coefficients("smooth", grid1d, seed=4)
    other = gen_coefficients("smooth", grid1d, seed=5)
    assert np.array_equal(first.b[0].values, second.b[0].values)
    assert not np.array_equal(first.b[0].values, other.b[0].values)
    assert ellipticity_check(first.a) >= first.alpha * (1 - 1e-12)


def test_divfree_drift_has_zero_divergence(grid2d):
    c = gen_coefficients("divfree_2d", grid2d, seed=2)
    assert np.abs(divergence(c.b[0]).values).max() < 1e-9


def test_w1p_gamma_outside_admissible_interval(grid1d):
    with pytest.raises(AdmissibleRangeError):
        gen_coefficients("w1p_singular", grid1d, {"p": 8, "gamma": 0.5})


def test_declared_alpha_above_eigenvalues(grid1d):
    with pytest.raises(EllipticityError):
        gen_coefficients("constant", grid1d, {"alpha": 0.5, "a": [[0.1]], "b": [0.0]})
    relaxed = gen_coefficients("constant", grid1d, {"alpha": 0.5, "a": [[0.1]], "b": [0.0]}, check_ellipticity=False)
    assert ellipticity_check(relaxed.a) == pytest.approx(0.1)


def test_unknown_class_and_bad_params(grid1d):
    with pytest.raises(ScenarioValidationError):
        gen_coefficients("wavy", grid1d)
    with pytest.raises(ScenarioValidationError):
        gen_coefficients("smooth", grid1d, {"alpah": 1.0})


def test_bounded_jump_range(grid1d):
    c = gen_coefficients("bounded_jump", grid1d, {"alpha": 0.5, "jump": 1.0})
    values = c.a[0].values[0, 0]
    assert values.min() == pytest.approx(0.5, abs=1e-6)
    assert values.max() == pytest.approx(1.5, abs=1e-6)


def test_export_field_csv(tmp_path, sine):
    path = export_field_csv(sine, tmp_path / "fields" / "sine.csv")
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["x", "value"]
    assert len(frame) == sine.grid.n


def test_w1p_singularity_is_floored_at_half_a_cell(grid1d):
    c = gen_coefficients("w1p_singular", grid1d, {"alpha": 0.5, "p": 8, "gamma": 0.9, "a_amp": 0.5, "b_amp": 0.5}, seed=3)
    floor = grid1d.h / 2.0
    assert c.a[0].values.min() == pytest.approx(0.5 + 0.5 * floor**0.9)
    assert np.abs(c.b[0].values).max() <= 0.5 * floor ** (0.9 - 1.0) * (1.0 + 1e-12)
    assert np.all(np.isfinite(c.b[0].values))
