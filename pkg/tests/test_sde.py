from __future__ import annotations

import math
import warnings

import numpy as np
import pytest

from fplab.errors import AsymmetricMatrixError, DensityError, EllipticityError, HorizonMismatchError, LabError
from fplab.grid_fields import Grid, ScalarField, TimeGrid
from fplab.sde import (
    ParticleEnsemble,
    SdeConfig,
    export_ensemble_csv,
    histogram_density,
    interpolate_periodic,
    law_compare,
    law_doubling,
    sample_initial,
    sigma_from_a,
    simulate,
    wrap_positions,
)
from fplab.solver import solve_fp_div


@pytest.fixture()
def coarse() -> Grid:
    return Grid(1, 64, 2.0 * math.pi)


def _point_mass(grid: Grid, N: int, at: float = math.pi) -> ParticleEnsemble:
    return ParticleEnsemble(grid, np.full((N, 1), at), seed=0)


def test_sigma_factorizes_diffusion():
    a = np.array([[4.0, 2.0], [2.0, 3.0]])
    sigma = sigma_from_a(a)
    assert np.allclose(sigma @ sigma.T, a)
    assert sigma[0, 1] == 0.0
    assert sigma_from_a(2.0)[0, 0] == pytest.approx(math.sqrt(2.0))


def test_sigma_rejects_bad_matrices():
    with pytest.raises(AsymmetricMatrixError):
        sigma_from_a([[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(EllipticityError):
        sigma_from_a([[1.0, 2.0], [2.0, 1.0]])


def test_wrap_stays_inside_period():
    L = 2.0 * math.pi
    wrapped = wrap_positions(np.array([-1e-18, -0.5, L, L + 0.25]), L)
    assert np.all((wrapped >= 0.0) & (wrapped < L))
    assert wrapped[3] == pytest.approx(0.25)


def test_periodic_interpolation(coarse):
    x = coarse.mesh()[0]
    values = np.cos(x)
    h = coarse.h
    positions = np.array([[0.0], [h / 2], [coarse.L - h / 2]])
    result = interpolate_periodic(values, positions, coarse)
    assert result[0] == pytest.approx(1.0)
    assert result[1] == pytest.approx(0.5 * (values[0] + values[1]))
    assert result[2] == pytest.approx(0.5 * (values[-1] + values[0]))


def test_sampling_matches_density_moments(grid1d):
    u0 = ScalarField.from_function(grid1d, lambda x: np.exp(-((x - math.pi) ** 2) / 0.5))
    logs: list[str] = []
    with pytest.warns(UserWarning, match="renormalizing"):
        ens = sample_initial(u0, 20000, seed=3, logs=logs)
    assert ens.N == 20000
    assert ens.mean()[0] == pytest.approx(math.pi, abs=0.02)
    assert ens.variance()[0] == pytest.approx(0.25, abs=0.02)
    assert any("Renormalized" in line for line in logs)


def test_normalized_density_samples_silently(grid1d):
    u0 = ScalarField.constant(grid1d, 1.0 / grid1d.L)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ens = sample_initial(u0, 20000, seed=5)
    assert ens.mean()[0] == pytest.approx(math.pi, abs=0.05)
    assert ens.variance()[0] == pytest.approx(grid1d.L**2 / 12.0, rel=0.05)


def test_two_dimensional_sampling(grid2d):
    u0 = ScalarField.from_function(grid2d, lambda x, y: 1.0 + 0.5 * np.cos(x))
    with pytest.warns(UserWarning):
        ens = sample_initial(u0, 5000, seed=2)
    assert ens.positions.shape == (5000, 2)
    assert np.all((ens.positions >= 0.0) & (ens.positions < grid2d.L))


def test_invalid_densities_are_rejected(grid1d):
    with pytest.raises(DensityError):
        sample_initial(ScalarField.constant(grid1d, 0.0), 10, seed=0)
    with pytest.raises(DensityError):
        sample_initial(ScalarField.from_function(grid1d, np.sin), 10, seed=0)


def test_brownian_variance_grows_linearly(heat):
    ens = _point_mass(heat.grid, 20000)
    T = 0.25
    moved = simulate(heat, ens, TimeGrid(T, 25), SdeConfig(N=20000, dt=0.01, seed=1))
    # a = 2 gives unit-rate Brownian motion with variance 2T
    standard_error = 2.0 * T * math.sqrt(2.0 / 20000)
    assert moved.variance()[0] == pytest.approx(2.0 * T, abs=4.0 * standard_error)
    assert moved.time == pytest.approx(T)


def test_constant_drift_shifts_the_mean(grid1d, constant_set):
    c = constant_set(grid1d, [1.0], [[0.01]], 0.01)
    moved = simulate(c, _point_mass(grid1d, 4000, at=1.0), TimeGrid(1.0, 100), SdeConfig(N=4000, dt=0.01, seed=4))
    assert moved.mean()[0] == pytest.approx(2.0, abs=0.01)


def test_simulation_is_independent_of_worker_count(heat):
    ens = _point_mass(heat.grid, 5000)
    tg = TimeGrid(0.1, 10)
    serial = simulate(heat, ens, tg, SdeConfig(N=5000, dt=0.01, seed=9, batch_size=1000, max_workers=1))
    parallel = simulate(heat, ens, tg, SdeConfig(N=5000, dt=0.01, seed=9, batch_size=1000, max_workers=4))
    assert np.array_equal(serial.positions, parallel.positions)


def test_simulation_guards(heat, grid1d, constant_set):
    ens = _point_mass(grid1d, 10)
    with pytest.raises(LabError):
        simulate(heat, ens, TimeGrid(0.1, 100), SdeConfig(N=10, dt=0.01))
    degenerate = constant_set(grid1d, [0.0], [[0.1]], 0.5)
    with pytest.raises(EllipticityError):
        simulate(degenerate, ens, TimeGrid(0.1, 10), SdeConfig(N=10, dt=0.01))
    with pytest.raises(LabError):
        SdeConfig(N=10, dt=0.01, bins=8)


def test_histogram_is_a_density(coarse):
    ens = ParticleEnsemble(coarse, np.linspace(0.0, coarse.L, 1000, endpoint=False)[:, None], seed=0)
    histogram = histogram_density(ens)
    assert histogram.integral() == pytest.approx(1.0)


def test_particle_law_approaches_pde_density(coarse, constant_set):
    heat = constant_set(coarse, [0.0], [[2.0]], 2.0)
    u0 = ScalarField.from_function(coarse, lambda x: (1.0 + 0.5 * np.sin(x)) / (2.0 * math.pi))
    tg = TimeGrid(0.25, 250)
    sol = solve_fp_div(heat, u0, tg)
    distances = []
    for N in (4000, 64000):
        start = sample_initial(u0, N, seed=11)
        ens = simulate(heat, start, tg, SdeConfig(N=N, dt=0.001, seed=12))
        comparison = law_compare(sol, ens, bins=coarse.n)
        assert comparison.distance <= 3.0 * comparison.floor
        distances.append(comparison.distance)
    assert distances[1] < distances[0]


def test_law_distance_shrinks_over_three_doublings(coarse, constant_set):
    heat = constant_set(coarse, [0.0], [[2.0]], 2.0)
    u0 = ScalarField.from_function(coarse, lambda x: (1.0 + 0.5 * np.sin(x)) / (2.0 * math.pi))
    tg = TimeGrid(0.25, 250)
    sol = solve_fp_div(heat, u0, tg)
    ens = simulate(heat, sample_initial(u0, 64000, seed=3), tg, SdeConfig(N=64000, dt=0.001, seed=4))
    ladder = law_doubling(sol, ens)
    assert [item.N for item in ladder] == [8000, 16000, 32000, 64000]
    distances = [item.distance for item in ladder]
    assert all(later < earlier for earlier, later in zip(distances, distances[1:]))
    assert ladder[-1].distance == pytest.approx(law_compare(sol, ens).distance)
    with pytest.raises(LabError):
        law_doubling(sol, ParticleEnsemble(coarse, ens.positions[:4], ens.seed, ens.time))


def test_law_compare_checks_inputs(coarse, constant_set):
    heat = constant_set(coarse, [0.0], [[2.0]], 2.0)
    u0 = ScalarField.constant(coarse, 1.0 / coarse.L)
    sol = solve_fp_div(heat, u0, TimeGrid(0.1, 10))
    ens = sample_initial(u0, 1000, seed=0)
    with pytest.raises(HorizonMismatchError):
        law_compare(sol, ens)
    with pytest.raises(LabError):
        law_compare(sol, ens, bins=32)


def test_ensemble_frame_names_axes(grid2d):
    ens = ParticleEnsemble(grid2d, np.array([[0.5, 1.0], [2.0, 3.0]]), seed=0)
    frame = ens.to_frame()
    assert list(frame.columns) == ["x", "y"]
    assert frame["y"].tolist() == [1.0, 3.0]


def test_ensemble_export(tmp_path, coarse):
    ens = ParticleEnsemble(coarse, np.array([[0.25], [1.5]]), seed=0)
    path = export_ensemble_csv(ens, tmp_path / "particles" / "ensemble.csv")
    assert path.read_text(encoding="utf-8").splitlines() == ["x", "0.25", "1.5"]
