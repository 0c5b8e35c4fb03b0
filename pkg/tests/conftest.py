from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest

from config import TestConfig
from fplab import create_app, db
from fplab.grid_fields import CoefficientSet, Grid, MatrixField, ScalarField, TimeGrid, VectorField

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture()
def app(tmp_path):
    class _Config(TestConfig):
        RESULTS_FOLDER = str(tmp_path / "results")

    app = create_app(_Config)
    yield app
    with app.app_context():
        db.session.remove()
        db.drop_all()


@pytest.fixture()
def grid1d() -> Grid:
    return Grid(1, 256, 2.0 * math.pi)


@pytest.fixture()
def grid2d() -> Grid:
    return Grid(2, 32, 2.0 * math.pi)


@pytest.fixture()
def sine(grid1d) -> ScalarField:
    return ScalarField.from_function(grid1d, np.sin)


def constant_coefficients(grid: Grid, b, a, alpha: float) -> CoefficientSet:
    return CoefficientSet(
        b=VectorField.constant(grid, b),
        a=MatrixField.constant(grid, a),
        alpha=alpha,
        regularity="constant",
    )


@pytest.fixture()
def heat(grid1d):
    """b = 0, a = 2: the unit-rate heat equation."""
    return constant_coefficients(grid1d, [0.0], [[2.0]], 2.0)


@pytest.fixture()
def heat_time() -> TimeGrid:
    return TimeGrid(1.0, 1000)


@pytest.fixture()
def constant_set():
    return constant_coefficients


@pytest.fixture()
def scenario_dir() -> Path:
    return SCENARIO_DIR
