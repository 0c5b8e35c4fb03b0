from __future__ import annotations

import json
import math

import numpy as np
import pytest

from fplab.errors import ScenarioValidationError
from fplab.scenario import load_scenario, parse_scenario, resolve_scenario_path, validate_scenario

MINIMAL = {
    "label": "minimal",
    "grid": {"n": 64},
    "time": {"T": 0.1, "nt": 10},
    "coefficients": {"class": "smooth"},
}


def _with(**changes) -> dict:
    data = json.loads(json.dumps(MINIMAL))
    data.update(changes)
    return data


def test_shipped_scenarios_parse(scenario_dir):
    paths = sorted(scenario_dir.glob("*.json"))
    assert len(paths) >= 10
    for path in paths:
        scenario = load_scenario(path)
        assert scenario.label == path.stem


def test_defaults_are_filled_in():
    scenario = parse_scenario(MINIMAL)
    assert scenario.grid.d == 1
    assert scenario.grid.L == pytest.approx(2.0 * math.pi)
    assert scenario.q == 2.0
    assert scenario.initial.kind == "mode"
    assert scenario.mollifier.family is None
    assert scenario.sde is None
    assert scenario.coefficient_seed == 0


def test_infinite_exponents_parse():
    scenario = parse_scenario(_with(q="inf"))
    assert math.isinf(scenario.q)


def test_unknown_key_gets_a_suggestion():
    data = _with(grids={"n": 64})
    del data["grid"]
    with pytest.raises(ScenarioValidationError) as excinfo:
        parse_scenario(data)
    suggestions = [issue.get("suggestion") for issue in excinfo.value.issues]
    assert "grid" in suggestions
    assert excinfo.value.to_record()["error"] == "scenario_validation"


def test_unknown_class_gets_a_suggestion():
    with pytest.raises(ScenarioValidationError) as excinfo:
        parse_scenario(_with(coefficients={"class": "smoth"}))
    assert "did you mean 'smooth'" in json.dumps(excinfo.value.issues)


@pytest.mark.parametrize(
    "grid",
    [{"n": 48}, {"n": 4}, {"n": 64, "d": 4}, {"n": 64, "L": 0.0}],
)
def test_invalid_grids_are_rejected(grid):
    with pytest.raises(ScenarioValidationError):
        parse_scenario(_with(grid=grid))


def test_loose_solver_tolerance_is_rejected():
    with pytest.raises(ScenarioValidationError):
        parse_scenario(_with(solver={"tol": 1e-3}))


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ScenarioValidationError, match="does not exist"):
        load_scenario(tmp_path / "absent.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{\"label\": ", encoding="utf-8")
    with pytest.raises(ScenarioValidationError, match="invalid JSON"):
        load_scenario(broken)


def test_scenario_names_resolve(scenario_dir):
    assert resolve_scenario_path("heat_1d", scenario_dir).name == "heat_1d.json"
    assert resolve_scenario_path(str(scenario_dir / "jump_1d.json"), scenario_dir).name == "jump_1d.json"
    with pytest.raises(ScenarioValidationError, match="did you mean 'heat_1d'"):
        resolve_scenario_path("haet_1d", scenario_dir)


def test_overrides_reparse():
    scenario = parse_scenario(_with(seed=3, coefficients={"class": "smooth", "seed": 8}))
    assert scenario.coefficient_seed == 8
    changed = scenario.with_overrides(seed=5, n=128)
    assert changed.grid.n == 128
    assert changed.coefficient_seed == 5
    assert scenario.grid.n == 64
    with pytest.raises(ScenarioValidationError):
        scenario.with_overrides(n=100)


def test_canonical_form_uses_aliases():
    canonical = parse_scenario(_with(q="inf")).canonical()
    assert canonical["coefficients"]["class"] == "smooth"
    assert canonical["q"] == "inf"
    assert json.loads(json.dumps(canonical)) == canonical


def test_build_produces_initial_data():
    scenario = parse_scenario(
        _with(initial={"kind": "mode", "params": {"k": 2, "offset": 1.0, "amplitude": 0.5, "normalize": True}})
    )
    problem = scenario.build()
    assert problem.grid.n == 64
    assert problem.u0.integral() == pytest.approx(1.0)
    x = problem.grid.mesh()[0]
    expected = (1.0 + 0.5 * np.sin(2 * x)) / (2.0 * math.pi)
    assert np.allclose(problem.u0.values, expected)
    assert problem.time_grid.dt == pytest.approx(0.01)


def test_bump_wraps_around_the_period():
    scenario = parse_scenario(_with(initial={"kind": "bump", "params": {"center": 0.0, "width": 0.3}}))
    u0 = scenario.build().u0.values
    assert u0[0] == pytest.approx(1.0)
    assert u0[1] == pytest.approx(u0[-1])


def test_validation_of_heat_scenario(scenario_dir):
    report = validate_scenario(scenario_dir / "heat_1d.json")
    assert report.passed
    assert "Uniqueness for bounded drift with Lipschitz diffusion" in report.activated
    assert "Uniqueness of parabolic solutions" in report.activated
    assert report.to_dict()["status"] == "passed"
    assert report.summary_lines()[0] == "Scenario: heat_1d"


def test_validation_flags_subcritical_exponents(scenario_dir):
    report = validate_scenario(scenario_dir / "threshold_violation.json")
    assert report.passed
    assert report.exponents["sum"] == pytest.approx(2.0 / 3.0)
    assert "Distributional solutions carry an L² gradient" not in report.activated


def test_validation_lists_ellipticity_failures(scenario_dir):
    report = validate_scenario(scenario_dir / "ellipticity_violation.json")
    assert not report.passed
    entry = report.assumptions["uniform_ellipticity"]
    assert not entry["passed"]
    assert entry["value"] == pytest.approx(0.1)
    assert entry["declared_alpha"] == 0.5
