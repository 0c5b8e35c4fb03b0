from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable

from .grid_fields import CoefficientSet, assumption_measurements

LIPSCHITZ_DIFFUSION_CLASSES = frozenset({"smooth", "lipschitz", "divfree_2d", "constant"})
EXPONENT_TOL = 1e-12


@dataclass(frozen=True)
class AssumptionRule:
    id: str
    label: str
    measurement: str
    category: str = "assumption"
    hint: str | None = None


@dataclass(frozen=True)
class RegimeInputs:
    d: int
    p: float
    q: float
    regularity: str

    @property
    def exponent_sum(self) -> float:
        return 1.0 / self.p + 1.0 / self.q

    @property
    def lipschitz_diffusion(self) -> bool:
        return self.regularity in LIPSCHITZ_DIFFUSION_CLASSES


@dataclass(frozen=True)
class RegimeRule:
    id: str
    label: str
    requirement: str
    applies: Callable[[RegimeInputs], bool]
    category: str = "regime"
    hint: str | None = None


ASSUMPTION_RULES: tuple[AssumptionRule, ...] = (
    AssumptionRule(
        id="bounded_diffusion",
        label="Diffusion matrix is uniformly bounded",
        measurement="sup_a",
        hint="sup |a_ij| over nodes and time slices must be finite.",
    ),
    AssumptionRule(
        id="bounded_row_divergence",
        label="Row divergence of the diffusion is bounded",
        measurement="sup_row_divergence",
        hint="sup |Σ_j ∂_j a_ij| must be finite.",
    ),
    AssumptionRule(
        id="divergence_budget",
        label="Negative part of div b̃ has a finite time budget",
        measurement="negative_divergence_integral",
        hint="∫‖(div b̃)⁻‖_∞ dt enters every energy bound exponentially.",
    ),
    AssumptionRule(
        id="uniform_ellipticity",
        label="Diffusion is uniformly elliptic at the declared alpha",
        measurement="alpha_min",
        hint="The smallest eigenvalue of a over all nodes must reach alpha > 0.",
    ),
)


def _on_critical_line(inputs: RegimeInputs) -> bool:
    return abs(inputs.exponent_sum - 0.5) <= EXPONENT_TOL


def _sobolev_ceiling(d: int) -> float:
    return math.inf if d <= 2 else 2.0 * d / (d - 2.0)


REGIME_RULES: tuple[RegimeRule, ...] = (
    RegimeRule(
        id="parabolic_uniqueness",
        label="Uniqueness of parabolic solutions",
        requirement="1/p + 1/q = 1/2",
        applies=_on_critical_line,
    ),
    RegimeRule(
        id="parabolic_regularity",
        label="Distributional solutions carry an L² gradient",
        requirement="1/p + 1/q <= 1/2",
        applies=lambda inputs: inputs.exponent_sum <= 0.5 + EXPONENT_TOL,
    ),
    RegimeRule(
        id="bounded_drift",
        label="Uniqueness for bounded drift with Lipschitz diffusion",
        requirement="p = inf and Lipschitz a",
        applies=lambda inputs: math.isinf(inputs.p) and inputs.lipschitz_diffusion,
    ),
    RegimeRule(
        id="local_uniqueness",
        label="Uniqueness without growth conditions",
        requirement="q > 2 and 1/p + 1/q = 1/2",
        applies=lambda inputs: inputs.q > 2.0 and _on_critical_line(inputs),
    ),
    RegimeRule(
        id="global_gradient",
        label="Global gradient integrability",
        requirement="2 < q <= 2d/(d-2)",
        applies=lambda inputs: 2.0 < inputs.q <= _sobolev_ceiling(inputs.d),
        hint="For d <= 2 the upper bound is void.",
    ),
)


INFORMATIONAL = "informational"

VERDICT_LABELS: dict[str, str] = {
    "decomposition": "Drift commutator splits as r = r1 + r2",
    "kernel_form": "Kernel quadrature matches the convolution form",
    "null_r": "Constant drift gives a vanishing drift commutator",
    "null_s": "Constant diffusion gives vanishing diffusion commutators",
    "r_dual_decay": "Drift commutator vanishes in the dual Sobolev norm",
    "s1_separation": "Diffusion commutator vanishes in H^-1 but not in L1",
    "s1_quotient_limit": "Difference-quotient part of s1 reaches its pointwise limit",
    "s_cancellation": "Full diffusion commutator cancels as delta shrinks",
    "gradient_uniform": "Gradient budgets stay bounded under refinement",
    "cauchy_mollified": "Mollified-coefficient solutions form a Cauchy sequence (numerical evidence)",
    "lq_energy": "L^q norm stays under the divergence-budget bound",
    "parabolic_energy": "Parabolic energy inequality holds",
    "renorm_gronwall": "Truncated-square trace obeys the Gronwall bound",
    "mass_conservation": "Mass is conserved",
    "positivity": "Upwind solution stays non-negative",
    "form_agreement": "Divergence and non-divergence forms agree",
    "form_convergence": "Form difference converges under refinement",
    "law_match": "Particle law matches the PDE density",
    "law_doubling": "Particle law distance shrinks each time N doubles",
    "assumptions": "Coefficient assumptions hold",
}

DRIFT = "Drift commutator estimate"
DIFFUSION = "Diffusion commutator estimate"
ENERGY = "Energy estimates"
VERDICT_RESULTS: dict[str, str] = {
    "decomposition": DRIFT,
    "kernel_form": DRIFT,
    "null_r": DRIFT,
    "r_dual_decay": DRIFT,
    "null_s": DIFFUSION,
    "s1_separation": "Norm separation of the diffusion commutator",
    "s1_quotient_limit": DIFFUSION,
    "s_cancellation": DIFFUSION,
    "gradient_uniform": "Gradient regularity",
    "cauchy_mollified": "Uniqueness through mollified coefficients",
    "lq_energy": ENERGY,
    "parabolic_energy": ENERGY,
    "renorm_gronwall": "Renormalized energy estimate",
    "mass_conservation": "Solver consistency",
    "positivity": "Solver consistency",
    "form_agreement": "Equivalence of the two forms",
    "form_convergence": "Equivalence of the two forms",
    "law_match": "Particle representation of the density",
    "law_doubling": "Particle representation of the density",
    "assumptions": "Standing assumptions",
}


def verdict(check_id: str, passed: bool, category: str = "study", **details) -> OrderedDict:
    record = OrderedDict(
        label=VERDICT_LABELS[check_id], result=VERDICT_RESULTS[check_id], passed=bool(passed), category=category
    )
    record.update(details)
    return record


def all_counted_pass(verdicts: dict) -> bool:
    """Informational verdicts are reported but never decide a run."""
    return all(entry["passed"] for entry in verdicts.values() if entry.get("category") != INFORMATIONAL)


def verdict_word(entry: dict) -> str:
    if entry.get("category") == INFORMATIONAL:
        return "INFO"
    return "PASS" if entry["passed"] else "FAIL"


def check_assumptions(c: CoefficientSet) -> OrderedDict[str, dict]:
    measurements = assumption_measurements(c)
    results: OrderedDict[str, dict] = OrderedDict()
    for rule in ASSUMPTION_RULES:
        value = measurements[rule.measurement]
        if rule.id == "uniform_ellipticity":
            passed = c.alpha > 0.0 and value >= c.alpha * (1.0 - 1e-12)
        else:
            passed = math.isfinite(value)
        results[rule.id] = {
            "label": rule.label,
            "passed": bool(passed),
            "value": value,
            "category": rule.category,
            "hint": rule.hint,
        }
    results["uniform_ellipticity"]["declared_alpha"] = c.alpha
    return results


def evaluate_regimes(inputs: RegimeInputs) -> OrderedDict[str, dict]:
    results: OrderedDict[str, dict] = OrderedDict()
    for rule in REGIME_RULES:
        results[rule.id] = {
            "label": rule.label,
            "passed": bool(rule.applies(inputs)),
            "requirement": rule.requirement,
            "category": rule.category,
            "hint": rule.hint,
        }
    return results


def active_regimes(inputs: RegimeInputs) -> list[str]:
    return [entry["label"] for entry in evaluate_regimes(inputs).values() if entry["passed"]]
