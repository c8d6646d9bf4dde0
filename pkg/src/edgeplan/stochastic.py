"""Scenario-based stochastic programming baseline.

Shared first-stage placement/sizing, one recourse allocation per weighted
training scenario, expected delay cost in the objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ModelInfeasibleError
from .formulation import add_allocation_block, add_first_stage, extract_plan
from .instance import DemandScenario, Instance, UncertaintySet
from .solver import MilpModel, SolveFailure, solve_milp

PROB_TOL = 1e-9


@dataclass
class ScenarioSet:
    """Weighted demand scenarios; probabilities sum to one."""

    scenarios: list[DemandScenario]
    probabilities: np.ndarray

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=float)
        if len(self.scenarios) != len(self.probabilities):
            raise ConfigurationError("scenario/probability length mismatch")
        if not len(self.scenarios):
            raise ConfigurationError("scenario set is empty")
        if np.any(self.probabilities < 0):
            raise ConfigurationError("negative scenario probability")
        if abs(self.probabilities.sum() - 1.0) > PROB_TOL:
            raise ConfigurationError(
                f"probabilities sum to {self.probabilities.sum()!r}, not 1"
            )


def training_scenarios(u: UncertaintySet, count: int, seed: int,
                       sigma_scale: float = 0.5,
                       correlation: float = 0.0) -> ScenarioSet:
    """Equally weighted normal draws around the forecast, truncated to the set.

    Per-AP standard deviation is sigma_scale times the maximum deviation;
    `correlation` adds an equicorrelated common factor.  Draws are clipped to
    the box and rescaled onto the deviation budget, so every training
    scenario is a member of the uncertainty set.
    """
    if count < 1:
        raise ConfigurationError("count must be at least 1")
    if not 0 <= correlation <= 1:
        raise ConfigurationError("correlation must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    own = rng.standard_normal((count, u.size))
    common = rng.standard_normal((count, 1))
    z = np.sqrt(1 - correlation) * own + np.sqrt(correlation) * common
    scenarios = []
    for row in z:
        g = np.clip(sigma_scale * row, -1.0, 1.0)
        total = np.abs(g).sum()
        if total > u.gamma:
            g = g * (u.gamma / total) if total > 0 else g
        scenarios.append(DemandScenario(u.demand(g), g))
    return ScenarioSet(scenarios, np.full(count, 1.0 / count))


def build_stochastic(inst: Instance, s: ScenarioSet) -> MilpModel:
    """Deterministic equivalent: expected recourse delay cost over the set."""
    model = MilpModel("stochastic", sense="min")
    add_first_stage(model, inst)
    for xi, (scen, prob) in enumerate(zip(s.scenarios, s.probabilities)):
        add_allocation_block(
            model, inst, scen, tag=f"_s{xi}", obj_weight=float(prob) * inst.beta
        )
    return model


def solve_stochastic(inst: Instance, s: ScenarioSet, gap_tol: float = 1e-9):
    """Optimal plan and expected total cost over the training scenarios."""
    model = build_stochastic(inst, s)
    sol = solve_milp(model, gap_tol=gap_tol)
    if sol.status != "optimal":
        if sol.status == "infeasible":
            raise ModelInfeasibleError("stochastic model infeasible")
        raise SolveFailure(f"stochastic solve ended with status {sol.status}")
    plan = extract_plan(inst, sol.values)
    plan.validate(inst)
    expected_delay_cost = 0.0
    for xi, (scen, prob) in enumerate(zip(s.scenarios, s.probabilities)):
        total = 0.0
        for i in range(inst.m_aps):
            total += inst.delay_cloud[i] * sol.values[f"xc_s{xi}[{i}]"]
            for j in range(inst.n_ens):
                total += inst.delay_edge[i, j] * sol.values[f"xe_s{xi}[{i},{j}]"]
        expected_delay_cost += float(prob) * inst.beta * total
    recomputed = plan.first_stage_cost + expected_delay_cost
    if abs(recomputed - sol.objective) > 1e-6 * (1 + abs(sol.objective)):
        raise SolveFailure(
            f"objective mismatch: {sol.objective} vs recomputed {recomputed}"
        )
    return plan, float(sol.objective)
