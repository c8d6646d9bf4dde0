"""Operation-stage recourse with request dropping, and the method comparison.

Once a plan is fixed and the demand is revealed, the provider re-solves the
allocation with an explicit drop option: unserved requests cost a penalty
proportional to the drop ratio, and the average-delay cap applies to served
requests only.  `evaluate_methods` runs every plan against one shared set of
test scenarios and aggregates average and worst-case realized costs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .formulation import Allocation, FirstStagePlan
from .instance import DemandScenario, Instance, UncertaintySet, sample_scenarios
from .solver import EQ, LE, MilpModel, SolveFailure, solve_lp


@dataclass
class OperationResult:
    """Realized second stage: allocation, drops and cost."""

    allocation: Allocation
    dropped: np.ndarray          # (M,) requests
    drop_ratio: float
    realized_cost: float         # beta * delay + v_p * drop ratio
    second_stage_objective: float

    def validate(self, inst: Instance, plan: FirstStagePlan, demand,
                 v_p: float, tol: float = 1e-6):
        lam = np.asarray(
            demand.demand if isinstance(demand, DemandScenario) else demand,
            dtype=float,
        )
        served = self.allocation.to_cloud + self.allocation.to_edge.sum(axis=1)
        scale = 1.0 + np.abs(lam)
        if np.any(np.abs(served + self.dropped - lam) > tol * scale):
            raise SolveFailure("served + dropped does not balance demand")
        if not -tol <= self.drop_ratio <= 1 + tol:
            raise SolveFailure(f"drop ratio {self.drop_ratio} outside [0, 1]")
        total_served = float(served.sum())
        if self.allocation.total_delay > inst.delay_cap * total_served + tol * (
            1 + inst.delay_cap * total_served
        ):
            raise SolveFailure("served-average delay cap violated")
        recomputed = inst.beta * self.allocation.total_delay + v_p * self.drop_ratio
        if abs(recomputed - self.realized_cost) > tol * (1 + abs(recomputed)):
            raise SolveFailure("realized cost does not match its parts")


def operation_stage(inst: Instance, plan: FirstStagePlan, demand,
                    v_p: float) -> OperationResult:
    """Second-stage LP at fixed sizing; always feasible (dropping is allowed)."""
    lam = np.asarray(
        demand.demand if isinstance(demand, DemandScenario) else demand,
        dtype=float,
    )
    m, n = inst.m_aps, inst.n_ens
    total = float(lam.sum())
    if total <= 0:
        zero = Allocation(np.zeros(m), np.zeros((m, n)), 0.0, 0.0)
        return OperationResult(zero, np.zeros(m), 0.0, 0.0, 0.0)

    model = MilpModel("operation-stage", sense="min")
    w, beta = inst.unit_demand, inst.beta
    drop_price = v_p / total
    for i in range(m):
        model.add_var(f"xc[{i}]", 0.0, obj=beta * float(inst.delay_cloud[i]))
        model.add_var(f"xd[{i}]", 0.0, obj=drop_price)
    for i in range(m):
        for j in range(n):
            model.add_var(f"xe[{i},{j}]", 0.0, obj=beta * float(inst.delay_edge[i, j]))
    for i in range(m):
        coeffs = {f"xc[{i}]": 1.0, f"xd[{i}]": 1.0}
        coeffs.update({f"xe[{i},{j}]": 1.0 for j in range(n)})
        model.add_constr(coeffs, EQ, float(lam[i]), f"flow[{i}]")
    model.add_constr(
        {f"xc[{i}]": w for i in range(m)}, LE, plan.size_cloud, "cap[cloud]"
    )
    for j in range(n):
        model.add_constr(
            {f"xe[{i},{j}]": w for i in range(m)}, LE, float(plan.size_edge[j]),
            f"cap[{j}]",
        )
    # Average-delay cap over served requests only.
    served_cap = {f"xc[{i}]": float(inst.delay_cloud[i]) - inst.delay_cap
                  for i in range(m)}
    for i in range(m):
        for j in range(n):
            served_cap[f"xe[{i},{j}]"] = float(inst.delay_edge[i, j]) - inst.delay_cap
    model.add_constr(served_cap, LE, 0.0, "delay")

    sol = solve_lp(model)
    if sol.status != "optimal":
        raise SolveFailure(f"operation stage ended with status {sol.status}")
    to_cloud = np.array([max(0.0, sol.values[f"xc[{i}]"]) for i in range(m)])
    to_edge = np.array(
        [[max(0.0, sol.values[f"xe[{i},{j}]"]) for j in range(n)] for i in range(m)]
    )
    dropped = np.array([max(0.0, sol.values[f"xd[{i}]"]) for i in range(m)])
    delay_total = float(
        (inst.delay_cloud * to_cloud).sum() + (inst.delay_edge * to_edge).sum()
    )
    served = float(to_cloud.sum() + to_edge.sum())
    alloc = Allocation(
        to_cloud, to_edge, delay_total, delay_total / served if served > 0 else 0.0
    )
    drop_ratio = float(dropped.sum()) / total
    result = OperationResult(
        allocation=alloc,
        dropped=dropped,
        drop_ratio=drop_ratio,
        realized_cost=beta * delay_total + v_p * drop_ratio,
        second_stage_objective=float(sol.objective),
    )
    result.validate(inst, plan, lam, v_p)
    return result


@dataclass
class MethodEvaluation:
    """Aggregate realized performance of one method's plan."""

    method: str
    first_stage_cost: float
    second_stage_costs: np.ndarray
    drop_ratios: np.ndarray

    @property
    def mean_second_stage(self) -> float:
        return float(self.second_stage_costs.mean())

    @property
    def worst_second_stage(self) -> float:
        return float(self.second_stage_costs.max())

    @property
    def mean_drop(self) -> float:
        return float(self.drop_ratios.mean())

    @property
    def total_average(self) -> float:
        return self.first_stage_cost + self.mean_second_stage

    @property
    def total_worst(self) -> float:
        return self.first_stage_cost + self.worst_second_stage


@dataclass
class ComparisonReport:
    """Per-method realized costs on one shared test-scenario set."""

    methods: dict[str, MethodEvaluation]
    n_test: int
    v_p: float
    seed: int
    scenarios: list[DemandScenario] = field(repr=False, default_factory=list)


def evaluate_plan(inst: Instance, plan: FirstStagePlan, scenarios, v_p: float,
                  method: str = "") -> MethodEvaluation:
    costs, drops = [], []
    for scen in scenarios:
        res = operation_stage(inst, plan, scen, v_p)
        costs.append(res.realized_cost)
        drops.append(res.drop_ratio)
    return MethodEvaluation(
        method=method,
        first_stage_cost=plan.first_stage_cost,
        second_stage_costs=np.array(costs),
        drop_ratios=np.array(drops),
    )


def evaluate_methods(inst: Instance, u: UncertaintySet,
                     plans: dict[str, FirstStagePlan], n_test: int,
                     v_p: float, seed: int) -> ComparisonReport:
    """Paired comparison: the same sampled test set is applied to every plan."""
    scenarios = sample_scenarios(u, n_test, seed)
    methods = {
        name: evaluate_plan(inst, plan, scenarios, v_p, method=name)
        for name, plan in plans.items()
    }
    return ComparisonReport(
        methods=methods, n_test=n_test, v_p=v_p, seed=seed, scenarios=scenarios
    )
