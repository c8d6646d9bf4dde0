"""Shared model blocks and first-stage/allocation result types.

Every planning model in the toolkit (deterministic, static robust, adaptive
robust master / extensive form, stochastic) is assembled from the same two
blocks: the first-stage placement/sizing block over (z, y) and a workload
allocation block over (x_cloud, x_edge) tied to one demand vector.  Keeping
them in one place guarantees the formulations share constraints exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .instance import DemandScenario, Instance
from .solver import EQ, GE, LE, MilpModel, SolveFailure

PLAN_TOL = 1e-6


def demand_vector(demand) -> np.ndarray:
    if isinstance(demand, DemandScenario):
        return np.asarray(demand.demand, dtype=float)
    return np.asarray(demand, dtype=float)


@dataclass
class FirstStagePlan:
    """Here-and-now decisions: placement z, purchased capacity y, cost split."""

    placement: np.ndarray      # (N,) binary
    size_cloud: float
    size_edge: np.ndarray      # (N,)
    cost_placement: float
    cost_storage: float
    cost_edge: float
    cost_cloud: float

    @property
    def first_stage_cost(self) -> float:
        return (self.cost_placement + self.cost_storage
                + self.cost_edge + self.cost_cloud)

    def validate(self, inst: Instance, tol: float = PLAN_TOL):
        z = self.placement
        if not set(np.unique(z)) <= {0, 1}:
            raise SolveFailure("placement is not binary")
        if int(z.sum()) < inst.r_min:
            raise SolveFailure(f"placement count {int(z.sum())} below r_min")
        if self.size_cloud < -tol or np.any(self.size_edge < -tol):
            raise SolveFailure("negative purchased capacity")
        cap = z * inst.capacity
        if np.any(self.size_edge > cap + tol * (1 + inst.capacity)):
            raise SolveFailure("purchased capacity exceeds z-linked capacity")
        if self.first_stage_cost > inst.budget + tol * (1 + inst.budget):
            raise SolveFailure("first-stage cost exceeds the budget")


@dataclass
class Allocation:
    """Wait-and-see workload split across the cloud and the ENs."""

    to_cloud: np.ndarray   # (M,)
    to_edge: np.ndarray    # (M, N)
    total_delay: float     # request*ms
    avg_delay: float       # ms

    def validate(self, inst: Instance, plan: FirstStagePlan, demand,
                 tol: float = PLAN_TOL):
        lam = demand_vector(demand)
        scale = 1.0 + np.abs(lam)
        if np.any(self.to_cloud < -tol * scale) or np.any(
            self.to_edge < -tol * scale[:, None]
        ):
            raise SolveFailure("negative allocation")
        served = self.to_cloud + self.to_edge.sum(axis=1)
        if np.any(np.abs(served - lam) > tol * scale):
            raise SolveFailure("allocation does not balance demand")
        if inst.unit_demand * self.to_cloud.sum() > plan.size_cloud + tol * (
            1 + plan.size_cloud
        ):
            raise SolveFailure("cloud capacity exceeded")
        edge_load = inst.unit_demand * self.to_edge.sum(axis=0)
        if np.any(edge_load > plan.size_edge + tol * (1 + plan.size_edge)):
            raise SolveFailure("edge capacity exceeded")


@dataclass
class AllocationBlock:
    """Variable names of one allocation copy inside a model."""

    tag: str
    x_cloud: list[str]
    x_edge: list[list[str]]
    delay_coeffs: dict[str, float]


def allocation_block_names(inst: Instance, tag: str = "") -> AllocationBlock:
    """Reconstruct a block handle from the naming convention alone."""
    m, n = inst.m_aps, inst.n_ens
    return AllocationBlock(
        tag=tag,
        x_cloud=[f"xc{tag}[{i}]" for i in range(m)],
        x_edge=[[f"xe{tag}[{i},{j}]" for j in range(n)] for i in range(m)],
        delay_coeffs={},
    )


def add_first_stage(model: MilpModel, inst: Instance, in_objective: bool = True):
    """Placement/sizing variables with budget, reliability and linking rows."""
    h = inst.placement_cost
    for j in range(inst.n_ens):
        model.add_var(f"z[{j}]", 0.0, 1.0, integer=True,
                      obj=h[j] if in_objective else 0.0)
    model.add_var("y0", 0.0, obj=inst.price_cloud if in_objective else 0.0)
    for j in range(inst.n_ens):
        model.add_var(f"y[{j}]", 0.0,
                      obj=inst.price_edge[j] if in_objective else 0.0)
        model.add_constr(
            {f"y[{j}]": 1.0, f"z[{j}]": -float(inst.capacity[j])}, LE, 0.0,
            f"link[{j}]",
        )
    budget_coeffs = {f"z[{j}]": float(h[j]) for j in range(inst.n_ens)}
    budget_coeffs["y0"] = inst.price_cloud
    for j in range(inst.n_ens):
        budget_coeffs[f"y[{j}]"] = float(inst.price_edge[j])
    model.add_constr(budget_coeffs, LE, inst.budget, "budget")
    model.add_constr(
        {f"z[{j}]": 1.0 for j in range(inst.n_ens)}, GE, float(inst.r_min), "r_min"
    )


def add_allocation_block(model: MilpModel, inst: Instance, demand, tag: str = "",
                         cover: str = EQ, delay_rhs: float | None = None,
                         obj_weight: float = 0.0) -> AllocationBlock:
    """One workload allocation copy tied to `demand`.

    `cover` selects the flow-balance relation (equality for nominal models,
    ">=" for the static robust covering form).  The average-delay cap is
    written in its linearized form with RHS `delay_rhs` (defaults to the cap
    times the block's total demand; pass inf to skip the row and add a custom
    one).  With `obj_weight` > 0 the block's delay contributes
    obj_weight * total delay to the objective.
    """
    lam = demand_vector(demand)
    m, n = inst.m_aps, inst.n_ens
    if delay_rhs is None:
        delay_rhs = inst.delay_cap * float(lam.sum())
    x_cloud = [model.add_var(f"xc{tag}[{i}]", 0.0) for i in range(m)]
    x_edge = [
        [model.add_var(f"xe{tag}[{i},{j}]", 0.0) for j in range(n)] for i in range(m)
    ]
    for i in range(m):
        coeffs = {x_cloud[i]: 1.0}
        coeffs.update({x_edge[i][j]: 1.0 for j in range(n)})
        model.add_constr(coeffs, cover, float(lam[i]), f"flow{tag}[{i}]")
    w = inst.unit_demand
    cloud_cap = {x_cloud[i]: w for i in range(m)}
    cloud_cap["y0"] = -1.0
    model.add_constr(cloud_cap, LE, 0.0, f"cap{tag}[cloud]")
    for j in range(n):
        edge_cap = {x_edge[i][j]: w for i in range(m)}
        edge_cap[f"y[{j}]"] = -1.0
        model.add_constr(edge_cap, LE, 0.0, f"cap{tag}[{j}]")
    delay_coeffs = {x_cloud[i]: float(inst.delay_cloud[i]) for i in range(m)}
    for i in range(m):
        for j in range(n):
            delay_coeffs[x_edge[i][j]] = float(inst.delay_edge[i, j])
    if math.isfinite(delay_rhs):
        model.add_constr(dict(delay_coeffs), LE, float(delay_rhs), f"delay{tag}")
    if obj_weight:
        model.add_objective({v: obj_weight * c for v, c in delay_coeffs.items()})
    return AllocationBlock(tag, x_cloud, x_edge, delay_coeffs)


def extract_plan(inst: Instance, values: dict[str, float]) -> FirstStagePlan:
    z = np.array([round(values[f"z[{j}]"]) for j in range(inst.n_ens)], dtype=int)
    y0 = max(0.0, values["y0"])
    y = np.maximum(0.0, np.array([values[f"y[{j}]"] for j in range(inst.n_ens)]))
    return FirstStagePlan(
        placement=z,
        size_cloud=y0,
        size_edge=y,
        cost_placement=float(
            (inst.install_cost * (1 - inst.initial_placement) * z).sum()
        ),
        cost_storage=float((inst.storage_cost * z).sum()),
        cost_edge=float((inst.price_edge * y).sum()),
        cost_cloud=float(inst.price_cloud * y0),
    )


def extract_allocation(inst: Instance, values: dict[str, float],
                       block: AllocationBlock, demand) -> Allocation:
    lam = demand_vector(demand)
    to_cloud = np.array([max(0.0, values[name]) for name in block.x_cloud])
    to_edge = np.array(
        [[max(0.0, values[name]) for name in row] for row in block.x_edge]
    )
    total = float(
        (inst.delay_cloud * to_cloud).sum() + (inst.delay_edge * to_edge).sum()
    )
    served = float(lam.sum())
    return Allocation(
        to_cloud=to_cloud,
        to_edge=to_edge,
        total_delay=total,
        avg_delay=total / served if served > 0 else 0.0,
    )


def build_inner_allocation_lp(inst: Instance, y_cloud: float, y_edge, demand) -> tuple[MilpModel, AllocationBlock]:
    """The second-stage allocation LP at fixed purchased capacity.

    Minimizes beta times the total delay over allocations that meet the
    demand exactly, respect the purchased capacities and the average-delay
    cap.  This is the inner problem of the adaptive robust recourse.
    """
    lam = demand_vector(demand)
    model = MilpModel("inner-allocation", sense="min")
    model.add_var("y0", y_cloud, y_cloud)
    for j in range(inst.n_ens):
        model.add_var(f"y[{j}]", float(y_edge[j]), float(y_edge[j]))
    block = add_allocation_block(model, inst, lam, obj_weight=inst.beta)
    return model, block
