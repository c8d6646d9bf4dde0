"""Single-stage robust counterpart as one MILP.

All decisions, including the workload allocation, are fixed before the
demand is revealed.  The covering constraints use the per-AP worst demand
and the average-delay cap is robustified through an embedded LP duality
block: the right-hand side equals the delay cap times the minimum total
demand over the uncertainty set, which the strong-duality linking equality
pins at every feasible point.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .errors import ModelInfeasibleError
from .formulation import (
    add_allocation_block,
    add_first_stage,
    allocation_block_names,
    extract_allocation,
    extract_plan,
)
from .instance import Instance, UncertaintySet
from .solver import EQ, GE, LE, MilpModel, SolveFailure, solve_milp


@dataclass
class RoDualBlock:
    """Duals of the min-total-demand LP plus the uncertainty variables."""

    u: float
    v: np.ndarray
    gamma: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    g: np.ndarray
    t: np.ndarray

    def validate(self, uset: UncertaintySet, tol: float = 1e-6):
        if min(self.u, self.v.min(), self.gamma.min(), self.mu.min(),
               self.sigma.min()) < -tol:
            raise SolveFailure("negative dual in the robust delay block")
        if np.any(self.t > 1 + tol) or self.t.sum() > uset.gamma + tol:
            raise SolveFailure("uncertainty block violates the budget")
        if np.any(np.abs(self.g) > self.t + tol):
            raise SolveFailure("|g| exceeds t in the uncertainty block")


def worst_covering_demand(u: UncertaintySet) -> np.ndarray:
    """Per-AP worst demand: each coordinate maxed independently over the set."""
    return u.forecast + min(1.0, u.gamma) * u.deviation


def build_static_ro(inst: Instance, u: UncertaintySet) -> MilpModel:
    """The full dualized robust MILP over (z, y, x) and the delay dual block."""
    model = MilpModel("static-ro", sense="min")
    add_first_stage(model, inst)
    block = add_allocation_block(
        model, inst, worst_covering_demand(u), cover=GE, delay_rhs=math.inf,
        obj_weight=inst.beta,
    )
    m = inst.m_aps
    dev = u.deviation
    model.add_var("u_dual", 0.0)
    for i in range(m):
        model.add_var(f"v[{i}]", 0.0)
        model.add_var(f"gam[{i}]", 0.0)
        model.add_var(f"mu[{i}]", 0.0)
        model.add_var(f"sig[{i}]", 0.0)
        model.add_var(f"g[{i}]", -1.0, 1.0)
        model.add_var(f"t[{i}]", 0.0, 1.0)

    # Robust delay cap: RHS shrinks by the delay cap times the worst total
    # demand shortfall, expressed through the dual objective.
    delay = dict(block.delay_coeffs)
    delay["u_dual"] = inst.delay_cap * u.gamma
    for i in range(m):
        delay[f"mu[{i}]"] = inst.delay_cap
        delay[f"sig[{i}]"] = inst.delay_cap
    model.add_constr(delay, LE, inst.delay_cap * float(u.forecast.sum()), "delay")

    # Strong duality link: forces both the (g, t) block and the dual block
    # onto their respective optima of the min-total-demand LP.
    link = {"u_dual": u.gamma}
    for i in range(m):
        link[f"mu[{i}]"] = 1.0
        link[f"sig[{i}]"] = 1.0
        link[f"g[{i}]"] = float(dev[i])
    model.add_constr(link, EQ, 0.0, "duality_link")

    model.add_constr({f"t[{i}]": 1.0 for i in range(m)}, LE, u.gamma, "t_budget")
    for i in range(m):
        model.add_constr({f"g[{i}]": 1.0, f"t[{i}]": -1.0}, LE, 0.0, f"g_le_t[{i}]")
        model.add_constr({f"g[{i}]": -1.0, f"t[{i}]": -1.0}, LE, 0.0, f"g_ge_mt[{i}]")
        model.add_constr(
            {f"v[{i}]": 1.0, f"gam[{i}]": -1.0, f"mu[{i}]": 1.0, f"sig[{i}]": -1.0},
            LE, -float(dev[i]), f"dual_g[{i}]",
        )
        model.add_constr(
            {"u_dual": 1.0, f"v[{i}]": -1.0, f"gam[{i}]": -1.0}, GE, 0.0,
            f"dual_t[{i}]",
        )
    return model


def extract_dual_block(inst: Instance, values: dict[str, float]) -> RoDualBlock:
    m = inst.m_aps
    return RoDualBlock(
        u=float(values["u_dual"]),
        v=np.array([values[f"v[{i}]"] for i in range(m)]),
        gamma=np.array([values[f"gam[{i}]"] for i in range(m)]),
        mu=np.array([values[f"mu[{i}]"] for i in range(m)]),
        sigma=np.array([values[f"sig[{i}]"] for i in range(m)]),
        g=np.array([values[f"g[{i}]"] for i in range(m)]),
        t=np.array([values[f"t[{i}]"] for i in range(m)]),
    )


def solve_static_ro(inst: Instance, u: UncertaintySet, gap_tol: float = 1e-9):
    """Robust plan, its static allocation and the worst-case objective."""
    model = build_static_ro(inst, u)
    sol = solve_milp(model, gap_tol=gap_tol)
    if sol.status != "optimal":
        if sol.status == "infeasible":
            binding = _diagnose(inst, u)
            raise ModelInfeasibleError(
                f"static robust model infeasible (binding: {binding})",
                binding=binding,
            )
        raise SolveFailure(f"static RO solve ended with status {sol.status}")
    plan = extract_plan(inst, sol.values)
    plan.validate(inst)
    worst = worst_covering_demand(u)
    alloc = extract_allocation(inst, sol.values, allocation_block_names(inst), worst)
    alloc.validate(inst, plan, worst)
    extract_dual_block(inst, sol.values).validate(u)
    recomputed = plan.first_stage_cost + inst.beta * alloc.total_delay
    if abs(recomputed - sol.objective) > 1e-6 * (1 + abs(sol.objective)):
        raise SolveFailure(
            f"objective mismatch: {sol.objective} vs recomputed {recomputed}"
        )
    return plan, alloc, sol.objective


def _diagnose(inst: Instance, u: UncertaintySet) -> str:
    relaxed = dataclasses.replace(inst, delay_cap=1e9)
    if solve_milp(build_static_ro(relaxed, u)).status == "optimal":
        return "delay_cap"
    relaxed = dataclasses.replace(inst, budget=1e12)
    if solve_milp(build_static_ro(relaxed, u)).status == "optimal":
        return "budget"
    relaxed = dataclasses.replace(inst, delay_cap=1e9, budget=1e12)
    if solve_milp(build_static_ro(relaxed, u)).status == "optimal":
        return "budget+delay_cap"
    return "placement"
