"""Deterministic joint placement, sizing and workload allocation MILP."""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import ModelInfeasibleError
from .formulation import (
    add_allocation_block,
    add_first_stage,
    allocation_block_names,
    demand_vector,
    extract_allocation,
    extract_plan,
)
from .instance import Instance
from .solver import MilpModel, SolveFailure, solve_milp


def build_deterministic(inst: Instance, demand) -> MilpModel:
    """One MILP: first-stage (z, y) plus a single allocation tied to `demand`."""
    lam = demand_vector(demand)
    if np.any(lam < 0):
        raise ValueError("demand must be nonnegative")
    model = MilpModel("deterministic", sense="min")
    add_first_stage(model, inst)
    add_allocation_block(model, inst, lam, obj_weight=inst.beta)
    return model


def _diagnose_infeasibility(inst: Instance, lam: np.ndarray) -> str:
    """Name the constraint class that blocks feasibility."""
    relaxed_delay = dataclasses.replace(inst, delay_cap=1e9)
    if solve_milp(build_deterministic(relaxed_delay, lam)).status == "optimal":
        return "delay_cap"
    relaxed_budget = dataclasses.replace(inst, budget=1e12)
    if solve_milp(build_deterministic(relaxed_budget, lam)).status == "optimal":
        return "budget"
    both = dataclasses.replace(inst, delay_cap=1e9, budget=1e12)
    if solve_milp(build_deterministic(both, lam)).status == "optimal":
        return "budget+delay_cap"
    return "placement"


def solve_deterministic(inst: Instance, demand, gap_tol: float = 1e-9):
    """Optimal plan, allocation and objective for one demand realization."""
    lam = demand_vector(demand)
    model = build_deterministic(inst, lam)
    sol = solve_milp(model, gap_tol=gap_tol)
    if sol.status != "optimal":
        if sol.status == "infeasible":
            binding = _diagnose_infeasibility(inst, lam)
            raise ModelInfeasibleError(
                f"deterministic model infeasible (binding: {binding})",
                binding=binding,
            )
        raise SolveFailure(f"deterministic solve ended with status {sol.status}")
    plan = extract_plan(inst, sol.values)
    plan.validate(inst)
    alloc = extract_allocation(inst, sol.values, allocation_block_names(inst), lam)
    alloc.validate(inst, plan, lam)
    recomputed = plan.first_stage_cost + inst.beta * alloc.total_delay
    if abs(recomputed - sol.objective) > 1e-6 * (1 + abs(sol.objective)):
        raise SolveFailure(
            f"objective mismatch: {sol.objective} vs recomputed {recomputed}"
        )
    return plan, alloc, sol.objective
