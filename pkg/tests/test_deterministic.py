import dataclasses

import numpy as np
import pytest

from edgeplan.deterministic import build_deterministic, solve_deterministic
from edgeplan.errors import ModelInfeasibleError
from edgeplan.instance import Instance
from edgeplan.solver import solve_lp

from conftest import brute_force_milp


def test_variable_count(base_instance):
    m, n = base_instance.m_aps, base_instance.n_ens
    model = build_deterministic(base_instance, base_instance.forecast)
    assert model.num_vars == n + (n + 1) + m * (n + 1)
    assert model.num_binaries == n


def test_hand_instance_objective(tiny_instance):
    # z=1 forced by r_min; edge serving costs (0.05 + 0.01*5) per request for
    # 10 requests plus h = 0.3, total 1.3; cloud would cost 0.83/request.
    plan, alloc, obj = solve_deterministic(tiny_instance, tiny_instance.forecast)
    assert obj == pytest.approx(1.3)
    assert plan.placement.tolist() == [1]
    assert plan.size_edge[0] == pytest.approx(10.0)
    assert alloc.to_edge[0, 0] == pytest.approx(10.0)
    assert alloc.avg_delay == pytest.approx(5.0)


def test_matches_binary_enumeration(small_instance):
    model = build_deterministic(small_instance, small_instance.forecast)
    expected = brute_force_milp(model)
    _, _, obj = solve_deterministic(small_instance, small_instance.forecast)
    assert obj == pytest.approx(expected, rel=1e-9)


def test_negligible_delay_weight_sends_traffic_to_cheapest(tiny_instance):
    # With the delay weight off and no placement floor, the cloud (0.03/unit,
    # no fixed cost) beats the EN (0.05/unit + 0.3 fixed).
    inst = dataclasses.replace(
        tiny_instance, beta=1e-15, r_min=0, delay_cap=100.0
    )
    plan, alloc, _ = solve_deterministic(inst, inst.forecast)
    assert plan.placement.tolist() == [0]
    assert alloc.to_cloud[0] == pytest.approx(10.0)
    assert plan.size_cloud == pytest.approx(10.0)


def test_zero_demand_costs_cheapest_placement(small_instance):
    plan, alloc, obj = solve_deterministic(
        small_instance, np.zeros(small_instance.m_aps)
    )
    h = np.sort(small_instance.placement_cost)
    assert obj == pytest.approx(h[: small_instance.r_min].sum())
    assert alloc.total_delay == pytest.approx(0.0)


def test_objective_monotone_in_beta(base_instance):
    objs = []
    for beta0 in (0.01, 0.02, 0.05):
        inst = base_instance.with_beta0(beta0)
        objs.append(solve_deterministic(inst, inst.forecast)[2])
    assert objs[0] <= objs[1] + 1e-9 <= objs[2] + 2e-9


def test_cost_breakdown_and_invariants(base_instance):
    plan, alloc, obj = solve_deterministic(base_instance, base_instance.forecast)
    plan.validate(base_instance)
    alloc.validate(base_instance, plan, base_instance.forecast)
    recomputed = (plan.cost_placement + plan.cost_storage + plan.cost_edge
                  + plan.cost_cloud + base_instance.beta * alloc.total_delay)
    assert obj == pytest.approx(recomputed, abs=1e-6 * (1 + abs(obj)))
    assert alloc.avg_delay <= base_instance.delay_cap + 1e-6


def test_capacity_duals_tight(small_instance):
    # At the optimal placement, positive capacity duals imply tight rows.
    inst = small_instance
    plan, _, _ = solve_deterministic(inst, inst.forecast)
    model = build_deterministic(inst, inst.forecast)
    for j, zj in enumerate(plan.placement):
        var = model.variables[model.var_index(f"z[{j}]")]
        var.lb = var.ub = float(zj)
    sol = solve_lp(model)
    assert sol.status == "optimal"
    w = inst.unit_demand
    cloud_slack = sol["y0"] - w * sum(
        sol[f"xc[{i}]"] for i in range(inst.m_aps)
    )
    if abs(sol.duals["cap[cloud]"]) > 1e-9:
        assert abs(cloud_slack) <= 1e-6
    for j in range(inst.n_ens):
        slack = sol[f"y[{j}]"] - w * sum(
            sol[f"xe[{i},{j}]"] for i in range(inst.m_aps)
        )
        if abs(sol.duals[f"cap[{j}]"]) > 1e-9:
            assert abs(slack) <= 1e-6


def test_infeasible_budget_diagnosed(tiny_instance):
    inst = dataclasses.replace(tiny_instance, budget=0.05)
    with pytest.raises(ModelInfeasibleError) as err:
        solve_deterministic(inst, inst.forecast)
    assert err.value.binding == "budget"


def test_infeasible_delay_diagnosed():
    # Cloud-only capacity cannot meet a 10 ms average when the cloud is 80 ms.
    inst = Instance(
        m_aps=1, n_ens=1, delay_cloud=[80.0], delay_edge=[[6.0]],
        capacity=[1.0], price_cloud=0.03, price_edge=[0.05],
        install_cost=[0.2], storage_cost=[0.1], initial_placement=[0],
        budget=100.0, r_min=0, delay_cap=10.0, unit_demand=1.0,
        beta=0.001, forecast=[10.0],
    )
    with pytest.raises(ModelInfeasibleError) as err:
        solve_deterministic(inst, inst.forecast)
    assert err.value.binding == "delay_cap"
