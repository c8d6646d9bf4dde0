import dataclasses

import numpy as np
import pytest

from edgeplan.aro import (
    bigm_bounds,
    build_master,
    build_subproblem,
    ccg_solve,
    extensive_form,
    initial_scenario,
    solve_master,
    solve_subproblem,
)
from edgeplan.deterministic import solve_deterministic
from edgeplan.errors import ConfigurationError
from edgeplan.formulation import build_inner_allocation_lp
from edgeplan.instance import (
    DemandScenario,
    UncertaintySet,
    enumerate_extreme_points,
    generate_instance,
    sample_scenarios,
)
from edgeplan.solver import SolveFailure, SolverError, solve_lp, solve_milp


def _uset(inst, alpha, gamma):
    return UncertaintySet.from_instance(inst, alpha, gamma)


def _covering_sizing(inst, u, split=0.5):
    """A sizing that covers the worst-case total demand (subproblem pre)."""
    need = inst.unit_demand * initial_scenario(u).total
    y_edge = np.minimum(inst.capacity, need * split * np.ones(inst.n_ens))
    y_cloud = max(0.0, need - y_edge.sum()) + 0.1 * need
    return y_cloud, y_edge


def test_initial_scenario_examples():
    u = UncertaintySet(np.array([10.0, 20.0, 30.0]), np.array([1.0, 2.0, 3.0]), 2.0)
    assert initial_scenario(u).demand.tolist() == [10.0, 22.0, 33.0]
    u = UncertaintySet(np.array([10.0, 20.0, 30.0]), np.array([1.0, 2.0, 3.0]), 1.5)
    assert initial_scenario(u).demand.tolist() == [10.0, 21.0, 33.0]
    u = UncertaintySet(np.array([10.0, 20.0, 30.0]), np.array([1.0, 2.0, 3.0]), 0.0)
    assert initial_scenario(u).demand.tolist() == [10.0, 20.0, 30.0]
    # ties break on the lowest AP index
    u = UncertaintySet(np.array([10.0, 10.0]), np.array([2.0, 2.0]), 1.0)
    assert initial_scenario(u).g.tolist() == [1.0, 0.0]


def test_master_variable_counts(small_instance):
    m, n = small_instance.m_aps, small_instance.n_ens
    u = _uset(small_instance, 0.3, 1.0)
    one = build_master(small_instance, [initial_scenario(u)])
    assert one.num_vars == n + (n + 1) + 1 + m * (n + 1)
    pool = sample_scenarios(u, 4, seed=1)
    four = build_master(small_instance, pool)
    alloc_vars = sum(
        1 for v in four.variables if v.name.startswith(("xc", "xe"))
    )
    assert alloc_vars == m * (n + 1) * 4
    with pytest.raises(ConfigurationError):
        build_master(small_instance, [])


def test_master_duplicate_scenario_harmless(small_instance):
    u = _uset(small_instance, 0.3, 1.0)
    scen = initial_scenario(u)
    _, _, lb_one = solve_master(small_instance, [scen])
    _, _, lb_dup = solve_master(small_instance, [scen, scen])
    assert lb_dup == pytest.approx(lb_one, rel=1e-9)


def test_master_lb_monotone_and_below_optimum(small_instance):
    u = _uset(small_instance, 0.4, 2.0)
    scen = initial_scenario(u)
    _, _, lb1 = solve_master(small_instance, [scen])
    more = [scen] + [v for v in enumerate_extreme_points(u)[:3]]
    _, _, lb2 = solve_master(small_instance, more)
    assert lb2 >= lb1 - 1e-9
    full = ccg_solve(small_instance, u)
    assert lb1 <= full.objective + 1e-6 * (1 + abs(full.objective))


def test_master_gamma_zero_equals_deterministic(small_instance):
    u = _uset(small_instance, 0.3, 0.0)
    _, _, lb = solve_master(small_instance, [initial_scenario(u)])
    _, _, det = solve_deterministic(small_instance, small_instance.forecast)
    assert lb == pytest.approx(det, rel=1e-9)


def test_subproblem_binary_count(small_instance):
    m, n = small_instance.m_aps, small_instance.n_ens
    u = _uset(small_instance, 0.3, 1.0)
    y_cloud, y_edge = _covering_sizing(small_instance, u)
    model = build_subproblem(small_instance, u, y_cloud, y_edge)
    assert model.num_binaries == m + m * n + n + 2


def test_subproblem_gamma_zero_equals_inner_lp(small_instance):
    u = _uset(small_instance, 0.3, 0.0)
    y_cloud, y_edge = _covering_sizing(small_instance, u)
    sub = solve_subproblem(small_instance, u, y_cloud, y_edge)
    model, _ = build_inner_allocation_lp(
        small_instance, y_cloud, y_edge, small_instance.forecast
    )
    lp = solve_lp(model)
    assert sub.objective == pytest.approx(lp.objective, rel=1e-6)
    assert np.allclose(sub.worst_demand.demand, small_instance.forecast)


def test_subproblem_matches_vertex_enumeration():
    from edgeplan.errors import RobustInfeasibleError

    compared = 0
    for seed in range(8):
        inst = generate_instance(10, 2, 3, 2, seed=300 + seed)
        u = _uset(inst, 0.4, 2.0)
        y_cloud, y_edge = _covering_sizing(inst, u, split=0.8)
        vertex_values, any_infeasible = [], False
        for vertex in enumerate_extreme_points(u):
            model, _ = build_inner_allocation_lp(inst, y_cloud, y_edge, vertex)
            sol = solve_lp(model)
            if sol.status == "optimal":
                vertex_values.append(sol.objective)
            else:
                any_infeasible = True
        try:
            sub = solve_subproblem(inst, u, y_cloud, y_edge)
        except RobustInfeasibleError:
            # raised only when some demand in the set has no recourse
            assert any_infeasible
            continue
        if any_infeasible:
            # with partial infeasibility the worst case may sit between
            # vertices of the set, so enumeration only gives a lower bound
            assert sub.objective >= max(vertex_values) - 1e-6
            continue
        assert sub.objective == pytest.approx(max(vertex_values), rel=1e-6)
        compared += 1
    assert compared >= 5


def test_subproblem_dominates_any_member(small_instance):
    u = _uset(small_instance, 0.4, 2.0)
    y_cloud, y_edge = _covering_sizing(small_instance, u)
    sub = solve_subproblem(small_instance, u, y_cloud, y_edge)
    for scen in sample_scenarios(u, 10, seed=4):
        model, _ = build_inner_allocation_lp(
            small_instance, y_cloud, y_edge, scen
        )
        lp = solve_lp(model)
        if lp.status == "optimal":
            assert sub.objective >= lp.objective - 1e-6 * (1 + abs(lp.objective))


def test_subproblem_solution_structure(base_instance):
    u = _uset(base_instance, 0.3, 10.0)
    y_cloud, y_edge = _covering_sizing(base_instance, u)
    sub = solve_subproblem(base_instance, u, y_cloud, y_edge)
    assert u.contains(sub.worst_demand)
    g = np.abs(sub.worst_demand.g)
    fractional = (g > 1e-6) & (np.abs(g - 1) > 1e-6)
    assert fractional.sum() <= 1
    assert sub.complementarity_max <= 1e-6
    # flow balance of the certified allocation
    served = sub.allocation.to_cloud + sub.allocation.to_edge.sum(axis=1)
    assert np.allclose(served, sub.worst_demand.demand, rtol=1e-6, atol=1e-4)


def test_subproblem_greedy_routing_oracle():
    # Ample capacity, no uncertainty, slack delay cap: every AP rides its
    # fastest node, so Q is beta times the demand-weighted minimum delay.
    inst = generate_instance(12, 2, 4, 3, seed=77)
    inst = dataclasses.replace(inst, delay_cap=100.0)
    u = _uset(inst, 0.3, 0.0)
    y_cloud = inst.unit_demand * inst.forecast.sum()
    y_edge = np.full(inst.n_ens, inst.unit_demand * inst.forecast.sum())
    sub = solve_subproblem(inst, u, y_cloud, y_edge)
    best_delay = np.minimum(inst.delay_edge.min(axis=1), inst.delay_cloud)
    expected = inst.beta * float((inst.forecast * best_delay).sum())
    assert sub.objective == pytest.approx(expected, rel=1e-9)


def test_bigm_bounds_fields(base_instance):
    u = _uset(base_instance, 0.3, 10.0)
    y_cloud, y_edge = _covering_sizing(base_instance, u)
    bm = bigm_bounds(base_instance, u, y_cloud, y_edge)
    lam_max = u.forecast + u.deviation
    assert np.allclose(bm.x_cloud, lam_max)
    assert np.allclose(bm.x_edge, lam_max[:, None])
    assert bm.slack_cloud == y_cloud
    assert np.allclose(bm.slack_edge, y_edge)
    assert bm.slack_delay == pytest.approx(base_instance.delay_cap * lam_max.sum())
    d_max = max(base_instance.delay_cloud.max(), base_instance.delay_edge.max())
    assert bm.dual_cap == pytest.approx(
        10 * base_instance.beta * d_max
        + 10 * base_instance.delay_cap * base_instance.beta
    )


def test_dual_cap_escalation_recovers(small_instance):
    u = _uset(small_instance, 0.3, 1.0)
    y_cloud, y_edge = _covering_sizing(small_instance, u)
    reference = solve_subproblem(small_instance, u, y_cloud, y_edge)
    starved = solve_subproblem(
        small_instance, u, y_cloud, y_edge,
        dual_cap=reference.dual_cap / 50.0,
    )
    assert starved.objective == pytest.approx(reference.objective, rel=1e-6)
    assert starved.dual_cap > reference.dual_cap / 50.0


def test_dual_cap_exhaustion_raises(tiny_instance):
    # Tight edge capacity forces positive capacity duals, so a microscopic
    # cap cannot certify anything even after three escalations.  The sizing
    # is recourse-feasible at the forecast (7 edge + 3 cloud averages 27.5ms).
    u = _uset(tiny_instance, 0.3, 1.0)
    with pytest.raises(SolveFailure, match="dual big-M cap"):
        solve_subproblem(tiny_instance, u, 10.0, np.array([7.0]), dual_cap=1e-15)


def test_ccg_gamma_zero_single_iteration(small_instance):
    u = _uset(small_instance, 0.3, 0.0)
    res = ccg_solve(small_instance, u)
    _, _, det = solve_deterministic(small_instance, small_instance.forecast)
    assert res.trace.status == "converged"
    assert len(res.trace.iterations) == 1
    assert res.objective == pytest.approx(det, rel=1e-6)


def test_ccg_matches_extensive_form():
    rng = np.random.default_rng(7)
    checked = 0
    for _ in range(8):
        m = int(rng.integers(3, 5))
        n = int(rng.integers(2, 4))
        seed = int(rng.integers(0, 10**6))
        inst = generate_instance(12, 2, m, n, seed=seed)
        gamma = int(rng.integers(0, m + 1))
        u = _uset(inst, 0.3, gamma)
        ext = extensive_form(inst, u)
        res = ccg_solve(inst, u)
        assert res.objective == pytest.approx(ext, rel=1e-6)
        checked += 1
    assert checked == 8


def test_ccg_trace_invariants(base_instance):
    u = _uset(base_instance, 0.3, 10.0)
    res = ccg_solve(base_instance, u, eps=1e-4)
    trace = res.trace
    assert trace.status == "converged"
    assert trace.final_gap <= 1e-4
    lbs = [r.lb for r in trace.iterations]
    ubs = [r.ub for r in trace.iterations]
    assert all(b >= a - 1e-9 for a, b in zip(lbs, lbs[1:]))
    assert all(b <= a + 1e-9 for a, b in zip(ubs, ubs[1:]))
    assert all(lb <= ub + 1e-6 * (1 + abs(ub)) for lb, ub in zip(lbs, ubs))
    for rec in trace.iterations:
        assert u.contains(rec.scenario)
        g = np.abs(rec.scenario.g)
        assert ((g > 1e-6) & (np.abs(g - 1) > 1e-6)).sum() <= 1
    # robust capacity cover at the returned plan
    need = base_instance.unit_demand * initial_scenario(u).total
    total = res.plan.size_cloud + res.plan.size_edge.sum()
    assert total >= need - 1e-6 * (1 + need)


def test_extensive_form_gamma_zero(small_instance):
    u = _uset(small_instance, 0.3, 0.0)
    _, _, det = solve_deterministic(small_instance, small_instance.forecast)
    assert extensive_form(small_instance, u) == pytest.approx(det, rel=1e-9)


def test_ccg_max_iter_status(small_instance):
    u = _uset(small_instance, 0.4, 2.0)
    res = ccg_solve(small_instance, u, eps=1e-12, max_iter=1)
    assert res.trace.status in ("converged", "max_iter")
    assert res.plan is not None
