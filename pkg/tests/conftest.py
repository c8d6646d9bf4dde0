import itertools

import numpy as np
import pytest

from edgeplan.instance import Instance, generate_instance
from edgeplan.solver import solve_lp


@pytest.fixture
def tiny_instance():
    """One AP, one EN: optimal plan computable by hand."""
    return Instance(
        m_aps=1, n_ens=1,
        delay_cloud=[80.0], delay_edge=[[5.0]], capacity=[100.0],
        price_cloud=0.03, price_edge=[0.05],
        install_cost=[0.2], storage_cost=[0.1], initial_placement=[0],
        budget=100.0, r_min=1, delay_cap=30.0, unit_demand=1.0,
        beta=0.01, forecast=[10.0],
    )


@pytest.fixture(scope="session")
def base_instance():
    """Paper-scale base case: 20 APs, 5 ENs on a 100-node topology."""
    return generate_instance(100, 2, 20, 5, seed=1)


@pytest.fixture(scope="session")
def small_instance():
    return generate_instance(12, 2, 3, 2, seed=5)


def brute_force_milp(model):
    """Enumerate every binary assignment, solve the remaining LP, take the best.

    Independent oracle for solve_milp; only usable for small binary counts.
    """
    binaries = [v.name for v in model.variables if v.integer]
    saved = {v.name: (v.lb, v.ub) for v in model.variables}
    best = None
    try:
        for assignment in itertools.product(*(range(2) for _ in binaries)):
            for name, value in zip(binaries, assignment):
                var = model.variables[model.var_index(name)]
                lo, hi = saved[name]
                if not lo <= value <= hi:
                    break
                var.lb = var.ub = float(value)
            else:
                sol = solve_lp(model)
                if sol.status == "optimal":
                    if best is None:
                        best = sol.objective
                    elif model.sense == "min":
                        best = min(best, sol.objective)
                    else:
                        best = max(best, sol.objective)
    finally:
        for name, (lo, hi) in saved.items():
            var = model.variables[model.var_index(name)]
            var.lb, var.ub = lo, hi
    return best


def random_milp(rng, n_bin, n_cont=3, n_rows=6):
    """A bounded random model mixing binaries and box-bounded continuous vars.

    Constraints are anchored on a random feasible point so most instances
    admit a solution; infeasibility has its own dedicated tests.
    """
    from edgeplan.solver import EQ, GE, LE, MilpModel

    model = MilpModel("random", sense="min" if rng.random() < 0.5 else "max")
    names, anchor = [], {}
    for b in range(n_bin):
        names.append(model.add_var(f"b{b}", 0.0, 1.0, integer=True))
        anchor[f"b{b}"] = float(rng.integers(0, 2))
    for c in range(n_cont):
        ub = float(rng.uniform(1, 5))
        names.append(model.add_var(f"c{c}", 0.0, ub))
        anchor[f"c{c}"] = float(rng.uniform(0, ub))
    model.add_objective({name: float(rng.uniform(-5, 5)) for name in names})
    for k in range(n_rows):
        coeffs = {
            name: float(rng.uniform(-3, 3))
            for name in names if rng.random() < 0.7
        }
        if not coeffs:
            continue
        at_anchor = sum(coef * anchor[v] for v, coef in coeffs.items())
        relation = (LE, GE, EQ)[int(rng.integers(0, 3)) if k % 3 == 0 else
                                int(rng.integers(0, 2))]
        slack = float(rng.uniform(0, 2))
        rhs = {LE: at_anchor + slack, GE: at_anchor - slack, EQ: at_anchor}[relation]
        model.add_constr(coeffs, relation, rhs, f"r{k}")
    return model
