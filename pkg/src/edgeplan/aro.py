"""Two-stage adaptive robust solver.

The model keeps placement and sizing as here-and-now decisions and treats
workload allocation as recourse.  It is solved by column-and-constraint
generation: a master problem over a growing pool of extreme demand scenarios
yields lower bounds, and a worst-case subproblem, linearized through the KKT
conditions of the inner allocation LP with big-M switches, yields upper
bounds and the next scenario.  An extensive-form model over all vertices of
the uncertainty set doubles as an exact oracle at small sizes.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    ModelInfeasibleError,
    RobustInfeasibleError,
)
from .formulation import (
    Allocation,
    add_allocation_block,
    add_first_stage,
    build_inner_allocation_lp,
    extract_allocation,
    extract_plan,
    FirstStagePlan,
)
from .instance import DemandScenario, Instance, UncertaintySet, enumerate_extreme_points
from .solver import EQ, GE, LE, MilpModel, SolveFailure, solve_lp, solve_milp

GAP_TOL_DEFAULT = 1e-9
COMPLEMENTARITY_TOL = 1e-6
VALUE_TOL = 1e-6
DUAL_CAP_ESCALATIONS = 3
DUAL_CAP_FACTOR = 10.0


def extreme_total_demand(u: UncertaintySet, sense: str = "max") -> DemandScenario:
    """The vertex of the uncertainty set with extreme total demand.

    Found analytically: sort deviations in descending order, push the
    floor(gamma) largest to their bound and the next one to the fractional
    remainder.  Ties break on the lowest AP index.
    """
    m = u.size
    order = np.lexsort((np.arange(m), -u.deviation))
    whole = int(math.floor(u.gamma + 1e-12))
    frac = u.gamma - whole
    sign = 1.0 if sense == "max" else -1.0
    g = np.zeros(m)
    g[order[:whole]] = sign
    if whole < m and frac > 1e-12:
        g[order[whole]] = sign * frac
    return DemandScenario(u.demand(g), g)


def initial_scenario(u: UncertaintySet) -> DemandScenario:
    """Seed scenario: maximum total demand, so purchased capacity covers all
    of the uncertainty set from the first master solve on."""
    return extreme_total_demand(u, "max")


@dataclass
class BigMBounds:
    """Per-pair switching constants of the subproblem linearization."""

    x_cloud: np.ndarray     # (M,) caps x_{i,0}; equals the per-AP max demand
    x_edge: np.ndarray      # (M, N) caps x_{i,j}
    slack_cloud: float      # caps the cloud capacity slack: y0
    slack_edge: np.ndarray  # (N,) caps the EN capacity slack: y_j
    slack_delay: float      # caps the delay-cap slack
    dual_cap: float         # caps every dual-side quantity


def bigm_bounds(inst: Instance, u: UncertaintySet, y_cloud: float, y_edge,
                dual_cap: float | None = None) -> BigMBounds:
    lam_max = u.forecast + u.deviation
    max_delay = max(float(inst.delay_cloud.max()), float(inst.delay_edge.max()))
    if dual_cap is None:
        dual_cap = 10.0 * inst.beta * max_delay + 10.0 * inst.delay_cap * inst.beta
    return BigMBounds(
        x_cloud=lam_max.copy(),
        x_edge=np.repeat(lam_max[:, None], inst.n_ens, axis=1),
        slack_cloud=float(y_cloud),
        slack_edge=np.asarray(y_edge, dtype=float).copy(),
        slack_delay=float(inst.delay_cap * lam_max.sum()),
        dual_cap=float(dual_cap),
    )


def _demand_scale(u: UncertaintySet) -> float:
    return max(1.0, float(np.mean(u.forecast + u.deviation)))


def _dual_caps(inst: Instance, u: UncertaintySet, dual_cap: float):
    """Dimensionless per-family caps of the scaled subproblem.

    `dual_cap` is in $ per request-ms.  In the normalized model the delay
    dual and the reduced costs are capped at dual_cap / beta, and capacity
    duals at the same value divided by the scaled unit demand (so the
    original-unit cap on capacity duals is dual_cap / w).
    """
    scale = _demand_scale(u)
    w_scaled = inst.unit_demand * scale
    kappa = dual_cap / inst.beta
    return scale, w_scaled, kappa / w_scaled, kappa, kappa


def build_subproblem(inst: Instance, u: UncertaintySet, y_cloud: float, y_edge,
                     bounds: BigMBounds | None = None) -> MilpModel:
    """Worst-case recourse MILP at fixed sizing.

    Maximizes the delay cost over demands in the uncertainty set subject to
    the KKT system of the inner allocation LP, with each complementarity pair
    linearized by a binary switch.  The deviation coefficients are
    nonnegative here (worst demands never deviate downward), so membership
    reduces to 0 <= t <= 1, sum t <= gamma.

    Constraints are normalized internally to keep the switching rows well
    scaled: allocations are in units of the mean worst-case demand and dual
    variables are divided by the delay weight.  The objective is still in $,
    so the model optimum equals Q(y) directly.  `scaled_values` undoes the
    normalization on a solution.
    """
    bm = bounds or bigm_bounds(inst, u, y_cloud, y_edge)
    m, n = inst.m_aps, inst.n_ens
    beta = inst.beta
    scale, w, cap_pi, cap_mu, cap_xi = _dual_caps(inst, u, bm.dual_cap)
    dc, de = inst.delay_cloud, inst.delay_edge
    dmax = max(float(dc.max()), float(de.max()))
    # sigma is pinned through stationarity; its bound is implied, not a switch.
    sigma_cap = dmax * (1.0 + cap_mu) + w * cap_pi + cap_xi

    model = MilpModel("aro-subproblem", sense="max")
    for i in range(m):
        model.add_var(f"xc[{i}]", 0.0, bm.x_cloud[i] / scale,
                      obj=beta * scale * dc[i])
    for i in range(m):
        for j in range(n):
            model.add_var(f"xe[{i},{j}]", 0.0, bm.x_edge[i, j] / scale,
                          obj=beta * scale * de[i, j])
    for i in range(m):
        model.add_var(f"t[{i}]", 0.0, 1.0)
    model.add_var("pi0", 0.0, cap_pi)
    for j in range(n):
        model.add_var(f"pi[{j}]", 0.0, cap_pi)
    model.add_var("mu", 0.0, cap_mu)
    for i in range(m):
        model.add_var(f"sig[{i}]", -sigma_cap, sigma_cap)
    for i in range(m):
        model.add_var(f"u0[{i}]", 0.0, 1.0, integer=True)
    for i in range(m):
        for j in range(n):
            model.add_var(f"u1[{i},{j}]", 0.0, 1.0, integer=True)
    model.add_var("u2", 0.0, 1.0, integer=True)
    for j in range(n):
        model.add_var(f"u3[{j}]", 0.0, 1.0, integer=True)
    model.add_var("u4", 0.0, 1.0, integer=True)

    # Stationarity pairs: reduced cost of x_{i,.} vs the allocation itself.
    for i in range(m):
        rc = {"pi0": w, "mu": float(dc[i]), f"sig[{i}]": -1.0}
        model.add_constr(rc, GE, -float(dc[i]), f"rc0_lo[{i}]")
        hi = dict(rc)
        hi[f"u0[{i}]"] = -cap_xi
        model.add_constr(hi, LE, -float(dc[i]), f"rc0_hi[{i}]")
        xcap = bm.x_cloud[i] / scale
        model.add_constr(
            {f"xc[{i}]": 1.0, f"u0[{i}]": xcap}, LE, xcap, f"x0_sw[{i}]"
        )
    for i in range(m):
        for j in range(n):
            rc = {f"pi[{j}]": w, "mu": float(de[i, j]), f"sig[{i}]": -1.0}
            model.add_constr(rc, GE, -float(de[i, j]), f"rc1_lo[{i},{j}]")
            hi = dict(rc)
            hi[f"u1[{i},{j}]"] = -cap_xi
            model.add_constr(hi, LE, -float(de[i, j]), f"rc1_hi[{i},{j}]")
            xcap = bm.x_edge[i, j] / scale
            model.add_constr(
                {f"xe[{i},{j}]": 1.0, f"u1[{i},{j}]": xcap}, LE, xcap,
                f"x1_sw[{i},{j}]",
            )

    # Capacity pairs: slack vs dual, cloud then each EN.
    cloud_load = {f"xc[{i}]": w for i in range(m)}
    model.add_constr(dict(cloud_load), LE, float(y_cloud), "cap0_lo")
    hi = dict(cloud_load)
    hi["u2"] = bm.slack_cloud
    model.add_constr(hi, GE, float(y_cloud), "cap0_hi")
    model.add_constr({"pi0": 1.0, "u2": cap_pi}, LE, cap_pi, "pi0_sw")
    for j in range(n):
        load = {f"xe[{i},{j}]": w for i in range(m)}
        model.add_constr(dict(load), LE, float(y_edge[j]), f"cap_lo[{j}]")
        hi = dict(load)
        hi[f"u3[{j}]"] = float(bm.slack_edge[j])
        model.add_constr(hi, GE, float(y_edge[j]), f"cap_hi[{j}]")
        model.add_constr(
            {f"pi[{j}]": 1.0, f"u3[{j}]": cap_pi}, LE, cap_pi, f"pi_sw[{j}]"
        )

    # Delay pair, with lambda substituted by forecast + t * deviation.
    delay = {f"xc[{i}]": float(dc[i]) for i in range(m)}
    for i in range(m):
        for j in range(n):
            delay[f"xe[{i},{j}]"] = float(de[i, j])
    dm_dev = inst.delay_cap * u.deviation / scale
    base = inst.delay_cap * float(u.forecast.sum()) / scale
    slack_delay = bm.slack_delay / scale
    lo = dict(delay)
    for i in range(m):
        lo[f"t[{i}]"] = -float(dm_dev[i])
    model.add_constr(lo, LE, base, "delay_lo")
    hi = {f"t[{i}]": float(dm_dev[i]) for i in range(m)}
    for name, coef in delay.items():
        hi[name] = -coef
    hi["u4"] = -slack_delay
    model.add_constr(hi, LE, -base, "delay_hi")
    model.add_constr({"mu": 1.0, "u4": cap_mu}, LE, cap_mu, "mu_sw")

    # Flow balance ties the allocation to the realized demand.
    for i in range(m):
        coeffs = {f"xc[{i}]": 1.0}
        coeffs.update({f"xe[{i},{j}]": 1.0 for j in range(n)})
        coeffs[f"t[{i}]"] = -float(u.deviation[i]) / scale
        model.add_constr(coeffs, EQ, float(u.forecast[i]) / scale, f"flow[{i}]")
    model.add_constr({f"t[{i}]": 1.0 for i in range(m)}, LE, u.gamma, "t_budget")
    return model


def scaled_values(inst: Instance, u: UncertaintySet, values: dict[str, float]):
    """Map a subproblem solution back to requests/$ units."""
    m, n = inst.m_aps, inst.n_ens
    scale = _demand_scale(u)
    beta = inst.beta
    return {
        "xc": scale * np.array([values[f"xc[{i}]"] for i in range(m)]),
        "xe": scale * np.array(
            [[values[f"xe[{i},{j}]"] for j in range(n)] for i in range(m)]
        ),
        "t": np.array([values[f"t[{i}]"] for i in range(m)]),
        "pi0": beta * scale * values["pi0"],
        "pi": beta * scale * np.array([values[f"pi[{j}]"] for j in range(n)]),
        "mu": beta * values["mu"],
        "sigma": beta * np.array([values[f"sig[{i}]"] for i in range(m)]),
    }


@dataclass
class SubproblemSolution:
    """Worst-case demand with its certified optimal recourse."""

    worst_demand: DemandScenario
    allocation: Allocation
    pi_cloud: float
    pi_edge: np.ndarray
    mu: float
    sigma: np.ndarray
    binaries: dict[str, np.ndarray]
    objective: float            # Q(y): worst-case delay cost in $
    dual_cap: float
    complementarity_max: float
    snapped: bool = False


def _vertex_structured(g: np.ndarray, tol: float = 1e-6) -> bool:
    frac = (np.abs(g) > tol) & (np.abs(np.abs(g) - 1.0) > tol)
    return int(frac.sum()) <= 1


def _snap_to_vertex(t: np.ndarray, u: UncertaintySet, tol: float = 1e-6) -> np.ndarray:
    """Round a non-vertex t onto a vertex of its minimal face.

    The inner value function is convex in the demand, so it is constant on
    the minimal face containing an optimal t; rounding inside that face
    (keeping sum t fixed) preserves optimality.  Fractional mass goes to the
    largest deviations first, ties on the lowest AP index.
    """
    snapped = np.where(np.abs(t) <= tol, 0.0, np.where(np.abs(t - 1) <= tol, 1.0, t))
    frac_idx = np.flatnonzero((snapped > 0) & (snapped < 1))
    if len(frac_idx) <= 1:
        return snapped
    mass = snapped[frac_idx].sum()
    order = frac_idx[np.lexsort((frac_idx, -u.deviation[frac_idx]))]
    snapped[frac_idx] = 0.0
    whole = int(math.floor(mass + 1e-12))
    snapped[order[:whole]] = 1.0
    remainder = mass - whole
    if whole < len(order) and remainder > tol:
        snapped[order[whole]] = remainder
    return snapped


def _inner_lp(inst: Instance, y_cloud, y_edge, demand):
    model, block = build_inner_allocation_lp(inst, y_cloud, y_edge, demand)
    sol = solve_lp(model)
    if sol.status != "optimal":
        return sol, None, None
    alloc = extract_allocation(inst, sol.values, block, demand)
    m, n = inst.m_aps, inst.n_ens
    duals = {
        "pi_cloud": -sol.duals["cap[cloud]"],
        "pi_edge": np.array([-sol.duals[f"cap[{j}]"] for j in range(n)]),
        "mu": -sol.duals["delay"],
        "sigma": np.array([sol.duals[f"flow[{i}]"] for i in range(m)]),
    }
    return sol, alloc, duals


def _complementarity_audit(inst, u, y_cloud, y_edge, scen, alloc, pi0, pi, mu, sigma):
    """Largest normalized complementarity product across all KKT pairs."""
    w, beta = inst.unit_demand, inst.beta
    dc, de = inst.delay_cloud, inst.delay_edge
    worst = 0.0

    def pair(a, b):
        nonlocal worst
        worst = max(worst, abs(a * b) / (1.0 + abs(a) + abs(b)))

    xi_cloud = beta * dc + w * pi0 + mu * dc - sigma
    xi_edge = beta * de + w * pi + mu * de - sigma[:, None]
    for i in range(inst.m_aps):
        pair(xi_cloud[i], alloc.to_cloud[i])
        for j in range(inst.n_ens):
            pair(xi_edge[i, j], alloc.to_edge[i, j])
    pair(y_cloud - w * alloc.to_cloud.sum(), pi0)
    edge_load = w * alloc.to_edge.sum(axis=0)
    for j in range(inst.n_ens):
        pair(float(y_edge[j]) - edge_load[j], pi[j])
    pair(inst.delay_cap * scen.total - alloc.total_delay, mu)
    return worst


def solve_subproblem(inst: Instance, u: UncertaintySet, y_cloud: float, y_edge,
                     gap_tol: float = GAP_TOL_DEFAULT,
                     dual_cap: float | None = None) -> SubproblemSolution:
    """Solve the KKT/big-M subproblem with validated dual caps.

    The dual-side big-M starts at the configured cap and escalates tenfold
    (up to three times) whenever a returned dual quantity sits within 1% of
    it; every accepted solution is cross-checked against the inner LP at the
    returned worst-case demand.
    """
    y_edge = np.asarray(y_edge, dtype=float)
    bm = bigm_bounds(inst, u, y_cloud, y_edge, dual_cap)
    m, n = inst.m_aps, inst.n_ens
    last_failure = None
    for attempt in range(1 + DUAL_CAP_ESCALATIONS):
        model = build_subproblem(inst, u, y_cloud, y_edge, bm)
        sol = solve_milp(model, gap_tol=gap_tol)
        if sol.status in ("infeasible", "unbounded"):
            # Caps can strangle every KKT certificate; try once more, bigger.
            last_failure = f"subproblem MILP {sol.status} at dual cap {bm.dual_cap:g}"
            bm.dual_cap *= DUAL_CAP_FACTOR
            continue

        point = scaled_values(inst, u, sol.values)
        t = point["t"]
        q_milp = sol.objective
        pi0, pi = point["pi0"], point["pi"]
        mu, sigma = point["mu"], point["sigma"]

        snapped = not _vertex_structured(t)
        t_final = _snap_to_vertex(t, u) if snapped else t
        scen = DemandScenario(u.demand(t_final), t_final)

        lp_sol, lp_alloc, lp_duals = _inner_lp(inst, y_cloud, y_edge, scen)
        if lp_sol.status != "optimal":
            # The worst case sits at a demand with no feasible recourse; the
            # relatively-complete-recourse assumption fails at this sizing.
            raise RobustInfeasibleError(
                "no feasible allocation at the worst-case demand; the sizing "
                "cannot serve every demand in the uncertainty set"
            )
        q_lp = inst.beta * lp_alloc.total_delay
        if abs(q_lp - q_milp) > VALUE_TOL * (1.0 + abs(q_milp)):
            if snapped:
                # The recourse value cannot drop across the optimal face
                # unless the face touches an infeasible demand.
                raise RobustInfeasibleError(
                    "recourse infeasible near the worst-case demand; the "
                    "sizing cannot serve every demand in the uncertainty set"
                )
            raise SolveFailure(
                f"KKT/LP value mismatch: subproblem {q_milp:.9g} vs inner LP {q_lp:.9g}"
            )

        # Prefer the MILP's own primal/dual point; fall back to the inner
        # LP's pair when the MILP parked a dual near its cap or t was snapped.
        pi_cap = bm.dual_cap / inst.unit_demand

        def near_cap(pi0_, pi_, mu_, sigma_):
            xi_c = inst.beta * inst.delay_cloud + inst.unit_demand * pi0_ \
                + mu_ * inst.delay_cloud - sigma_
            xi_e = inst.beta * inst.delay_edge + inst.unit_demand * pi_ \
                + mu_ * inst.delay_edge - sigma_[:, None]
            return (
                max(pi0_, pi_.max(initial=0.0)) >= 0.99 * pi_cap
                or max(mu_, float(xi_c.max()), float(xi_e.max())) >= 0.99 * bm.dual_cap
            )

        use_lp_point = snapped or near_cap(pi0, pi, mu, sigma)
        if use_lp_point:
            alloc = lp_alloc
            pi0, pi = lp_duals["pi_cloud"], lp_duals["pi_edge"]
            mu, sigma = lp_duals["mu"], lp_duals["sigma"]
            if near_cap(pi0, pi, mu, sigma):
                last_failure = (
                    f"inner-LP dual within 1% of dual cap {bm.dual_cap:g}"
                )
                bm.dual_cap *= DUAL_CAP_FACTOR
                continue
        else:
            xc, xe = point["xc"], point["xe"]
            total = float((inst.delay_cloud * xc).sum() + (inst.delay_edge * xe).sum())
            alloc = Allocation(xc, xe, total, total / scen.total if scen.total else 0.0)

        comp = _complementarity_audit(
            inst, u, y_cloud, y_edge, scen, alloc, pi0, pi, mu, sigma
        )
        if comp > COMPLEMENTARITY_TOL:
            raise SolveFailure(f"complementarity residual {comp:.2e}")
        binaries = {
            "u0": np.array([round(sol.values[f"u0[{i}]"]) for i in range(m)]),
            "u1": np.array(
                [[round(sol.values[f"u1[{i},{j}]"]) for j in range(n)] for i in range(m)]
            ),
            "u2": round(sol.values["u2"]),
            "u3": np.array([round(sol.values[f"u3[{j}]"]) for j in range(n)]),
            "u4": round(sol.values["u4"]),
        }
        return SubproblemSolution(
            worst_demand=scen,
            allocation=alloc,
            pi_cloud=float(pi0),
            pi_edge=np.asarray(pi, dtype=float),
            mu=float(mu),
            sigma=np.asarray(sigma, dtype=float),
            binaries=binaries,
            objective=float(q_lp),
            dual_cap=bm.dual_cap,
            complementarity_max=comp,
            snapped=snapped,
        )
    if "MILP" in (last_failure or ""):
        # Persistent infeasibility: either no KKT certificate fits any cap, or
        # the recourse itself is infeasible somewhere in the set.  Probe the
        # forecast to tell the two apart.
        probe, _, _ = _inner_lp(inst, y_cloud, y_edge,
                                DemandScenario(u.forecast, np.zeros(u.size)))
        if probe.status != "optimal":
            raise RobustInfeasibleError(
                "recourse infeasible at the forecast demand; the sizing "
                "cannot meet the delay cap"
            )
    raise SolveFailure(
        f"dual big-M cap unstable after {DUAL_CAP_ESCALATIONS} escalations: "
        f"{last_failure}"
    )


def build_master(inst: Instance, scenarios) -> MilpModel:
    """First stage plus one recourse copy per pooled scenario under an
    epigraph variable for the worst delay cost."""
    scenarios = list(scenarios)
    if not scenarios:
        raise ConfigurationError("master needs at least one scenario")
    model = MilpModel("aro-master", sense="min")
    add_first_stage(model, inst)
    model.add_var("eta", 0.0, obj=1.0)
    for l, scen in enumerate(scenarios):
        block = add_allocation_block(model, inst, scen, tag=f"_s{l}")
        epi = {name: inst.beta * coef for name, coef in block.delay_coeffs.items()}
        epi["eta"] = -1.0
        model.add_constr(epi, LE, 0.0, f"epi_s{l}")
    return model


def solve_master(inst: Instance, scenarios, gap_tol: float = GAP_TOL_DEFAULT):
    """Returns (plan, eta, lower bound); the model objective is the bound."""
    model = build_master(inst, scenarios)
    sol = solve_milp(model, gap_tol=gap_tol)
    if sol.status != "optimal":
        if sol.status == "infeasible":
            raise ModelInfeasibleError(
                "master problem infeasible: budget, reliability and delay "
                "requirements conflict on the pooled scenarios"
            )
        raise SolveFailure(f"master solve ended with status {sol.status}")
    plan = extract_plan(inst, sol.values)
    plan.validate(inst)
    eta = float(sol.values["eta"])
    return plan, eta, float(sol.objective)


@dataclass
class IterationRecord:
    k: int
    scenario: DemandScenario
    lb: float
    ub: float
    master_ms: float
    sub_ms: float
    dual_cap: float


@dataclass
class CcgTrace:
    iterations: list[IterationRecord] = field(default_factory=list)
    final_gap: float = math.inf
    status: str = "running"


@dataclass
class CcgResult:
    plan: FirstStagePlan
    objective: float
    trace: CcgTrace


def _relative_gap(lb: float, ub: float) -> float:
    return (ub - lb) / max(abs(ub), 1e-12)


def _scenario_seen(scen: DemandScenario, pool) -> bool:
    for other in pool:
        if np.allclose(scen.demand, other.demand,
                       rtol=1e-9, atol=1e-9 * (1 + np.abs(other.demand).max())):
            return True
    return False


def ccg_solve(inst: Instance, u: UncertaintySet, eps: float = 1e-4,
              max_iter: int = 50, gap_tol: float = GAP_TOL_DEFAULT) -> CcgResult:
    """Column-and-constraint generation loop.

    Starts from the maximum-total-demand scenario, alternates master and
    subproblem, and stops when the relative gap closes, a scenario repeats
    (which forces LB = UB) or the iteration cap is hit.
    """
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    pool = [initial_scenario(u)]
    trace = CcgTrace()
    lb, ub = -math.inf, math.inf
    best_plan = None
    dual_cap = None
    lam_max_total = float((u.forecast + u.deviation).sum())

    for k in range(1, max_iter + 1):
        t0 = time.perf_counter()
        plan, eta, lb_k = solve_master(inst, pool, gap_tol=gap_tol)
        master_ms = 1e3 * (time.perf_counter() - t0)
        if lb_k < lb - 1e-6 * (1 + abs(lb)):
            raise SolveFailure(f"lower bound regressed: {lb_k} < {lb}")
        lb = max(lb, lb_k)

        # Capacity bought in iteration 1 already covers the whole set.
        total_cap = plan.size_cloud + plan.size_edge.sum()
        needed = inst.unit_demand * pool[0].total
        if total_cap < needed - 1e-6 * (1 + needed):
            raise SolveFailure("master sizing violates robust capacity cover")

        t1 = time.perf_counter()
        sub = solve_subproblem(
            inst, u, plan.size_cloud, plan.size_edge,
            gap_tol=gap_tol, dual_cap=dual_cap,
        )
        sub_ms = 1e3 * (time.perf_counter() - t1)
        dual_cap = sub.dual_cap
        ub_k = plan.first_stage_cost + sub.objective
        if ub_k < ub:
            ub = ub_k
            best_plan = plan
        if lb > ub + 1e-6 * (1 + abs(ub)):
            raise SolveFailure(f"bound crossing: LB {lb} > UB {ub}")

        trace.iterations.append(IterationRecord(
            k=k, scenario=sub.worst_demand, lb=lb, ub=ub,
            master_ms=master_ms, sub_ms=sub_ms, dual_cap=sub.dual_cap,
        ))
        gap = _relative_gap(lb, ub)
        trace.final_gap = gap
        if gap <= eps:
            trace.status = "converged"
            break
        if _scenario_seen(sub.worst_demand, pool):
            # A repeated extreme point pins LB to UB; anything else is a bug.
            if gap > eps:
                raise SolveFailure(
                    f"repeated scenario with open gap {gap:.3e}"
                )
            trace.status = "converged"
            break
        pool.append(sub.worst_demand)
    else:
        trace.status = "max_iter"

    return CcgResult(plan=best_plan, objective=ub, trace=trace)


def extensive_form(inst: Instance, u: UncertaintySet,
                   gap_tol: float = GAP_TOL_DEFAULT,
                   max_points: int = 10**6) -> float:
    """Exact objective by enumerating every vertex of the uncertainty set."""
    vertices = enumerate_extreme_points(u, max_count=max_points)
    model = build_master(inst, vertices)
    sol = solve_milp(model, gap_tol=gap_tol)
    if sol.status != "optimal":
        if sol.status == "infeasible":
            raise ModelInfeasibleError("extensive form infeasible")
        raise SolveFailure(f"extensive form ended with status {sol.status}")
    return float(sol.objective)
