"""Exact LP / MILP solving layer used by every model-building module.

Models are assembled by variable name: each variable carries (name, lb, ub,
integrality) and each constraint is a {variable name: coefficient} map with a
relation and right-hand side.  Solving is delegated to the HiGHS engine
shipped inside scipy (`linprog` / `milp`), which is deterministic for a fixed
model.  Every LP solution is certified on the way out: primal residuals,
strong duality and complementary slackness are checked against fixed
tolerances and a `SolveFailure` is raised if they do not hold.

Dual values are reported in the sensitivity convention d(objective)/d(rhs)
of the model's own sense.  For a minimization problem this means a binding
">=" constraint has a nonnegative dual and a binding "<=" constraint a
nonpositive one.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

# HiGHS defaults (1e-6 integrality, 1e-7 feasibility) are too loose next to
# big-M switching constraints; tightened across the board.
_HIGHS_LP_OPTIONS = {
    "primal_feasibility_tolerance": 1e-9,
    "dual_feasibility_tolerance": 1e-9,
}
_HIGHS_MILP_OPTIONS = {
    **_HIGHS_LP_OPTIONS,
    "mip_feasibility_tolerance": 1e-9,
}

LE = "<="
EQ = "=="
GE = ">="
_RELATIONS = (LE, EQ, GE)

MIN = "min"
MAX = "max"

FEAS_TOL = 1e-7
DUALITY_TOL = 1e-6
INT_TOL = 1e-6


class SolverError(Exception):
    """Base class for solver-layer failures."""


class ModelError(SolverError):
    """Raised when a model is malformed (bad bounds, NaN coefficients...)."""


class SolveFailure(SolverError):
    """Raised on numerical breakdown or an uncertified solution."""


class MilpTimeout(SolverError):
    """Raised when the time limit expires without an incumbent."""

    def __init__(self, message, best_bound):
        super().__init__(message)
        self.best_bound = best_bound


@dataclass
class Variable:
    name: str
    lb: float
    ub: float
    integer: bool


@dataclass
class Constraint:
    coeffs: dict[str, float]
    relation: str
    rhs: float
    name: str


class MilpModel:
    """A linear model with optional integrality flags."""

    def __init__(self, name: str = "model", sense: str = MIN):
        if sense not in (MIN, MAX):
            raise ModelError(f"unknown objective sense {sense!r}")
        self.name = name
        self.sense = sense
        self.variables: list[Variable] = []
        self.constraints: list[Constraint] = []
        self.objective: dict[str, float] = {}
        self._index: dict[str, int] = {}

    @property
    def num_vars(self) -> int:
        return len(self.variables)

    @property
    def num_binaries(self) -> int:
        return sum(v.integer for v in self.variables)

    def add_var(self, name, lb=0.0, ub=math.inf, integer=False, obj=0.0) -> str:
        if name in self._index:
            raise ModelError(f"duplicate variable {name!r}")
        lb, ub = float(lb), float(ub)
        if math.isnan(lb) or math.isnan(ub) or lb > ub:
            raise ModelError(f"bad bounds [{lb}, {ub}] for {name!r}")
        if integer and not (math.isfinite(lb) and math.isfinite(ub)):
            raise ModelError(f"integer variable {name!r} must have finite bounds")
        self._index[name] = len(self.variables)
        self.variables.append(Variable(name, lb, ub, bool(integer)))
        if obj:
            self.objective[name] = self.objective.get(name, 0.0) + float(obj)
        return name

    def add_constr(self, coeffs: dict[str, float], relation: str, rhs: float, name: str):
        if relation not in _RELATIONS:
            raise ModelError(f"unknown relation {relation!r}")
        rhs = float(rhs)
        if not math.isfinite(rhs):
            raise ModelError(f"non-finite rhs in constraint {name!r}")
        clean = {}
        for var, coef in coeffs.items():
            if var not in self._index:
                raise ModelError(f"constraint {name!r} uses unknown variable {var!r}")
            coef = float(coef)
            if not math.isfinite(coef):
                raise ModelError(f"non-finite coefficient in constraint {name!r}")
            if coef != 0.0:
                clean[var] = coef
        self.constraints.append(Constraint(clean, relation, rhs, name))

    def add_objective(self, coeffs: dict[str, float]):
        for var, coef in coeffs.items():
            if var not in self._index:
                raise ModelError(f"objective uses unknown variable {var!r}")
            coef = float(coef)
            if not math.isfinite(coef):
                raise ModelError(f"non-finite objective coefficient for {var!r}")
            self.objective[var] = self.objective.get(var, 0.0) + coef

    def var_index(self, name: str) -> int:
        return self._index[name]

    def _cost_vector(self) -> np.ndarray:
        c = np.zeros(self.num_vars)
        for var, coef in self.objective.items():
            c[self._index[var]] = coef
        return c

    def _constraint_matrix(self):
        """Sparse A plus per-row (lower, upper) derived from the relations."""
        rows, cols, vals = [], [], []
        lower = np.empty(len(self.constraints))
        upper = np.empty(len(self.constraints))
        for k, con in enumerate(self.constraints):
            for var, coef in con.coeffs.items():
                rows.append(k)
                cols.append(self._index[var])
                vals.append(coef)
            if con.relation == LE:
                lower[k], upper[k] = -np.inf, con.rhs
            elif con.relation == GE:
                lower[k], upper[k] = con.rhs, np.inf
            else:
                lower[k], upper[k] = con.rhs, con.rhs
        a = sp.csr_matrix(
            (vals, (rows, cols)), shape=(len(self.constraints), self.num_vars)
        )
        return a, lower, upper

    def _bounds(self):
        lb = np.array([v.lb for v in self.variables])
        ub = np.array([v.ub for v in self.variables])
        return lb, ub

    def write_lp(self, path):
        """Dump the model in an LP-style text format (debugging aid, write-only)."""
        with open(path, "w") as fh:
            fh.write(f"\\ model {self.name}\n")
            fh.write("Minimize\n" if self.sense == MIN else "Maximize\n")
            terms = [
                f"{coef:+.12g} {var}" for var, coef in sorted(self.objective.items())
            ]
            fh.write(" obj: " + (" ".join(terms) if terms else "0") + "\n")
            fh.write("Subject To\n")
            for con in self.constraints:
                lhs = " ".join(
                    f"{coef:+.12g} {var}" for var, coef in sorted(con.coeffs.items())
                )
                rel = {LE: "<=", GE: ">=", EQ: "="}[con.relation]
                fh.write(f" {con.name}: {lhs or '0'} {rel} {con.rhs:.12g}\n")
            fh.write("Bounds\n")
            for v in self.variables:
                fh.write(f" {v.lb:.12g} <= {v.name} <= {v.ub:.12g}\n")
            integers = [v.name for v in self.variables if v.integer]
            if integers:
                fh.write("General\n " + " ".join(integers) + "\n")
            fh.write("End\n")


@dataclass
class LpSolution:
    status: str
    values: dict[str, float]
    duals: dict[str, float]
    reduced_costs: dict[str, float]
    objective: float

    def __getitem__(self, name: str) -> float:
        return self.values[name]


@dataclass
class MilpSolution:
    status: str
    values: dict[str, float]
    objective: float
    node_count: int
    best_bound: float
    gap: float = 0.0

    def __getitem__(self, name: str) -> float:
        return self.values[name]


def _split_rows(model: MilpModel):
    """Rows regrouped for linprog: (A_ub, b_ub, ub_meta), (A_eq, b_eq, eq_meta).

    GE rows are negated into <= form; meta records (constraint index, sign)
    so duals can be mapped back to the original relation.
    """
    ub_rows, ub_rhs, ub_meta = [], [], []
    eq_rows, eq_rhs, eq_meta = [], [], []
    for k, con in enumerate(model.constraints):
        row = (con.coeffs, con.rhs)
        if con.relation == LE:
            ub_rows.append((row[0], 1.0))
            ub_rhs.append(con.rhs)
            ub_meta.append((k, 1.0))
        elif con.relation == GE:
            ub_rows.append((row[0], -1.0))
            ub_rhs.append(-con.rhs)
            ub_meta.append((k, -1.0))
        else:
            eq_rows.append((row[0], 1.0))
            eq_rhs.append(con.rhs)
            eq_meta.append((k, 1.0))

    def build(rows):
        r, c, v = [], [], []
        for i, (coeffs, sign) in enumerate(rows):
            for var, coef in coeffs.items():
                r.append(i)
                c.append(model.var_index(var))
                v.append(sign * coef)
        return sp.csr_matrix((v, (r, c)), shape=(len(rows), model.num_vars))

    return (
        (build(ub_rows), np.array(ub_rhs), ub_meta),
        (build(eq_rows), np.array(eq_rhs), eq_meta),
    )


def _certify_lp(model, x, duals, reduced, objective):
    """Check primal feasibility, strong duality and complementary slackness."""
    a, lower, upper = model._constraint_matrix()
    ax = a @ x if len(model.constraints) else np.zeros(0)
    scale = 1.0 + np.abs(ax) + np.abs(np.where(np.isfinite(upper), upper, lower))
    viol = np.maximum(lower - ax, ax - upper) / scale
    if len(viol) and viol.max() > FEAS_TOL:
        k = int(viol.argmax())
        raise SolveFailure(
            f"primal residual {viol.max():.2e} on constraint "
            f"{model.constraints[k].name!r}"
        )
    lb, ub = model._bounds()
    if np.any(x < lb - FEAS_TOL * (1 + np.abs(lb))) or np.any(
        x > ub + FEAS_TOL * (1 + np.abs(ub))
    ):
        raise SolveFailure("variable bound violated")

    dual_obj = 0.0
    for k, con in enumerate(model.constraints):
        dual_obj += duals[k] * con.rhs
    for j, v in enumerate(model.variables):
        if reduced[j] > 0 and math.isfinite(v.lb):
            dual_obj += reduced[j] * v.lb
        elif reduced[j] < 0 and math.isfinite(v.ub):
            dual_obj += reduced[j] * v.ub
    if abs(objective - dual_obj) > DUALITY_TOL * (1.0 + abs(objective)):
        raise SolveFailure(
            f"strong duality residual {abs(objective - dual_obj):.2e}"
        )

    # Complementary slackness: dual * slack per row, sign-flipped for max.
    sgn = 1.0 if model.sense == MIN else -1.0
    for k, con in enumerate(model.constraints):
        if con.relation == EQ:
            continue
        slack = (con.rhs - ax[k]) if con.relation == LE else (ax[k] - con.rhs)
        if abs(sgn * duals[k]) * slack > DUALITY_TOL * (1 + abs(con.rhs)):
            raise SolveFailure(
                f"complementary slackness violated on {con.name!r}"
            )


def solve_lp(model: MilpModel) -> LpSolution:
    """Solve the LP relaxation (integrality ignored) and return primal + duals."""
    c = model._cost_vector()
    sgn = 1.0 if model.sense == MIN else -1.0
    (a_ub, b_ub, ub_meta), (a_eq, b_eq, eq_meta) = _split_rows(model)
    lb, ub = model._bounds()
    bounds = [
        (l if math.isfinite(l) else None, u if math.isfinite(u) else None)
        for l, u in zip(lb, ub)
    ]
    res = linprog(
        sgn * c,
        A_ub=a_ub if a_ub.shape[0] else None,
        b_ub=b_ub if len(b_ub) else None,
        A_eq=a_eq if a_eq.shape[0] else None,
        b_eq=b_eq if len(b_eq) else None,
        bounds=bounds,
        method="highs",
        options=dict(_HIGHS_LP_OPTIONS),
    )
    if res.status == 2:
        return LpSolution("infeasible", {}, {}, {}, math.nan)
    if res.status == 3:
        return LpSolution("unbounded", {}, {}, {}, math.nan)
    if res.status != 0:
        raise SolveFailure(f"LP solve failed: {res.message}")

    x = np.asarray(res.x)
    objective = float(c @ x)
    # Map marginals of the internal min problem back onto original rows, in
    # the d(obj)/d(rhs) convention of the model's own sense.
    duals = np.zeros(len(model.constraints))
    if len(ub_meta):
        for (k, row_sign), marg in zip(ub_meta, res.ineqlin.marginals):
            duals[k] = sgn * row_sign * marg
    if len(eq_meta):
        for (k, _), marg in zip(eq_meta, res.eqlin.marginals):
            duals[k] = sgn * marg
    reduced = sgn * (np.asarray(res.lower.marginals) + np.asarray(res.upper.marginals))

    # Certification runs in the internal min convention.
    _certify_lp(model, x, sgn * duals, sgn * reduced, sgn * objective)

    names = [v.name for v in model.variables]
    return LpSolution(
        status="optimal",
        values=dict(zip(names, x.tolist())),
        duals={con.name: float(d) for con, d in zip(model.constraints, duals)},
        reduced_costs=dict(zip(names, (reduced).tolist())),
        objective=objective,
    )


def solve_milp(model: MilpModel, gap_tol: float = 1e-9, time_limit: float = 300.0) -> MilpSolution:
    """Branch-and-bound solve; proven optimal within gap_tol or best incumbent."""
    c = model._cost_vector()
    sgn = 1.0 if model.sense == MIN else -1.0
    a, lower, upper = model._constraint_matrix()
    lb, ub = model._bounds()
    integrality = np.array([1 if v.integer else 0 for v in model.variables])
    constraints = (
        [LinearConstraint(a, lower, upper)] if len(model.constraints) else []
    )
    with warnings.catch_warnings():
        # scipy forwards the HiGHS tolerance options verbatim but warns.
        warnings.simplefilter("ignore", RuntimeWarning)
        res = milp(
            c=sgn * c,
            constraints=constraints,
            integrality=integrality,
            bounds=Bounds(lb, ub),
            options={
                "mip_rel_gap": gap_tol,
                "time_limit": time_limit,
                "presolve": True,
                **_HIGHS_MILP_OPTIONS,
            },
        )
    if res.status == 2:
        return MilpSolution("infeasible", {}, math.nan, 0, math.nan)
    if res.status == 3:
        return MilpSolution("unbounded", {}, math.nan, 0, math.nan)
    best_bound = sgn * res.mip_dual_bound if res.mip_dual_bound is not None else math.nan
    if res.x is None:
        raise MilpTimeout(f"MILP hit the limit with no incumbent: {res.message}",
                          best_bound)
    x = np.asarray(res.x)
    frac = np.abs(x[integrality == 1] - np.round(x[integrality == 1]))
    if len(frac) and frac.max() > INT_TOL:
        raise SolveFailure(f"integrality residual {frac.max():.2e}")
    x = np.where(integrality == 1, np.round(x), x)
    names = [v.name for v in model.variables]
    status = "optimal" if res.status == 0 else "feasible"
    return MilpSolution(
        status=status,
        values=dict(zip(names, x.tolist())),
        objective=float(c @ x),
        node_count=int(res.mip_node_count or 0),
        best_bound=float(best_bound),
        gap=float(res.mip_gap or 0.0),
    )
