"""Command-line front end.

Three commands: `gen` writes a random instance, `solve` runs one planning
method and writes its plan report (plus a CCG trace for the adaptive
model), and `compare` runs the full operation-stage comparison protocol,
emitting tidy CSVs with rendered PNG figures alongside.

Exit codes: 0 success, 2 validation problem, 3 infeasible model,
4 non-converged, 5 solver failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import reporting
from .aro import ccg_solve
from .deterministic import solve_deterministic
from .errors import (
    ConfigurationError,
    EdgeplanError,
    ModelInfeasibleError,
    ParseError,
)
from .evaluation import evaluate_methods
from .instance import (
    GeneratorParams,
    Instance,
    UncertaintySet,
    generate_instance,
    load_instance,
    save_instance,
)
from .solver import SolverError
from .static_ro import solve_static_ro
from .stochastic import solve_stochastic, training_scenarios

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3
EXIT_NOT_CONVERGED = 4
EXIT_SOLVER_FAILURE = 5

ALL_METHODS = ("det", "ro", "aro", "sp")


class NotConvergedError(EdgeplanError):
    pass


@dataclass
class RunConfig:
    """Validated knobs shared by the solve and compare commands."""

    alpha: float = 0.3
    gamma: float = 10.0
    beta0: float | None = None
    deviations: np.ndarray | None = None
    eps: float = 1e-4
    gap_tol: float = 1e-9
    max_iter: int = 50
    seed: int = 0
    n_test: int = 100
    v_p: float = 40.0
    n_train: int = 1000
    train_sigma_scale: float = 0.5
    train_correlation: float = 0.0
    out_dir: Path = field(default_factory=Path)

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        cfg = cls(
            alpha=args.alpha,
            gamma=args.gamma,
            beta0=getattr(args, "beta0", None),
            eps=getattr(args, "eps", 1e-4),
            gap_tol=getattr(args, "gap_tol", 1e-9),
            max_iter=getattr(args, "max_iter", 50),
            seed=getattr(args, "seed", 0),
            n_test=getattr(args, "n_test", 100),
            v_p=getattr(args, "vp", 40.0),
            n_train=getattr(args, "n_train", 1000),
            train_sigma_scale=getattr(args, "train_sigma_scale", 0.5),
            train_correlation=getattr(args, "train_correlation", 0.0),
            out_dir=_out_dir(args),
        )
        dev_file = getattr(args, "deviations", None)
        if dev_file:
            with open(dev_file) as fh:
                cfg.deviations = np.asarray(json.load(fh), dtype=float)
        if not 0 <= cfg.alpha <= 1:
            raise ConfigurationError(f"alpha={cfg.alpha} outside [0, 1]")
        if cfg.eps <= 0:
            raise ConfigurationError("eps must be positive")
        if cfg.n_test < 1:
            raise ConfigurationError("n-test must be at least 1")
        return cfg

    def uncertainty(self, inst: Instance) -> UncertaintySet:
        if self.deviations is not None:
            return UncertaintySet(inst.forecast, self.deviations, self.gamma)
        return UncertaintySet.from_instance(inst, self.alpha, self.gamma)


def _out_dir(args) -> Path:
    out = getattr(args, "out", None) or os.environ.get("EDGEPLAN_OUT", ".")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load(args) -> Instance:
    inst = load_instance(args.instance)
    beta0 = getattr(args, "beta0", None)
    if beta0 is not None:
        inst = inst.with_beta0(beta0)
    scale = getattr(args, "demand_scale", None)
    if scale is not None and scale != 1.0:
        inst = inst.with_demand_scale(scale)
    return inst


def cmd_gen(args) -> int:
    params = GeneratorParams(
        budget=args.budget,
        r_min=args.r_min,
        delay_cap=args.delay_cap,
        unit_demand=args.unit_demand,
        beta0=args.beta0 if args.beta0 is not None else 0.01,
        demand_scale=args.demand_scale or 1.0,
    )
    inst = generate_instance(
        args.nodes, args.attach, args.aps, args.ens, args.seed, params
    )
    save_instance(inst, args.out)
    print(
        f"wrote {args.out}: M={inst.m_aps} APs, N={inst.n_ens} ENs, "
        f"total forecast {inst.forecast.sum():.1f} requests"
    )
    return EXIT_OK


def _solve_method(inst: Instance, method: str, cfg: RunConfig):
    """Returns (plan, objective, trace-or-None)."""
    if method == "det":
        plan, _, obj = solve_deterministic(inst, inst.forecast, gap_tol=cfg.gap_tol)
        return plan, obj, None
    u = cfg.uncertainty(inst)
    if method == "ro":
        plan, _, obj = solve_static_ro(inst, u, gap_tol=cfg.gap_tol)
        return plan, obj, None
    if method == "aro":
        res = ccg_solve(inst, u, eps=cfg.eps, max_iter=cfg.max_iter,
                        gap_tol=cfg.gap_tol)
        return res.plan, res.objective, res.trace
    if method == "sp":
        scen = training_scenarios(
            u, cfg.n_train, cfg.seed, sigma_scale=cfg.train_sigma_scale,
            correlation=cfg.train_correlation,
        )
        plan, obj = solve_stochastic(inst, scen, gap_tol=cfg.gap_tol)
        return plan, obj, None
    raise ConfigurationError(f"unknown method {method!r}")


def cmd_solve(args) -> int:
    cfg = RunConfig.from_args(args)
    inst = _load(args)
    plan, obj, trace = _solve_method(inst, args.method, cfg)
    out = cfg.out_dir
    reporting.write_json(
        reporting.plan_payload(
            plan, obj, args.method,
            extra={"alpha": cfg.alpha, "gamma": cfg.gamma, "beta0": inst.beta0},
        ),
        out / f"plan_{args.method}.json",
    )
    if trace is not None:
        reporting.write_trace(
            trace, out / "ccg_trace.csv", out / "ccg_scenarios.json"
        )
        print(
            f"{args.method}: objective {obj:.6f}, "
            f"{len(trace.iterations)} iterations, gap {trace.final_gap:.2e}"
        )
        if trace.status != "converged":
            raise NotConvergedError(
                f"CCG stopped at status {trace.status} with gap "
                f"{trace.final_gap:.3e} (plan and trace were written)"
            )
    else:
        print(f"{args.method}: objective {obj:.6f}")
    return EXIT_OK


def _sweep_values(raw, name):
    if raw is None:
        return None
    if not raw:
        raise ConfigurationError(f"--sweep-{name} given without values")
    return raw


def _sweep_point(task):
    """Worker for sweep fan-out; must stay importable for process pools."""
    inst, method, cfg_kwargs = task
    cfg = RunConfig(**cfg_kwargs)
    plan, obj, _ = _solve_method(inst, method, cfg)
    return plan, obj


def _run_sweep(tasks, jobs):
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_point, tasks))
    return [_sweep_point(t) for t in tasks]


def _cfg_kwargs(cfg: RunConfig, **overrides):
    kwargs = dict(
        alpha=cfg.alpha, gamma=cfg.gamma, eps=cfg.eps, gap_tol=cfg.gap_tol,
        max_iter=cfg.max_iter, seed=cfg.seed, n_train=cfg.n_train,
        train_sigma_scale=cfg.train_sigma_scale,
        train_correlation=cfg.train_correlation,
    )
    kwargs.update(overrides)
    return kwargs


def cmd_compare(args) -> int:
    cfg = RunConfig.from_args(args)
    for name in ("beta0", "gamma", "alpha", "aps", "ens"):
        _sweep_values(getattr(args, f"sweep_{name}"), name)
    inst = _load(args)
    out = cfg.out_dir
    methods = args.methods or list(ALL_METHODS)
    unknown = set(methods) - set(ALL_METHODS)
    if unknown:
        raise ConfigurationError(f"unknown methods {sorted(unknown)}")
    u = cfg.uncertainty(inst)

    plans, objectives, traces = {}, {}, {}
    for method in methods:
        plan, obj, trace = _solve_method(inst, method, cfg)
        if trace is not None:
            if trace.status != "converged":
                raise NotConvergedError(
                    f"CCG stopped at status {trace.status}; rerun with a "
                    f"larger --max-iter or looser --eps"
                )
            traces[method] = trace
        plans[method], objectives[method] = plan, obj
        print(f"{method}: objective {obj:.6f}")

    report = evaluate_methods(inst, u, plans, cfg.n_test, cfg.v_p, cfg.seed)
    reporting.write_comparison(
        report, out / "comparison.json", out / "comparison.csv"
    )
    reporting.emit_resources(inst, plans, out / "resources")
    reporting.emit_realized_costs(report, out / "realized_costs")
    robust_rows = [
        (m, objectives[m], report.methods[m].total_average)
        for m in ("ro", "aro") if m in methods
    ]
    if robust_rows:
        reporting.emit_robust_vs_actual(robust_rows, out / "robust_vs_actual")
    if "aro" in traces:
        reporting.emit_convergence(traces["aro"], out / "convergence")

    _compare_sweeps(args, cfg, inst, methods, out)
    print(f"reports written to {out}")
    return EXIT_OK


def _compare_sweeps(args, cfg: RunConfig, inst: Instance, methods, out: Path):
    jobs = max(1, args.jobs)
    beta0_sweep = _sweep_values(args.sweep_beta0, "beta0")
    gamma_sweep = _sweep_values(args.sweep_gamma, "gamma")
    alpha_sweep = _sweep_values(args.sweep_alpha, "alpha")
    aps_sweep = _sweep_values(args.sweep_aps, "aps")
    ens_sweep = _sweep_values(args.sweep_ens, "ens")

    if beta0_sweep:
        robust = [m for m in ("ro", "aro") if m in methods] or ["aro"]
        tasks, meta = [], []
        for b0 in beta0_sweep:
            for method in robust:
                tasks.append((inst.with_beta0(b0), method, _cfg_kwargs(cfg)))
                meta.append((b0, method))
        rows = []
        for (b0, method), (plan, obj) in zip(meta, _run_sweep(tasks, jobs)):
            rows.append({"beta0": b0, "method": method, "cost": obj,
                         "payment": plan.first_stage_cost})
        reporting.emit_cost_payment_vs_beta0(rows, out / "cost_vs_beta0")

    if gamma_sweep:
        tasks = [
            (inst, "aro", _cfg_kwargs(cfg, gamma=g)) for g in gamma_sweep
        ]
        rows = [
            {"gamma": g, "series": "aro", "cost": obj}
            for g, (_, obj) in zip(gamma_sweep, _run_sweep(tasks, jobs))
        ]
        reporting.emit_sweep(rows, "gamma", out / "cost_vs_gamma",
                             "uncertainty budget", "Cost vs uncertainty budget")

        if alpha_sweep:
            tasks, meta = [], []
            for a in alpha_sweep:
                for g in gamma_sweep:
                    tasks.append((inst, "aro", _cfg_kwargs(cfg, alpha=a, gamma=g)))
                    meta.append((a, g))
            rows = [
                {"gamma": g, "series": f"alpha={a:g}", "cost": obj}
                for (a, g), (_, obj) in zip(meta, _run_sweep(tasks, jobs))
            ]
            reporting.emit_sweep(rows, "gamma", out / "cost_vs_alpha_gamma",
                                 "uncertainty budget",
                                 "Cost vs forecast error and budget")
        if beta0_sweep:
            tasks, meta = [], []
            for b0 in beta0_sweep:
                for g in gamma_sweep:
                    tasks.append(
                        (inst.with_beta0(b0), "aro", _cfg_kwargs(cfg, gamma=g))
                    )
                    meta.append((b0, g))
            rows = [
                {"gamma": g, "series": f"beta0={b0:g}", "cost": obj}
                for (b0, g), (_, obj) in zip(meta, _run_sweep(tasks, jobs))
            ]
            reporting.emit_sweep(rows, "gamma", out / "cost_vs_beta0_gamma",
                                 "uncertainty budget",
                                 "Cost vs delay penalty and budget")

    if aps_sweep or ens_sweep:
        gammas = gamma_sweep or [cfg.gamma]
        base = dict(nodes=args.nodes, attach=args.attach, seed=args.gen_seed)
        if aps_sweep:
            rows = _size_sweep_rows(
                cfg, base, [(m, args.ens_base) for m in aps_sweep], gammas, jobs,
                vary="aps",
            )
            reporting.emit_sweep(rows, "aps", out / "cost_vs_aps",
                                 "number of APs", "Cost vs number of APs")
        if ens_sweep:
            rows = _size_sweep_rows(
                cfg, base, [(args.aps_base, n) for n in ens_sweep], gammas, jobs,
                vary="ens",
            )
            reporting.emit_sweep(rows, "ens", out / "cost_vs_ens",
                                 "number of ENs", "Cost vs number of ENs")


def _size_sweep_rows(cfg, base, sizes, gammas, jobs, vary):
    tasks, meta = [], []
    for m_aps, n_ens in sizes:
        sized = generate_instance(
            base["nodes"], base["attach"], m_aps, n_ens, base["seed"]
        )
        for g in gammas:
            gamma = min(float(g), float(m_aps))
            tasks.append((sized, "aro", _cfg_kwargs(cfg, gamma=gamma)))
            meta.append((m_aps if vary == "aps" else n_ens, g))
    return [
        {vary: size, "series": f"gamma={g:g}", "cost": obj}
        for (size, g), (_, obj) in zip(meta, _run_sweep(tasks, jobs))
    ]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgeplan",
        description="Robust edge service placement and sizing toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a random instance")
    gen.add_argument("--nodes", type=int, default=100)
    gen.add_argument("--attach", type=int, default=2)
    gen.add_argument("--aps", type=int, required=True)
    gen.add_argument("--ens", type=int, required=True)
    gen.add_argument("--seed", type=int, default=1)
    gen.add_argument("--budget", type=float, default=100.0)
    gen.add_argument("--r-min", type=int, default=2)
    gen.add_argument("--delay-cap", type=float, default=30.0)
    gen.add_argument("--unit-demand", type=float, default=0.0004)
    gen.add_argument("--beta0", type=float, default=None)
    gen.add_argument("--demand-scale", type=float, default=1.0)
    gen.add_argument("--out", "-o", required=True, help="instance JSON path")
    gen.set_defaults(func=cmd_gen)

    def common(p, beta0_default=None):
        p.add_argument("--instance", required=True)
        p.add_argument("--alpha", type=float, default=0.3)
        p.add_argument("--gamma", type=float, default=10.0)
        p.add_argument("--beta0", type=float, default=beta0_default)
        p.add_argument("--deviations", default=None,
                       help="JSON file with one deviation per AP")
        p.add_argument("--eps", type=float, default=1e-4)
        p.add_argument("--gap-tol", type=float, default=1e-9)
        p.add_argument("--max-iter", type=int, default=50)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--n-train", type=int, default=1000)
        p.add_argument("--train-sigma-scale", type=float, default=0.5)
        p.add_argument("--train-correlation", type=float, default=0.0)
        p.add_argument("--demand-scale", type=float, default=1.0)
        p.add_argument("--out", "-o", default=None,
                       help="output directory (default $EDGEPLAN_OUT or .)")

    solve = sub.add_parser("solve", help="solve one planning model")
    solve.add_argument("method", choices=ALL_METHODS)
    common(solve)
    solve.set_defaults(func=cmd_solve)

    comp = sub.add_parser(
        "compare", help="solve methods, evaluate and emit report files"
    )
    common(comp)
    comp.add_argument("--methods", nargs="+", default=None,
                      help=f"subset of {ALL_METHODS}")
    comp.add_argument("--n-test", type=int, default=100)
    comp.add_argument("--vp", type=float, default=40.0)
    comp.add_argument("--jobs", type=int, default=1)
    comp.add_argument("--sweep-beta0", nargs="*", type=float, default=None)
    comp.add_argument("--sweep-gamma", nargs="*", type=float, default=None)
    comp.add_argument("--sweep-alpha", nargs="*", type=float, default=None)
    comp.add_argument("--sweep-aps", nargs="*", type=int, default=None)
    comp.add_argument("--sweep-ens", nargs="*", type=int, default=None)
    comp.add_argument("--nodes", type=int, default=100,
                      help="topology size for size sweeps")
    comp.add_argument("--attach", type=int, default=2)
    comp.add_argument("--gen-seed", type=int, default=1)
    comp.add_argument("--aps-base", type=int, default=20)
    comp.add_argument("--ens-base", type=int, default=5)
    comp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NotConvergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except ModelInfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER_FAILURE


if __name__ == "__main__":
    sys.exit(main())
