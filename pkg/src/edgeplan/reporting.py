"""Report writers: delimited outputs with rendered figures alongside.

Every dataset the compare pipeline emits is written twice: a tidy CSV for
downstream tooling and a PNG rendering of the same data next to it.
"""

from __future__ import annotations

import csv
import json

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .aro import CcgTrace
from .evaluation import ComparisonReport
from .formulation import FirstStagePlan
from .instance import Instance

_FIGSIZE = (6.4, 3.8)
_DPI = 150


def write_json(payload, path):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, default=_jsonable)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON-serializable: {type(obj)!r}")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def plan_payload(plan: FirstStagePlan, objective: float, method: str,
                 extra: dict | None = None) -> dict:
    payload = {
        "method": method,
        "objective": objective,
        "placement": plan.placement.tolist(),
        "size_cloud": plan.size_cloud,
        "size_edge": plan.size_edge.tolist(),
        "cost_placement": plan.cost_placement,
        "cost_storage": plan.cost_storage,
        "cost_edge": plan.cost_edge,
        "cost_cloud": plan.cost_cloud,
        "first_stage_cost": plan.first_stage_cost,
    }
    if extra:
        payload.update(extra)
    return payload


def write_trace(trace: CcgTrace, csv_path, scenarios_path=None):
    """Per-iteration bounds as CSV plus the worst-case scenarios as JSON."""
    rows = []
    for rec in trace.iterations:
        gap = (rec.ub - rec.lb) / max(abs(rec.ub), 1e-12)
        rows.append([rec.k, repr(rec.lb), repr(rec.ub), repr(gap),
                     f"{rec.master_ms:.3f}", f"{rec.sub_ms:.3f}"])
    write_csv(csv_path, ["iter", "LB", "UB", "gap", "master_ms", "sub_ms"], rows)
    if scenarios_path is not None:
        write_json(
            [rec.scenario.demand.tolist() for rec in trace.iterations],
            scenarios_path,
        )


def comparison_payload(report: ComparisonReport) -> dict:
    methods = {}
    for name, ev in report.methods.items():
        methods[name] = {
            "first_stage_cost": ev.first_stage_cost,
            "mean_second_stage": ev.mean_second_stage,
            "worst_second_stage": ev.worst_second_stage,
            "mean_drop": ev.mean_drop,
            "total_average": ev.total_average,
            "total_worst": ev.total_worst,
        }
    return {
        "n_test": report.n_test,
        "v_p": report.v_p,
        "seed": report.seed,
        "methods": methods,
    }


def write_comparison(report: ComparisonReport, json_path, csv_path):
    payload = comparison_payload(report)
    write_json(payload, json_path)
    rows = []
    for method, metrics in payload["methods"].items():
        for metric, value in metrics.items():
            rows.append([method, metric, repr(value)])
    write_csv(csv_path, ["method", "metric", "value"], rows)


def _new_axes(ylabel, xlabel, title):
    fig, ax = plt.subplots(figsize=_FIGSIZE, dpi=_DPI)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    return fig, ax


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_lines(path, series, xlabel, ylabel, title):
    """`series`: {label: (xs, ys)} polylines."""
    fig, ax = _new_axes(ylabel, xlabel, title)
    for label, (xs, ys) in series.items():
        ax.plot(xs, ys, marker="o", label=label)
    ax.legend()
    _save(fig, path)


def render_bars(path, categories, series, xlabel, ylabel, title):
    """`series`: {label: values aligned with categories} grouped bars."""
    fig, ax = _new_axes(ylabel, xlabel, title)
    idx = np.arange(len(categories))
    width = 0.8 / max(1, len(series))
    for k, (label, values) in enumerate(series.items()):
        ax.bar(idx + k * width, values, width, label=label)
    ax.set_xticks(idx + width * (len(series) - 1) / 2)
    ax.set_xticklabels([str(c) for c in categories])
    ax.legend()
    _save(fig, path)


def emit_convergence(trace: CcgTrace, stem):
    """LB/UB per CCG iteration."""
    write_trace(trace, f"{stem}.csv", f"{stem}_scenarios.json")
    ks = [rec.k for rec in trace.iterations]
    render_lines(
        f"{stem}.png",
        {"LB": (ks, [rec.lb for rec in trace.iterations]),
         "UB": (ks, [rec.ub for rec in trace.iterations])},
        "iteration", "objective bound ($)", "CCG convergence",
    )


def emit_resources(inst: Instance, plans: dict[str, FirstStagePlan], stem):
    """Purchased capacity per node and method."""
    nodes = ["cloud"] + [f"EN{j + 1}" for j in range(inst.n_ens)]
    rows, series = [], {}
    for method, plan in plans.items():
        values = [plan.size_cloud] + plan.size_edge.tolist()
        series[method] = values
        rows.extend([method, node, repr(v)] for node, v in zip(nodes, values))
    write_csv(f"{stem}.csv", ["method", "node", "units"], rows)
    render_bars(f"{stem}.png", nodes, series, "node",
                "purchased capacity (units)", "Resource procurement")


def emit_realized_costs(report: ComparisonReport, stem):
    """Average and worst-case realized totals per method."""
    methods = list(report.methods)
    rows = []
    avg = [report.methods[m].total_average for m in methods]
    worst = [report.methods[m].total_worst for m in methods]
    for m, a, w in zip(methods, avg, worst):
        rows.append([m, "average", repr(a)])
        rows.append([m, "worst", repr(w)])
    write_csv(f"{stem}.csv", ["method", "metric", "value"], rows)
    render_bars(f"{stem}.png", methods, {"average": avg, "worst": worst},
                "method", "total cost ($)", "Realized cost under actual demand")


def emit_robust_vs_actual(entries, stem):
    """`entries`: rows (method, robust objective, realized average total)."""
    methods = [e[0] for e in entries]
    robust = [e[1] for e in entries]
    actual = [e[2] for e in entries]
    write_csv(
        f"{stem}.csv", ["method", "robust_objective", "actual_average_total"],
        [[m, repr(r), repr(a)] for m, r, a in entries],
    )
    render_bars(f"{stem}.png", methods, {"robust": robust, "actual": actual},
                "method", "total cost ($)", "Robust bound vs realized cost")


def emit_sweep(rows, key, stem, xlabel, title):
    """Generic cost-vs-knob emitter.

    `rows`: list of dicts with keys (key, "series", "cost"); one line per
    distinct series value.
    """
    write_csv(
        f"{stem}.csv", [key, "series", "cost"],
        [[r[key], r["series"], repr(r["cost"])] for r in rows],
    )
    series = {}
    for r in rows:
        series.setdefault(str(r["series"]), ([], []))
        series[str(r["series"])][0].append(r[key])
        series[str(r["series"])][1].append(r["cost"])
    render_lines(f"{stem}.png", series, xlabel, "total cost ($)", title)


def emit_cost_payment_vs_beta0(rows, stem):
    """`rows`: dicts (beta0, method, cost, payment)."""
    write_csv(
        f"{stem}.csv", ["beta0", "method", "cost", "payment"],
        [[r["beta0"], r["method"], repr(r["cost"]), repr(r["payment"])] for r in rows],
    )
    fig, axes = plt.subplots(1, 2, figsize=(9.6, 3.8), dpi=_DPI)
    for ax, field, label in ((axes[0], "cost", "total cost ($)"),
                             (axes[1], "payment", "payment ($)")):
        methods = sorted({r["method"] for r in rows})
        for method in methods:
            pts = sorted(
                (r["beta0"], r[field]) for r in rows if r["method"] == method
            )
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                    label=method)
        ax.set_xlabel("beta0")
        ax.set_ylabel(label)
        ax.set_xscale("log")
        ax.grid(True, alpha=0.3)
        ax.legend()
    _save(fig, f"{stem}.png")
