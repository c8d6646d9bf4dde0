"""Problem data model, random instance generation and demand scenarios.

An `Instance` carries everything the planning models need: the AP-to-EN
delay matrix derived from a random scale-free topology, per-node prices and
capacities, the provider budget and delay preference, and the forecast
demand.  Demand uncertainty lives in `UncertaintySet`: a budgeted polyhedron
around the forecast whose members are `DemandScenario` objects.

Units: demands are requests per period, purchased capacity is in compute
units (vCPUs by default) and `unit_demand` converts requests to units.  The
delay weight `beta` is stored in $ per request-millisecond; the reported
knob beta0 equals beta times the total forecast demand.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field, fields, replace

import networkx as nx
import numpy as np

from .errors import ConfigurationError, ParseError, UnsupportedEnumerationError

SCHEMA_VERSION = 1
MEMBERSHIP_TOL = 1e-9

_ARRAY_FIELDS = {
    "delay_cloud": float,
    "delay_edge": float,
    "capacity": float,
    "price_edge": float,
    "install_cost": float,
    "storage_cost": float,
    "initial_placement": int,
    "forecast": float,
}
_SCALAR_FIELDS = {
    "m_aps": int,
    "n_ens": int,
    "price_cloud": float,
    "budget": float,
    "r_min": int,
    "delay_cap": float,
    "unit_demand": float,
    "beta": float,
}


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Instance:
    """A full planning problem; immutable after construction."""

    m_aps: int
    n_ens: int
    delay_cloud: np.ndarray        # (M,) ms
    delay_edge: np.ndarray         # (M, N) ms
    capacity: np.ndarray           # (N,) compute units
    price_cloud: float             # $/unit/period
    price_edge: np.ndarray         # (N,) $/unit/period
    install_cost: np.ndarray       # (N,) $
    storage_cost: np.ndarray       # (N,) $
    initial_placement: np.ndarray  # (N,) binary
    budget: float                  # $
    r_min: int
    delay_cap: float               # ms, bound on the average delay
    unit_demand: float             # compute units per request
    beta: float                    # $/(request*ms)
    forecast: np.ndarray           # (M,) requests/period

    def __post_init__(self):
        m, n = int(self.m_aps), int(self.n_ens)
        object.__setattr__(self, "m_aps", m)
        object.__setattr__(self, "n_ens", n)
        object.__setattr__(self, "r_min", int(self.r_min))
        for name, dtype in _ARRAY_FIELDS.items():
            object.__setattr__(self, name, _frozen_array(getattr(self, name), dtype))
        shapes = {
            "delay_cloud": (m,), "delay_edge": (m, n), "capacity": (n,),
            "price_edge": (n,), "install_cost": (n,), "storage_cost": (n,),
            "initial_placement": (n,), "forecast": (m,),
        }
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise ConfigurationError(
                    f"{name} has shape {getattr(self, name).shape}, expected {shape}"
                )
        positive = {
            "delay_cloud": self.delay_cloud, "delay_edge": self.delay_edge,
            "capacity": self.capacity, "price_edge": self.price_edge,
            "install_cost": self.install_cost, "storage_cost": self.storage_cost,
            "forecast": self.forecast,
        }
        for name, arr in positive.items():
            if not np.all(arr > 0):
                raise ConfigurationError(f"{name} must be strictly positive")
        for name in ("price_cloud", "budget", "delay_cap", "unit_demand", "beta"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be strictly positive")
        if not set(np.unique(self.initial_placement)) <= {0, 1}:
            raise ConfigurationError("initial_placement must be binary")
        if not 0 <= self.r_min <= n:
            raise ConfigurationError(f"r_min={self.r_min} outside [0, {n}]")
        if self.delay_cap < self.delay_edge.min():
            raise ConfigurationError(
                "delay_cap below the smallest AP-EN delay: infeasible by construction"
            )

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            equal = np.array_equal(a, b) if isinstance(a, np.ndarray) else a == b
            if not equal:
                return False
        return True

    @property
    def beta0(self) -> float:
        return self.beta * float(self.forecast.sum())

    @property
    def placement_cost(self) -> np.ndarray:
        """Per-EN fixed cost h_j: install (waived if already placed) plus storage."""
        return self.install_cost * (1 - self.initial_placement) + self.storage_cost

    def with_beta0(self, beta0: float) -> "Instance":
        if beta0 <= 0:
            raise ConfigurationError("beta0 must be strictly positive")
        return replace(self, beta=beta0 / float(self.forecast.sum()))

    def with_demand_scale(self, factor: float) -> "Instance":
        """Scale the forecast, keeping the reported knob beta0 unchanged."""
        if factor <= 0:
            raise ConfigurationError("demand scale must be strictly positive")
        return replace(
            self, forecast=self.forecast * factor, beta=self.beta / factor
        )


@dataclass(frozen=True, eq=False)
class UncertaintySet:
    """Budgeted polyhedron of demand vectors around the forecast.

    Members are exactly the vectors forecast + g * deviation with
    |g_i| <= 1 componentwise and sum_i |g_i| <= gamma.
    """

    forecast: np.ndarray
    deviation: np.ndarray
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "forecast", _frozen_array(self.forecast))
        object.__setattr__(self, "deviation", _frozen_array(self.deviation))
        object.__setattr__(self, "gamma", float(self.gamma))
        if self.deviation.shape != self.forecast.shape:
            raise ConfigurationError("deviation and forecast shapes differ")
        if np.any(self.deviation < 0):
            raise ConfigurationError("deviation must be nonnegative")
        if np.any(self.deviation > self.forecast):
            raise ConfigurationError(
                "deviation exceeds forecast: demand could go negative"
            )
        if not 0 <= self.gamma <= len(self.forecast):
            raise ConfigurationError(
                f"gamma={self.gamma} outside [0, {len(self.forecast)}]"
            )

    @property
    def size(self) -> int:
        return len(self.forecast)

    @classmethod
    def from_instance(cls, inst: Instance, alpha, gamma: float) -> "UncertaintySet":
        """Deviation given as a ratio of the forecast (scalar or per-AP)."""
        alpha = np.asarray(alpha, dtype=float)
        if alpha.ndim == 0:
            alpha = np.full(inst.m_aps, float(alpha))
        if alpha.shape != (inst.m_aps,):
            raise ConfigurationError("alpha must be a scalar or one value per AP")
        if np.any(alpha < 0) or np.any(alpha > 1):
            raise ConfigurationError("alpha must lie in [0, 1]")
        return cls(inst.forecast, alpha * inst.forecast, gamma)

    def demand(self, g: np.ndarray) -> np.ndarray:
        return self.forecast + np.asarray(g, dtype=float) * self.deviation

    def contains(self, scenario: "DemandScenario", tol: float = MEMBERSHIP_TOL) -> bool:
        g = scenario.g
        if g.shape != self.forecast.shape:
            return False
        if np.any(np.abs(g) > 1 + tol) or np.abs(g).sum() > self.gamma + tol:
            return False
        scale = 1.0 + np.abs(self.forecast)
        return bool(np.all(np.abs(scenario.demand - self.demand(g)) <= tol * scale))


@dataclass(frozen=True, eq=False)
class DemandScenario:
    """One realization of demand plus its deviation coefficients."""

    demand: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "demand", _frozen_array(self.demand))
        object.__setattr__(self, "g", _frozen_array(self.g))
        if self.demand.shape != self.g.shape:
            raise ConfigurationError("demand and g shapes differ")

    @property
    def total(self) -> float:
        return float(self.demand.sum())

    def __eq__(self, other):
        if not isinstance(other, DemandScenario):
            return NotImplemented
        return np.array_equal(self.demand, other.demand) and np.array_equal(
            self.g, other.g
        )


@dataclass
class GeneratorParams:
    """Knobs of the random instance generator (uniform ranges unless noted)."""

    link_delay: tuple[float, float] = (2.0, 5.0)
    cloud_delay: float = 80.0
    forecast: tuple[float, float] = (1000.0, 4000.0)
    price_cloud: float = 0.03
    price_edge: tuple[float, float] = (0.04, 0.06)
    install_cost: tuple[float, float] = (0.2, 0.25)
    storage_cost: tuple[float, float] = (0.1, 0.12)
    capacity_choices: tuple[float, ...] = (2, 4, 8, 16, 32, 48, 64, 96)
    budget: float = 100.0
    r_min: int = 2
    delay_cap: float = 30.0
    unit_demand: float = 0.0004   # vCPU per request: 1 MHz on 2.5 GHz cores
    beta0: float = 0.01
    demand_scale: float = 1.0

    def validate(self):
        for name in ("link_delay", "forecast", "price_edge", "install_cost",
                     "storage_cost"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigurationError(f"{name} range inverted: ({lo}, {hi})")
            if lo <= 0:
                raise ConfigurationError(f"{name} range must be positive")
        if not self.capacity_choices:
            raise ConfigurationError("capacity_choices is empty")
        if self.demand_scale <= 0:
            raise ConfigurationError("demand_scale must be positive")


def generate_instance(n_nodes: int, attach_rate: int, m_aps: int, n_ens: int,
                      seed: int, params: GeneratorParams | None = None) -> Instance:
    """Random instance on a preferential-attachment topology.

    A scale-free graph with `n_nodes` nodes is grown at the given attachment
    rate; link delays are uniform in the configured range and node-to-node
    delays are shortest-path delays.  APs and ENs are disjoint random node
    subsets.  Deterministic for a fixed seed.
    """
    params = params or GeneratorParams()
    params.validate()
    if m_aps + n_ens > n_nodes:
        raise ConfigurationError(
            f"m_aps + n_ens = {m_aps + n_ens} exceeds n_nodes = {n_nodes}"
        )
    if m_aps < 1 or n_ens < 1:
        raise ConfigurationError("need at least one AP and one EN")

    rng = np.random.default_rng(seed)
    graph = nx.barabasi_albert_graph(n_nodes, attach_rate, seed=int(seed))
    edges = sorted(graph.edges())
    lo, hi = params.link_delay
    for (a, b), delay in zip(edges, rng.uniform(lo, hi, len(edges))):
        graph[a][b]["delay"] = delay

    nodes = rng.permutation(n_nodes)
    aps = nodes[:m_aps]
    ens = nodes[m_aps:m_aps + n_ens]

    delay_edge = np.empty((m_aps, n_ens))
    for i, ap in enumerate(aps):
        dist = nx.single_source_dijkstra_path_length(graph, int(ap), weight="delay")
        delay_edge[i] = [dist[int(en)] for en in ens]

    forecast = rng.uniform(*params.forecast, m_aps) * params.demand_scale
    price_edge = rng.uniform(*params.price_edge, n_ens)
    install = rng.uniform(*params.install_cost, n_ens)
    storage = rng.uniform(*params.storage_cost, n_ens)
    capacity = rng.choice(np.asarray(params.capacity_choices, dtype=float), n_ens)

    return Instance(
        m_aps=m_aps,
        n_ens=n_ens,
        delay_cloud=np.full(m_aps, params.cloud_delay),
        delay_edge=delay_edge,
        capacity=capacity,
        price_cloud=params.price_cloud,
        price_edge=price_edge,
        install_cost=install,
        storage_cost=storage,
        initial_placement=np.zeros(n_ens, dtype=int),
        budget=params.budget,
        r_min=params.r_min,
        delay_cap=params.delay_cap,
        unit_demand=params.unit_demand,
        beta=params.beta0 / float(forecast.sum()),
        forecast=forecast,
    )


def effective_install_cost(f_cloud, f_peer, initial) -> np.ndarray:
    """Cheapest source for installing at each EN: the cloud or an already
    provisioned peer.  With no initial placements the cloud is the only source.
    """
    f_cloud = np.asarray(f_cloud, dtype=float)
    f_peer = np.asarray(f_peer, dtype=float)
    initial = np.asarray(initial, dtype=int)
    n = len(f_cloud)
    if f_peer.shape != (n, n):
        raise ConfigurationError(f"f_peer must be {n}x{n}")
    placed = np.flatnonzero(initial == 1)
    out = f_cloud.copy()
    if len(placed):
        out = np.minimum(out, f_peer[:, placed].min(axis=1))
    return out


def sample_scenario(u: UncertaintySet, seed: int) -> DemandScenario:
    """Uniform-style draw from the uncertainty set.

    g is uniform on the box; when the deviation budget is violated the draw
    is rescaled back onto it, so membership always holds.
    """
    rng = np.random.default_rng(seed)
    g = rng.uniform(-1.0, 1.0, u.size)
    total = np.abs(g).sum()
    if total > u.gamma:
        g = g * (u.gamma / total) if total > 0 else g
    return DemandScenario(u.demand(g), g)


def sample_scenarios(u: UncertaintySet, count: int, seed: int) -> list[DemandScenario]:
    """Independent draws with consecutive sub-seeds; deterministic given seed."""
    return [sample_scenario(u, seed + t) for t in range(count)]


def enumerate_extreme_points(u: UncertaintySet, max_count: int = 10**6) -> list[DemandScenario]:
    """All vertices of the budget polyhedron, for integral gamma.

    Each vertex sets exactly gamma coordinates of g to +-1 and the rest to
    zero; gamma = 0 yields the single point g = 0.
    """
    m = u.size
    gamma_int = round(u.gamma)
    if abs(u.gamma - gamma_int) > 1e-12:
        raise UnsupportedEnumerationError(
            f"gamma={u.gamma} is not integral; vertex enumeration unsupported"
        )
    if gamma_int == 0:
        return [DemandScenario(u.demand(np.zeros(m)), np.zeros(m))]
    count = (2 ** gamma_int) * math.comb(m, gamma_int)
    if count > max_count:
        raise UnsupportedEnumerationError(
            f"{count} vertices exceed the enumeration guard of {max_count}"
        )
    points = []
    for support in itertools.combinations(range(m), gamma_int):
        for signs in itertools.product((-1.0, 1.0), repeat=gamma_int):
            g = np.zeros(m)
            g[list(support)] = signs
            points.append(DemandScenario(u.demand(g), g))
    return points


def _instance_payload(inst: Instance) -> dict:
    payload = {"schema_version": SCHEMA_VERSION}
    for name, kind in _SCALAR_FIELDS.items():
        payload[name] = kind(getattr(inst, name))
    for name in _ARRAY_FIELDS:
        arr = getattr(inst, name)
        # matrices flattened row-major; shape is implied by m_aps/n_ens
        payload[name] = arr.ravel(order="C").tolist()
    return payload


def save_instance(inst: Instance, path):
    with open(path, "w") as fh:
        json.dump(_instance_payload(inst), fh, indent=1)
        fh.write("\n")


def load_instance(path) -> Instance:
    """Strict parse: unknown fields rejected, missing fields named."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: malformed JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: expected a JSON object at top level")
    known = set(_SCALAR_FIELDS) | set(_ARRAY_FIELDS) | {"schema_version"}
    unknown = set(raw) - known
    if unknown:
        raise ParseError(f"{path}: unknown fields {sorted(unknown)}")
    missing = known - set(raw)
    if missing:
        raise ParseError(f"{path}: missing fields {sorted(missing)}")
    if raw["schema_version"] != SCHEMA_VERSION:
        raise ParseError(f"{path}: unsupported schema_version {raw['schema_version']}")
    kwargs = {}
    for name, kind in _SCALAR_FIELDS.items():
        try:
            kwargs[name] = kind(raw[name])
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{path}: field {name!r}: {exc}") from exc
    m, n = kwargs["m_aps"], kwargs["n_ens"]
    lengths = {
        "delay_cloud": m, "delay_edge": m * n, "capacity": n, "price_edge": n,
        "install_cost": n, "storage_cost": n, "initial_placement": n, "forecast": m,
    }
    for name, dtype in _ARRAY_FIELDS.items():
        values = raw[name]
        if not isinstance(values, list) or len(values) != lengths[name]:
            raise ParseError(
                f"{path}: field {name!r} must be an array of length {lengths[name]}"
            )
        arr = np.array(values, dtype=dtype)
        kwargs[name] = arr.reshape(m, n) if name == "delay_edge" else arr
    try:
        return Instance(**kwargs)
    except ConfigurationError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def write_scenarios_csv(scenarios, path):
    """Scenario set as rows of (scenario_id, ap_index, lambda)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario_id", "ap_index", "lambda"])
        for sid, scen in enumerate(scenarios):
            for i, lam in enumerate(scen.demand):
                writer.writerow([sid, i, repr(float(lam))])


def read_scenarios_csv(path, u: UncertaintySet) -> list[DemandScenario]:
    """Rebuild scenarios against an uncertainty set (g recovered from demand)."""
    demands: dict[int, dict[int, float]] = {}
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["scenario_id", "ap_index", "lambda"]:
                raise ParseError(f"{path}: expected header scenario_id,ap_index,lambda")
            for row in reader:
                sid = int(row["scenario_id"])
                demands.setdefault(sid, {})[int(row["ap_index"])] = float(row["lambda"])
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"{path}: bad scenario row: {exc}") from exc
    scenarios = []
    for sid in sorted(demands):
        per_ap = demands[sid]
        if sorted(per_ap) != list(range(u.size)):
            raise ParseError(f"{path}: scenario {sid} does not cover every AP")
        lam = np.array([per_ap[i] for i in range(u.size)])
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(u.deviation > 0, (lam - u.forecast) / u.deviation, 0.0)
        scenarios.append(DemandScenario(lam, g))
    return scenarios
