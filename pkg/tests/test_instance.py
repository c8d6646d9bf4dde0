import json
import math

import networkx as nx
import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.csgraph import shortest_path

from edgeplan.errors import ConfigurationError, ParseError, UnsupportedEnumerationError
from edgeplan.instance import (
    DemandScenario,
    GeneratorParams,
    Instance,
    UncertaintySet,
    effective_install_cost,
    enumerate_extreme_points,
    generate_instance,
    load_instance,
    read_scenarios_csv,
    sample_scenario,
    sample_scenarios,
    save_instance,
    write_scenarios_csv,
)


def test_generate_shapes_and_ranges():
    inst = generate_instance(100, 2, 80, 20, seed=3)
    assert inst.m_aps == 80 and inst.n_ens == 20
    assert np.all(inst.delay_cloud == 80.0)
    assert np.all((inst.forecast >= 1000) & (inst.forecast <= 4000))
    assert np.all((inst.price_edge >= 0.04) & (inst.price_edge <= 0.06))
    assert np.all((inst.install_cost >= 0.2) & (inst.install_cost <= 0.25))
    assert np.all((inst.storage_cost >= 0.1) & (inst.storage_cost <= 0.12))
    assert inst.price_cloud == 0.03
    assert np.all(inst.delay_edge >= 2.0)
    assert inst.beta == pytest.approx(0.01 / inst.forecast.sum())


def test_generate_deterministic(tmp_path):
    a = generate_instance(100, 2, 20, 5, seed=7)
    b = generate_instance(100, 2, 20, 5, seed=7)
    assert a == b
    pa, pb = tmp_path / "a.json", tmp_path / "b.json"
    save_instance(a, pa)
    save_instance(b, pb)
    assert pa.read_bytes() == pb.read_bytes()
    assert a != generate_instance(100, 2, 20, 5, seed=8)


def test_generate_validation():
    with pytest.raises(ConfigurationError):
        generate_instance(10, 2, 8, 3, seed=0)
    with pytest.raises(ConfigurationError):
        generate_instance(100, 2, 20, 5, seed=0,
                          params=GeneratorParams(link_delay=(5.0, 2.0)))
    with pytest.raises(ConfigurationError):
        generate_instance(100, 2, 20, 5, seed=0,
                          params=GeneratorParams(capacity_choices=()))


def test_delays_are_shortest_path_metric():
    # Rebuild the generator's topology draws and cross-check the delay matrix
    # against an independent all-pairs shortest path implementation.
    n_nodes, attach, m, n, seed = 60, 2, 8, 4, 13
    inst = generate_instance(n_nodes, attach, m, n, seed=seed)
    rng = np.random.default_rng(seed)
    graph = nx.barabasi_albert_graph(n_nodes, attach, seed=seed)
    edges = sorted(graph.edges())
    delays = rng.uniform(2.0, 5.0, len(edges))
    nodes = rng.permutation(n_nodes)
    aps, ens = nodes[:m], nodes[m:m + n]
    rows = [a for a, _ in edges] + [b for _, b in edges]
    cols = [b for _, b in edges] + [a for a, _ in edges]
    weights = np.concatenate([delays, delays])
    adj = sp.csr_matrix((weights, (rows, cols)), shape=(n_nodes, n_nodes))
    dist = shortest_path(adj, directed=False)
    expected = dist[np.ix_(aps, ens)]
    assert np.allclose(inst.delay_edge, expected, atol=1e-9)
    # shortest-path distances obey the triangle inequality
    trips = np.random.default_rng(0).integers(0, n_nodes, size=(200, 3))
    for a, b, c in trips:
        assert dist[a, c] <= dist[a, b] + dist[b, c] + 1e-9


def test_effective_install_cost():
    f_cloud = np.array([5.0, 7.0])
    f_peer = np.array([[9.0, 3.0], [4.0, 9.0]])
    out = effective_install_cost(f_cloud, f_peer, [0, 1])
    assert out[0] == 3.0          # peer 1 already has the service
    assert out[1] == 7.0          # own column irrelevant, cloud cheapest
    out = effective_install_cost(f_cloud, f_peer, [0, 0])
    assert np.all(out == f_cloud)  # empty peer set falls back to the cloud


def test_uncertainty_set_validation():
    f = np.array([10.0, 20.0])
    with pytest.raises(ConfigurationError):
        UncertaintySet(f, np.array([1.0, -0.1]), 1.0)
    with pytest.raises(ConfigurationError):
        UncertaintySet(f, np.array([11.0, 1.0]), 1.0)
    with pytest.raises(ConfigurationError):
        UncertaintySet(f, np.array([1.0, 1.0]), 3.0)
    u = UncertaintySet(f, np.array([1.0, 2.0]), 1.5)
    assert u.contains(DemandScenario(u.demand([0.5, -1.0]), [0.5, -1.0]))
    assert not u.contains(DemandScenario(u.demand([1.0, 1.0]), [1.0, 1.0]))


def test_sample_scenario_membership():
    inst = generate_instance(100, 2, 20, 5, seed=2)
    u = UncertaintySet.from_instance(inst, 0.3, 10.0)
    seen = set()
    for seed in range(100):
        scen = sample_scenario(u, seed)
        assert u.contains(scen)
        assert np.abs(scen.g).sum() <= u.gamma + 1e-9
        seen.add(tuple(np.round(scen.demand, 6)))
    assert len(seen) == 100


def test_sample_scenario_gamma_zero():
    inst = generate_instance(100, 2, 10, 3, seed=2)
    u = UncertaintySet.from_instance(inst, 0.3, 0.0)
    scen = sample_scenario(u, 123)
    assert np.allclose(scen.demand, u.forecast)


def test_sample_scenarios_deterministic():
    inst = generate_instance(50, 2, 8, 3, seed=4)
    u = UncertaintySet.from_instance(inst, 0.2, 4.0)
    a = sample_scenarios(u, 10, seed=77)
    b = sample_scenarios(u, 10, seed=77)
    assert all(x == y for x, y in zip(a, b))


def test_enumerate_extreme_points_small():
    u = UncertaintySet(np.array([10.0, 20.0]), np.array([1.0, 2.0]), 1.0)
    points = enumerate_extreme_points(u)
    gs = sorted(tuple(p.g) for p in points)
    assert gs == [(-1.0, 0.0), (0.0, -1.0), (0.0, 1.0), (1.0, 0.0)]

    box = UncertaintySet(np.full(3, 10.0), np.full(3, 1.0), 3.0)
    points = enumerate_extreme_points(box)
    assert len(points) == 8
    assert all(set(np.abs(p.g)) == {1.0} for p in points)

    single = enumerate_extreme_points(
        UncertaintySet(np.array([5.0]), np.array([1.0]), 0.0)
    )
    assert len(single) == 1 and np.all(single[0].g == 0)


def test_enumerate_count_formula():
    rng = np.random.default_rng(9)
    for _ in range(6):
        m = int(rng.integers(2, 7))
        gamma = int(rng.integers(1, m + 1))
        u = UncertaintySet(rng.uniform(5, 10, m), rng.uniform(0, 3, m), gamma)
        points = enumerate_extreme_points(u)
        assert len(points) == 2 ** gamma * math.comb(m, gamma)
        assert all(u.contains(p) for p in points)


def test_enumerate_guards():
    u = UncertaintySet(np.full(4, 10.0), np.full(4, 1.0), 1.5)
    with pytest.raises(UnsupportedEnumerationError):
        enumerate_extreme_points(u)
    big = UncertaintySet(np.full(30, 10.0), np.full(30, 1.0), 15.0)
    with pytest.raises(UnsupportedEnumerationError):
        enumerate_extreme_points(big)


def test_instance_roundtrip(tmp_path):
    inst = generate_instance(40, 2, 6, 3, seed=21)
    path = tmp_path / "inst.json"
    save_instance(inst, path)
    assert load_instance(path) == inst


def test_instance_parse_errors(tmp_path):
    inst = generate_instance(40, 2, 4, 2, seed=21)
    path = tmp_path / "inst.json"
    save_instance(inst, path)
    raw = json.loads(path.read_text())

    missing = dict(raw)
    del missing["budget"]
    bad = tmp_path / "missing.json"
    bad.write_text(json.dumps(missing))
    with pytest.raises(ParseError, match="budget"):
        load_instance(bad)

    extra = dict(raw)
    extra["surprise"] = 1
    bad.write_text(json.dumps(extra))
    with pytest.raises(ParseError, match="surprise"):
        load_instance(bad)

    bad.write_text("{not json")
    with pytest.raises(ParseError, match="line"):
        load_instance(bad)

    wrong = dict(raw)
    wrong["forecast"] = wrong["forecast"][:-1]
    bad.write_text(json.dumps(wrong))
    with pytest.raises(ParseError, match="forecast"):
        load_instance(bad)

    with pytest.raises(ParseError):
        load_instance(tmp_path / "nope.json")


def test_instance_validation():
    kwargs = dict(
        m_aps=1, n_ens=1, delay_cloud=[80.0], delay_edge=[[5.0]],
        capacity=[10.0], price_cloud=0.03, price_edge=[0.05],
        install_cost=[0.2], storage_cost=[0.1], initial_placement=[0],
        budget=100.0, r_min=1, delay_cap=30.0, unit_demand=1.0,
        beta=0.01, forecast=[10.0],
    )
    Instance(**kwargs)
    for patch in (
        {"r_min": 2}, {"delay_cap": 4.0}, {"forecast": [0.0]},
        {"budget": 0.0}, {"initial_placement": [2]}, {"capacity": [-1.0]},
    ):
        with pytest.raises(ConfigurationError):
            Instance(**{**kwargs, **patch})


def test_beta0_and_demand_scale(base_instance):
    inst = base_instance
    assert inst.beta0 == pytest.approx(0.01)
    heavier = inst.with_beta0(0.05)
    assert heavier.beta0 == pytest.approx(0.05)
    doubled = inst.with_demand_scale(2.0)
    assert doubled.forecast.sum() == pytest.approx(2 * inst.forecast.sum())
    assert doubled.beta0 == pytest.approx(inst.beta0)


def test_scenario_csv_roundtrip(tmp_path):
    inst = generate_instance(40, 2, 5, 2, seed=30)
    u = UncertaintySet.from_instance(inst, 0.25, 2.0)
    scenarios = sample_scenarios(u, 7, seed=3)
    path = tmp_path / "scen.csv"
    write_scenarios_csv(scenarios, path)
    back = read_scenarios_csv(path, u)
    assert len(back) == 7
    for orig, loaded in zip(scenarios, back):
        assert np.allclose(orig.demand, loaded.demand)
        assert u.contains(loaded)
    assert path.read_text().splitlines()[0] == "scenario_id,ap_index,lambda"


def test_scenario_csv_errors(tmp_path):
    inst = generate_instance(40, 2, 5, 2, seed=30)
    u = UncertaintySet.from_instance(inst, 0.25, 2.0)
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ParseError):
        read_scenarios_csv(bad, u)
    bad.write_text("scenario_id,ap_index,lambda\n0,0,100.0\n")
    with pytest.raises(ParseError, match="cover"):
        read_scenarios_csv(bad, u)
