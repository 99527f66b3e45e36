import itertools
import json
from io import StringIO
from pathlib import Path

import numpy as np
import pytest
from django.conf import settings
from django.core.management import call_command

from apps.core.exceptions import InvalidK, NotStronglyConnected, RoadNetworkFormatError
from apps.network.domain import Arc, CompleteNetwork, RoadNetwork
from apps.network.services import (
    check_strong_connectivity,
    complete,
    complete_from_matrix,
    load_road_network,
    partition_zones,
    road_network_from_partition,
    shortest_path,
)

SAMPLES = Path(settings.BASE_DIR) / "samples"


def _net(arcs, nodes=None):
    nodes = nodes or sorted({a[0] for a in arcs} | {a[1] for a in arcs})
    return RoadNetwork(nodes=tuple(nodes), arcs=tuple(Arc(o, d, m, mi) for o, d, m, mi in arcs))


def _three_node():
    # no arc 1->3; the way there is 1->2->3
    return _net([
        (1, 2, 4.0, 1.0), (2, 1, 4.0, 1.0),
        (2, 3, 6.0, 2.0), (3, 2, 6.0, 2.0),
        (3, 1, 12.0, 3.5),
    ])


# ---- connectivity ----

def test_bidirectional_ring_is_strongly_connected():
    arcs = []
    for a, b in [(1, 2), (2, 3), (3, 4), (4, 1)]:
        arcs += [(a, b, 3.0, 1.0), (b, a, 3.0, 1.0)]
    assert check_strong_connectivity(_net(arcs)) is True


def test_one_way_pair_is_not_strongly_connected():
    assert check_strong_connectivity(_net([(1, 2, 5.0, 1.0)])) is False


def test_four_station_sample_is_strongly_connected():
    net = load_road_network(SAMPLES / "four_stations.json")
    assert check_strong_connectivity(net)
    assert complete(net, 2.0).m == 12


# ---- completion ----

def test_complete_two_nodes():
    cn = complete(_net([(1, 2, 10.0, 2.0), (2, 1, 10.0, 2.0)]), 2.0)
    assert cn.links == ((1, 2), (2, 1))
    assert cn.T.tolist() == [5, 5]
    assert cn.D.tolist() == [2.0, 2.0]


def test_complete_uses_virtual_link():
    cn = complete(_three_node(), 2.0)
    k = cn.link_index(1, 3)
    assert cn.T[k] == 5
    assert cn.D[k] == pytest.approx(3.0)
    assert cn.paths[k] == (1, 2, 3)


def test_short_arcs_clamp_to_one_step():
    cn = complete(_net([(1, 2, 0.5, 0.1), (2, 1, 0.5, 0.1)]), 2.0)
    assert cn.T.tolist() == [1, 1]


def test_incidence_structure():
    cn = complete(load_road_network(SAMPLES / "four_stations.json"), 3.0)
    n, m = cn.n, cn.m
    assert m == n * (n - 1)
    np.testing.assert_array_equal(cn.E_in.sum(axis=0), np.ones(m))
    np.testing.assert_array_equal(cn.E_out.sum(axis=0), np.ones(m))
    np.testing.assert_array_equal(cn.E, cn.E_in - cn.E_out)
    np.testing.assert_array_equal(cn.E.sum(axis=1), np.zeros(n))
    assert (cn.T >= 1).all()


def test_link_order_is_lexicographic():
    cn = CompleteNetwork.build((1, 2, 3), [1] * 6)
    assert cn.links == ((1, 2), (1, 3), (2, 1), (2, 3), (3, 1), (3, 2))
    n = cn.n
    for (r, s), k in cn._index.items():
        ri, si = cn.zone_index(r), cn.zone_index(s)
        assert k == ri * (n - 1) + si - (si > ri)


def test_complete_is_idempotent_on_metric_networks():
    rng = np.random.default_rng(4)
    pts = rng.uniform(0, 5, size=(5, 2))
    minutes = np.linalg.norm(pts[:, None] - pts[None], axis=2) * 4 + 1
    np.fill_diagonal(minutes, 0)
    first = complete_from_matrix(minutes, minutes / 4, step_minutes=2.0)

    again = np.zeros_like(minutes)
    miles = np.zeros_like(minutes)
    for k, (r, s) in enumerate(first.links):
        again[r - 1, s - 1] = first.minutes[k]
        miles[r - 1, s - 1] = first.D[k]
    second = complete_from_matrix(again, miles, step_minutes=2.0)
    np.testing.assert_array_equal(first.T, second.T)
    np.testing.assert_allclose(first.D, second.D)


def test_triangle_inequality_exhaustive():
    net = load_road_network(SAMPLES / "four_stations.json")
    cn = complete(net, 2.0)
    idx = cn.link_index
    for r, s, q in itertools.permutations(cn.zones, 3):
        assert cn.minutes[idx(r, s)] <= cn.minutes[idx(r, q)] + cn.minutes[idx(q, s)] + 1e-9
        assert cn.T[idx(r, s)] <= cn.T[idx(r, q)] + cn.T[idx(q, s)]


def test_complete_rejects_disconnected():
    with pytest.raises(NotStronglyConnected):
        complete(_net([(1, 2, 5.0, 1.0)]), 2.0)


# ---- shortest paths ----

def test_shortest_path_same_node():
    sp = shortest_path(_three_node(), 2, 2)
    assert (sp.minutes, sp.miles, sp.nodes) == (0.0, 0.0, (2,))


def test_shortest_path_hand_dijkstra():
    sp = shortest_path(_three_node(), 1, 3)
    assert sp.minutes == pytest.approx(10.0)
    assert sp.miles == pytest.approx(3.0)
    assert sp.nodes == (1, 2, 3)


def test_direct_arc_on_metric_complete_graph():
    pts = np.array([[0, 0], [3, 0], [0, 4], [3, 4]], dtype=float)
    arcs = [
        (i + 1, j + 1, float(np.linalg.norm(pts[i] - pts[j])) * 2, float(np.linalg.norm(pts[i] - pts[j])))
        for i in range(4) for j in range(4) if i != j
    ]
    net = _net(arcs)
    for r, s in itertools.permutations(net.nodes, 2):
        assert shortest_path(net, r, s).nodes == (r, s)


def test_tie_prefers_fewer_hops():
    net = _net([
        (1, 3, 10.0, 5.0), (1, 2, 4.0, 1.0), (2, 3, 6.0, 1.0),
        (3, 1, 1.0, 1.0), (2, 1, 1.0, 1.0),
    ])
    assert shortest_path(net, 1, 3).nodes == (1, 3)


def test_tie_prefers_lowest_ids():
    net = _net([
        (1, 3, 5.0, 1.0), (3, 4, 5.0, 1.0), (1, 2, 5.0, 2.0), (2, 4, 5.0, 2.0),
        (4, 1, 1.0, 1.0), (2, 1, 1.0, 1.0), (3, 1, 1.0, 1.0),
    ])
    sp = shortest_path(net, 1, 4)
    assert sp.nodes == (1, 2, 4)
    assert sp.miles == pytest.approx(4.0)


def test_shortest_path_unreachable():
    with pytest.raises(NotStronglyConnected):
        shortest_path(_net([(1, 2, 5.0, 1.0)]), 2, 1)


# ---- file format ----

def test_road_network_rejects_unknown_fields(tmp_path):
    doc = json.loads((SAMPLES / "four_stations.json").read_text())
    doc["arcs"][0]["lanes"] = 2
    p = tmp_path / "net.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(RoadNetworkFormatError) as exc:
        load_road_network(p)
    assert "lanes" in json.dumps(exc.value.detail)


def test_road_network_rejects_non_positive_minutes(tmp_path):
    p = tmp_path / "net.json"
    p.write_text(json.dumps({
        "nodes": [{"id": 1}, {"id": 2}],
        "arcs": [{"from": 1, "to": 2, "minutes": 0, "miles": 1}],
    }))
    with pytest.raises(RoadNetworkFormatError):
        load_road_network(p)


def test_bidirectional_flag_mirrors_arcs(tmp_path):
    p = tmp_path / "net.json"
    p.write_text(json.dumps({
        "bidirectional": True,
        "nodes": [{"id": 1}, {"id": 2}],
        "arcs": [{"from": 1, "to": 2, "minutes": 3, "miles": 1}],
    }))
    net = load_road_network(p)
    assert len(net.arcs) == 2
    assert check_strong_connectivity(net)


def test_domain_rejects_self_loop():
    with pytest.raises(RoadNetworkFormatError):
        _net([(1, 1, 1.0, 1.0), (1, 2, 1.0, 1.0)])


# ---- partitioning ----

def test_partition_k_equals_points():
    pts = np.array([[0, 0], [1, 0], [5, 5], [2, 7]], dtype=float)
    part = partition_zones(pts, 4, seed=3)
    assert sorted(part.assignment.tolist()) == [0, 1, 2, 3]
    assert part.objective == pytest.approx(0.0)


def test_partition_separates_clouds():
    rng = np.random.default_rng(0)
    a = rng.normal(0, 0.3, size=(30, 2))
    b = rng.normal(20, 0.3, size=(30, 2))
    part = partition_zones(np.vstack([a, b]), 2, seed=11)
    assert len(set(part.assignment[:30])) == 1
    assert len(set(part.assignment[30:])) == 1
    assert part.assignment[0] != part.assignment[30]


def test_partition_objective_non_increasing():
    pts = np.random.default_rng(7).uniform(0, 10, size=(20, 2))
    part = partition_zones(pts, 3, seed=1)
    hist = np.array(part.objective_history)
    assert (np.diff(hist) <= 1e-9).all()
    assert part.objective == pytest.approx(hist[-1])


def test_partition_points_go_to_nearest_center():
    pts = np.random.default_rng(2).uniform(0, 10, size=(40, 2))
    part = partition_zones(pts, 4, seed=5)
    d2 = ((pts[:, None] - part.centers[None]) ** 2).sum(axis=2)
    assert (d2[np.arange(len(pts)), part.assignment] <= d2.min(axis=1) + 1e-12).all()


def test_partition_is_deterministic():
    pts = np.random.default_rng(9).uniform(0, 10, size=(25, 2))
    a = partition_zones(pts, 3, seed=2)
    b = partition_zones(pts, 3, seed=2)
    np.testing.assert_array_equal(a.assignment, b.assignment)
    np.testing.assert_array_equal(a.centers, b.centers)


@pytest.mark.parametrize("k", [1, 4])
def test_partition_invalid_k(k):
    pts = np.array([[0, 0], [0, 0], [1, 1], [2, 2]], dtype=float)
    with pytest.raises(InvalidK):
        partition_zones(pts, k)


def test_network_from_partition_is_complete_and_connected():
    pts = np.random.default_rng(1).uniform(0, 3, size=(30, 2))
    net = road_network_from_partition(partition_zones(pts, 3, seed=0), speed_mph=15)
    assert len(net.arcs) == 6
    assert check_strong_connectivity(net)
    assert all(a.minutes == pytest.approx(4 * a.miles) for a in net.arcs)


# ---- commands ----

def test_validate_network_command():
    out = StringIO()
    call_command("validate_network", str(SAMPLES / "four_stations.json"), stdout=out)
    assert "strongly connected: true" in out.getvalue()


def test_partition_command_writes_network(tmp_path):
    pts = tmp_path / "points.json"
    pts.write_text(json.dumps({"points": [{"x": float(i % 5), "y": float(i // 5)} for i in range(20)]}))
    target = tmp_path / "zones.json"
    out = StringIO()
    call_command("partition", str(pts), "--k", "3", "--out", str(target), "--format", "json", stdout=out)
    assert json.loads(out.getvalue())["k"] == 3
    assert check_strong_connectivity(load_road_network(target))
