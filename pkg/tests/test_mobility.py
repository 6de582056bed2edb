import networkx as nx
import numpy as np
import pytest

from app.services.mobility import (
    LinkChangeKind,
    LinkScanner,
    RandomWaypoint,
    connectivity_graph,
    link_change_scan,
    within_range,
)


def waypoint(seed=1, nodes=10, speed=10.0, pause=0.0):
    return RandomWaypoint(nodes, 1000.0, 1000.0, speed, pause, np.random.SeedSequence(seed))


def test_unit_disk_is_boundary_inclusive_and_symmetric():
    positions = np.array([[0.0, 0.0], [250.0, 0.0], [0.0, 250.0001]])
    adjacency = within_range(positions, 250.0)
    assert adjacency[0, 1] and adjacency[1, 0]
    assert not adjacency[0, 2]
    assert not adjacency.diagonal().any()
    assert (adjacency == adjacency.T).all()


def test_connectivity_graph_of_a_line():
    positions = np.array([[0.0, 0.0], [200.0, 0.0], [400.0, 0.0]])
    graph = connectivity_graph(positions, 250.0)
    assert sorted(graph.edges()) == [(0, 1), (1, 2)]
    assert nx.shortest_path_length(graph, 0, 2) == 2


def test_same_seed_same_trajectory():
    a, b = waypoint(seed=5), waypoint(seed=5)
    for t in (0.0, 12.5, 37.25, 200.0):
        assert np.array_equal(a.positions(t), b.positions(t))
    assert not np.array_equal(waypoint(seed=6).positions(37.25), waypoint(seed=5).positions(37.25))


def test_positions_stay_inside_the_field():
    model = waypoint(nodes=20, speed=30.0)
    for t in np.arange(0.0, 300.0, 0.7):
        pos = model.positions(float(t))
        assert (pos >= 0.0).all()
        assert (pos[:, 0] <= 1000.0).all() and (pos[:, 1] <= 1000.0).all()


def test_nodes_never_exceed_their_speed():
    model = waypoint(nodes=15, speed=20.0)
    previous = model.positions(0.0)
    for t in np.arange(0.1, 60.0, 0.1):
        current = model.positions(float(t))
        step = np.hypot(*(current - previous).T)
        assert (step <= 20.0 * 0.1 + 1e-6).all()
        previous = current


def test_waypoint_sequence_does_not_depend_on_speed():
    slow, fast = waypoint(seed=9, speed=2.0), waypoint(seed=9, speed=30.0)
    slow.positions(0.0)
    fast.positions(0.0)
    for node in range(slow.nodes):
        assert slow.state(node).target == fast.state(node).target


def test_pause_equal_to_duration_is_a_static_network():
    model = waypoint(pause=100.0)
    start = model.positions(0.0)
    assert np.array_equal(model.positions(100.0), start)
    changes = link_change_scan(waypoint(pause=100.0), 250.0, dt_s=0.5, horizon_s=100.0)
    assert changes == []


def test_backwards_queries_are_rejected():
    model = waypoint()
    model.positions(10.0)
    with pytest.raises(ValueError):
        model.positions(5.0)


def test_scanner_reports_breaks_and_formations():
    scanner = LinkScanner(250.0)
    near = np.array([[0.0, 0.0], [200.0, 0.0]])
    far = np.array([[0.0, 0.0], [300.0, 0.0]])
    assert scanner.scan(near, 0) == []
    [broken] = scanner.scan(far, 100_000)
    assert (broken.a, broken.b, broken.kind) == (0, 1, LinkChangeKind.BROKEN)
    [formed] = scanner.scan(near, 200_000)
    assert formed.kind is LinkChangeKind.FORMED
    assert scanner.last_mean_degree == 1.0


def test_faster_nodes_break_more_links():
    slow = link_change_scan(waypoint(seed=3, nodes=20, speed=2.0), 250.0, dt_s=0.1, horizon_s=120.0)
    fast = link_change_scan(waypoint(seed=3, nodes=20, speed=30.0), 250.0, dt_s=0.1, horizon_s=120.0)
    assert len(fast) > len(slow)
