import itertools
import math

import networkx as nx
import numpy as np
import pytest

from resilgrid.config import DataError
from resilgrid.geodata import PointLayer, LayerPoint, RoadSegment, build_grid
from resilgrid.roadnet import (
    NetEdge,
    RoadNetwork,
    assortativity_coefficient,
    build_road_graph,
    dijkstra_times,
    snap_to_node,
    travel_time_matrix,
)

CLASSES = {"primary", "secondary", "tertiary"}


def seg(points, cls="primary"):
    return RoadSegment.from_polyline(points, cls)


def simple_net(edge_list):
    """Hand-built network: edges as (u, v); unit lengths/times."""
    n = max(max(u, v) for u, v in edge_list) + 1
    nodes = [(float(i), 0.0) for i in range(n)]
    edges = [NetEdge(u, v, 1.0, 1.0, "primary") for u, v in edge_list]
    return RoadNetwork(nodes, edges)


# ---------------------------------------------------------------------------
# construction

class TestBuildGraph:
    def test_collinear_chain_contracts(self):
        segments = [seg([(0, 0), (100, 0)]), seg([(100, 0), (250, 0)]),
                    seg([(250, 0), (400, 0)])]
        net = build_road_graph(segments, CLASSES)
        assert net.n_nodes == 2
        assert len(net.edges) == 1
        assert net.edges[0].length == pytest.approx(400.0)

    def test_x_crossing_five_nodes(self):
        segments = [seg([(0, 0), (100, 100)]), seg([(0, 100), (100, 0)])]
        raw = build_road_graph(segments, CLASSES, contract=False)
        assert raw.n_nodes == 5
        assert len(raw.edges) == 4
        net = build_road_graph(segments, CLASSES)
        degrees = net.degrees()
        assert sorted(degrees) == [1, 1, 1, 1, 4]

    def test_t_junction_splits_through_segment(self):
        segments = [seg([(0, 0), (200, 0)]), seg([(100, 0), (100, 150)])]
        raw = build_road_graph(segments, CLASSES, contract=False)
        assert raw.n_nodes == 4  # two ends, T point, stub end
        assert len(raw.edges) == 3

    def test_class_filter(self):
        segments = [seg([(0, 0), (100, 0)], "primary"),
                    seg([(0, 50), (100, 50)], "footway")]
        net = build_road_graph(segments, CLASSES)
        assert len(net.edges) == 1

    def test_empty_after_filter_is_valid(self):
        net = build_road_graph([seg([(0, 0), (1, 0)], "footway")], CLASSES)
        assert net.n_nodes == 0 and net.edges == []

    def test_empty_class_set_rejected(self):
        with pytest.raises(DataError, match="nonempty"):
            build_road_graph([seg([(0, 0), (1, 0)])], set())

    def test_street_grid_matches_brute_force_oracle(self):
        # 3 horizontal x 3 vertical full-width streets
        hs = [seg([(0, y), (400, y)]) for y in (100, 200, 300)]
        vs = [seg([(x, 0), (x, 400)]) for x in (100, 200, 300)]
        net = build_road_graph(hs + vs, CLASSES)

        # oracle: enumerate intersections by brute force on line equations
        crossings = {(x, y) for x in (100, 200, 300) for y in (100, 200, 300)}
        endpoints = {(0, y) for y in (100, 200, 300)} | \
                    {(400, y) for y in (100, 200, 300)} | \
                    {(x, 0) for x in (100, 200, 300)} | \
                    {(x, 400) for x in (100, 200, 300)}
        # all crossings have degree 4 (streets extend beyond), endpoints 1;
        # no degree-2 nodes so contraction is a no-op
        assert net.n_nodes == len(crossings) + len(endpoints)
        expected_edges = sum(4 for _ in hs) + sum(4 for _ in vs)
        assert len(net.edges) == expected_edges
        node_set = {(round(x), round(y)) for x, y in net.node_xy}
        assert node_set == {(int(x), int(y)) for x, y in crossings | endpoints}

    def test_contraction_preserves_total_length(self):
        rng = np.random.default_rng(5)
        pts = rng.uniform(0, 1000, size=(30, 2, 2))
        segments = [seg([tuple(p[0]), tuple(p[1])]) for p in pts]
        raw = build_road_graph(segments, CLASSES, contract=False)
        net = build_road_graph(segments, CLASSES)
        assert net.total_length() == pytest.approx(raw.total_length(), rel=1e-6)

    def test_pure_cycle_keeps_anchor(self):
        ring = [seg([(0, 0), (100, 0)]), seg([(100, 0), (100, 100)]),
                seg([(100, 100), (0, 100)]), seg([(0, 100), (0, 0)])]
        net = build_road_graph(ring, CLASSES)
        assert net.n_nodes == 1
        assert len(net.edges) == 1
        e = net.edges[0]
        assert e.u == e.v
        assert e.length == pytest.approx(400.0)

    def test_record_order_invariance(self):
        segments = [seg([(0, 0), (100, 100)]), seg([(0, 100), (100, 0)]),
                    seg([(50, 50), (300, 50)]), seg([(300, 50), (300, 300)])]
        a = build_road_graph(segments, CLASSES)
        b = build_road_graph(segments[::-1], CLASSES)
        assert a.node_xy == b.node_xy
        assert [(e.u, e.v, e.length) for e in a.edges] == \
               [(e.u, e.v, e.length) for e in b.edges]


# ---------------------------------------------------------------------------
# assortativity

def excess_degree_assortativity(net: RoadNetwork):
    """Direct evaluation over the joint excess-degree distribution e_jk:
    (1/sigma_q^2) * sum_jk jk (e_jk - q_j q_k)."""
    if not net.edges:
        return None
    deg = net.degrees()
    ends = []
    for e in net.edges:
        ends.append((deg[e.u] - 1, deg[e.v] - 1))
        ends.append((deg[e.v] - 1, deg[e.u] - 1))
    n = len(ends)
    max_j = max(max(a, b) for a, b in ends)
    e_jk = np.zeros((max_j + 1, max_j + 1))
    for a, b in ends:
        e_jk[a, b] += 1.0 / n
    q = e_jk.sum(axis=1)  # marginal excess-degree distribution
    js = np.arange(max_j + 1)
    var_q = float((js ** 2 * q).sum() - (js * q).sum() ** 2)
    if var_q <= 1e-12:  # tolerate 1/n accumulation noise in e_jk
        return None
    s = 0.0
    for j in range(max_j + 1):
        for k in range(max_j + 1):
            s += j * k * (e_jk[j, k] - q[j] * q[k])
    return s / var_q


class TestAssortativity:
    def test_star_is_minus_one(self):
        net = simple_net([(0, 1), (0, 2), (0, 3)])
        assert assortativity_coefficient(net) == pytest.approx(-1.0, abs=1e-9)

    def test_path_p4(self):
        net = simple_net([(0, 1), (1, 2), (2, 3)])
        assert assortativity_coefficient(net) == pytest.approx(-0.5, abs=1e-9)

    def test_cycle_degenerate(self):
        net = simple_net([(0, 1), (1, 2), (2, 0)])
        assert assortativity_coefficient(net) is None

    def test_no_edges_degenerate(self):
        assert assortativity_coefficient(RoadNetwork([(0.0, 0.0)], [])) is None

    def test_matches_excess_degree_formula_small_graphs(self):
        rng = np.random.default_rng(17)
        checked = 0
        for _ in range(300):
            n = int(rng.integers(3, 9))
            possible = list(itertools.combinations(range(n), 2))
            k = int(rng.integers(1, len(possible) + 1))
            chosen = [possible[i] for i in rng.choice(len(possible), k, replace=False)]
            net = simple_net(chosen)
            ours = assortativity_coefficient(net)
            oracle = excess_degree_assortativity(net)
            if oracle is None:
                assert ours is None
            else:
                checked += 1
                assert ours == pytest.approx(oracle, abs=1e-9)
        assert checked > 100

    def test_exhaustive_four_node_graphs(self):
        # all 63 nonempty labeled graphs on 4 nodes
        pairs = list(itertools.combinations(range(4), 2))
        for bits in range(1, 2 ** len(pairs)):
            edges = [pairs[i] for i in range(len(pairs)) if bits >> i & 1]
            net = simple_net(edges)
            ours = assortativity_coefficient(net)
            oracle = excess_degree_assortativity(net)
            if oracle is None:
                assert ours is None
            else:
                assert ours == pytest.approx(oracle, abs=1e-9)

    def test_matches_networkx(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            g = nx.gnm_random_graph(8, int(rng.integers(3, 16)), seed=int(rng.integers(1e6)))
            if g.number_of_edges() == 0:
                continue
            net = simple_net(list(g.edges()) or [(0, 1)])
            ours = assortativity_coefficient(net)
            with np.errstate(invalid="ignore"):
                ref = nx.degree_assortativity_coefficient(g)
            if math.isnan(ref):
                assert ours is None
            else:
                assert ours == pytest.approx(ref, abs=1e-9)

    def test_relabeling_invariance(self):
        edges = [(0, 1), (1, 2), (1, 3), (3, 4)]
        perm = {0: 4, 1: 2, 2: 0, 3: 1, 4: 3}
        a = assortativity_coefficient(simple_net(edges))
        b = assortativity_coefficient(simple_net([(perm[u], perm[v]) for u, v in edges]))
        assert a == pytest.approx(b, abs=1e-12)


# ---------------------------------------------------------------------------
# travel times

class TestTravelTimes:
    def test_same_node_zero(self):
        grid = build_grid((0, 0, 2000, 2000), 2000)
        net = build_road_graph([seg([(1000, 1000), (1000, 3000)])], CLASSES)
        fac = PointLayer([LayerPoint(1000.0, 1000.0)])
        tt = travel_time_matrix(net, grid, fac)
        assert tt[0, 0] == 0.0

    def test_thirty_km_at_sixty_kmh(self):
        grid = build_grid((0, 0, 2000, 2000), 2000)
        # cell centroid snaps to (1000, 1000); facility to the far end
        net = build_road_graph([seg([(1000, 1000), (31000, 1000)], "primary")],
                               CLASSES)
        fac = PointLayer([LayerPoint(31000.0, 1000.0)])
        tt = travel_time_matrix(net, grid, fac)
        assert tt[0, 0] == pytest.approx(30.0)

    def test_mixed_classes_match_path_enumeration(self):
        # triangle with distinct classes plus stubs so corners stay anchors;
        # the primary+secondary chain contracts into one mixed-class edge
        segments = [
            seg([(0, 0), (10000, 0)], "primary"),      # 10 km @ 60 -> 10 min
            seg([(10000, 0), (10000, 5000)], "secondary"),  # 5 km @ 50 -> 6 min
            seg([(0, 0), (10000, 5000)], "tertiary"),   # ~11.18 km @ 40
            seg([(0, 0), (-100, 0)], "tertiary"),
            seg([(10000, 5000), (10100, 5000)], "tertiary"),
        ]
        net = build_road_graph(segments, CLASSES)
        adj = net.adjacency()
        start = snap_to_node(net, (0, 0))
        target = snap_to_node(net, (10000, 5000))
        stub = 100 * 60 / 40000
        direct = math.hypot(10000, 5000) * 60 / 40000
        via = 10000 * 60 / 60000 + 5000 * 60 / 50000
        expected = min(direct, via)  # = 16.0 via the contracted chain
        dist = dijkstra_times(net, start, adj)
        assert dist[target] == pytest.approx(expected, rel=1e-12)
        assert dist[snap_to_node(net, (10100, 5000))] == \
            pytest.approx(expected + stub, rel=1e-12)
        merged = [e for e in net.edges if e.road_class is None]
        assert len(merged) == 1  # the mixed primary+secondary chain

    def test_unreachable_is_inf(self):
        segments = [seg([(0, 0), (100, 0)]), seg([(5000, 5000), (5100, 5000)])]
        net = build_road_graph(segments, CLASSES)
        a = snap_to_node(net, (0, 0))
        b = snap_to_node(net, (5000, 5000))
        assert math.isinf(dijkstra_times(net, a)[b])

    def test_empty_network_warns_all_inf(self, caplog):
        grid = build_grid((0, 0, 2000, 2000), 2000)
        fac = PointLayer([LayerPoint(0.0, 0.0)])
        with caplog.at_level("WARNING"):
            tt = travel_time_matrix(RoadNetwork([], []), grid, fac)
        assert np.isinf(tt).all()
        assert any("empty road network" in r.message for r in caplog.records)

    def test_contraction_preserves_shortest_times(self):
        rng = np.random.default_rng(9)
        pts = rng.uniform(0, 2000, size=(14, 2, 2))
        classes = ["primary", "secondary", "tertiary"]
        segments = [
            seg([tuple(p[0]), tuple(p[1]), tuple(p[1] + rng.uniform(10, 400, 2))],
                classes[i % 3])
            for i, p in enumerate(pts)
        ]
        raw = build_road_graph(segments, CLASSES, contract=False)
        net = build_road_graph(segments, CLASSES)
        # every contracted node must keep identical pairwise times
        kept = {xy: i for i, xy in enumerate(net.node_xy)}
        raw_ids = {xy: i for i, xy in enumerate(raw.node_xy)}
        shared = [xy for xy in kept if xy in raw_ids]
        assert len(shared) >= 2
        for a in shared[:5]:
            d_raw = dijkstra_times(raw, raw_ids[a])
            d_net = dijkstra_times(net, kept[a])
            for b in shared:
                x, y = d_raw[raw_ids[b]], d_net[kept[b]]
                if math.isinf(x) or math.isinf(y):
                    assert math.isinf(x) == math.isinf(y)
                else:
                    assert x == pytest.approx(y, abs=1e-9)

    def test_snap_tie_lowest_id(self):
        net = RoadNetwork([(0.0, 0.0), (2.0, 0.0)],
                          [NetEdge(0, 1, 2.0, 1.0, "primary")])
        assert snap_to_node(net, (1.0, 0.0)) == 0
