"""Road network graph: intersections as nodes, segments as links.

Construction planarizes the segment set (nodes at endpoints and at
crossings), then contracts chains through degree-2 nodes into single edges
that carry summed length and summed free-flow travel time, so shortest-path
times are preserved by simplification. Node ids are renumbered by sorted
coordinates, making the graph independent of input record order.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass

import numpy as np

from .config import DEFAULT_SPEED_TABLE, DataError
from .geodata import Grid, PointLayer, RoadSegment

logger = logging.getLogger(__name__)

# Coordinates are quantized to this (meters) when merging nodes.
NODE_QUANTUM = 1e-6
# Classes missing from the speed table fall back to the slowest-class floor.
SPEED_FLOOR_KMH = 30.0


@dataclass(frozen=True)
class NetEdge:
    u: int
    v: int
    length: float
    time_min: float
    road_class: str | None  # None for contracted chains of mixed class


@dataclass
class RoadNetwork:
    node_xy: list[tuple[float, float]]
    edges: list[NetEdge]

    @property
    def n_nodes(self) -> int:
        return len(self.node_xy)

    def degrees(self) -> list[int]:
        deg = [0] * len(self.node_xy)
        for e in self.edges:
            deg[e.u] += 1
            deg[e.v] += 1  # self-loop counts twice
        return deg

    def adjacency(self) -> list[list[tuple[int, float]]]:
        adj: list[list[tuple[int, float]]] = [[] for _ in self.node_xy]
        for e in self.edges:
            adj[e.u].append((e.v, e.time_min))
            if e.v != e.u:
                adj[e.v].append((e.u, e.time_min))
        return adj

    def total_length(self) -> float:
        return float(sum(sorted(e.length for e in self.edges)))


def _edge_time_min(length: float, road_class: str,
                   speed_table: dict[str, float]) -> float:
    speed = speed_table.get(road_class, SPEED_FLOOR_KMH)
    return length * 60.0 / (speed * 1000.0)


def _quantize(p: tuple[float, float]) -> tuple[float, float]:
    return (round(p[0] / NODE_QUANTUM) * NODE_QUANTUM,
            round(p[1] / NODE_QUANTUM) * NODE_QUANTUM)


def _crossing(p0, p1, q0, q1):
    """Intersection of two segments as (t, u, point), or None.

    Parallel and collinear pairs return None; coincident endpoints merge
    later through coordinate quantization anyway.
    """
    rx, ry = p1[0] - p0[0], p1[1] - p0[1]
    sx, sy = q1[0] - q0[0], q1[1] - q0[1]
    denom = rx * sy - ry * sx
    if abs(denom) <= 1e-12 * max(1.0, abs(rx) + abs(ry)) * max(1.0, abs(sx) + abs(sy)):
        return None
    qpx, qpy = q0[0] - p0[0], q0[1] - p0[1]
    t = (qpx * sy - qpy * sx) / denom
    u = (qpx * ry - qpy * rx) / denom
    eps = 1e-9
    if -eps <= t <= 1 + eps and -eps <= u <= 1 + eps:
        t = min(max(t, 0.0), 1.0)
        u = min(max(u, 0.0), 1.0)
        point = (p0[0] + t * rx, p0[1] + t * ry)
        return t, u, point
    return None


def build_road_graph(segments: list[RoadSegment], classes,
                     speed_table: dict[str, float] | None = None,
                     contract: bool = True) -> RoadNetwork:
    """Planar multigraph from class-filtered segments, degree-2 simplified."""
    classes = set(classes)
    if not classes:
        raise DataError("road class set must be nonempty")
    speed_table = dict(speed_table or DEFAULT_SPEED_TABLE)

    kept = [s for s in segments if s.road_class in classes]
    if not kept:
        return RoadNetwork([], [])

    # split polylines into straight sub-segments
    subs = []  # (p0, p1, class)
    for seg in kept:
        pts = seg.polyline
        for i in range(len(pts) - 1):
            if pts[i] != pts[i + 1]:
                subs.append((pts[i], pts[i + 1], seg.road_class))

    # pairwise crossings via x-interval sweep
    splits: list[list[tuple[float, tuple[float, float]]]] = [[] for _ in subs]
    order = sorted(range(len(subs)),
                   key=lambda i: min(subs[i][0][0], subs[i][1][0]))
    max_xs = [max(subs[i][0][0], subs[i][1][0]) for i in range(len(subs))]
    for a_pos, i in enumerate(order):
        p0, p1, _ = subs[i]
        for j in order[a_pos + 1:]:
            if min(subs[j][0][0], subs[j][1][0]) > max_xs[i]:
                break
            q0, q1, _ = subs[j]
            hit = _crossing(p0, p1, q0, q1)
            if hit is None:
                continue
            t, u, point = hit
            if 1e-9 < t < 1 - 1e-9:
                splits[i].append((t, point))
            if 1e-9 < u < 1 - 1e-9:
                splits[j].append((u, point))

    # assemble raw multigraph with quantized nodes
    node_ids: dict[tuple[float, float], int] = {}
    node_xy: list[tuple[float, float]] = []

    def node_of(p):
        key = _quantize(p)
        if key not in node_ids:
            node_ids[key] = len(node_xy)
            node_xy.append(key)
        return node_ids[key]

    raw_edges: list[NetEdge] = []
    for i, (p0, p1, cls) in enumerate(subs):
        cuts = sorted(set(splits[i]), key=lambda s: s[0])
        chain = [p0] + [pt for _, pt in cuts] + [p1]
        for a, b in zip(chain, chain[1:]):
            u, v = node_of(a), node_of(b)
            if u == v:
                continue
            length = math.hypot(b[0] - a[0], b[1] - a[1])
            raw_edges.append(NetEdge(u, v, length, _edge_time_min(length, cls, speed_table), cls))

    net = _renumber(node_xy, raw_edges)
    if contract:
        net = _contract_degree2(net)
    return net


def _renumber(node_xy, edges) -> RoadNetwork:
    """Compact node ids sorted by coordinates; drop isolated nodes."""
    used = set()
    for e in edges:
        used.add(e.u)
        used.add(e.v)
    keep = sorted(used, key=lambda i: node_xy[i])
    remap = {old: new for new, old in enumerate(keep)}
    new_xy = [node_xy[i] for i in keep]
    new_edges = []
    for e in edges:
        u, v = remap[e.u], remap[e.v]
        if u > v:
            u, v = v, u
        new_edges.append(NetEdge(u, v, e.length, e.time_min, e.road_class))
    new_edges.sort(key=lambda e: (e.u, e.v, e.length, e.time_min))
    return RoadNetwork(new_xy, new_edges)


def _contract_degree2(net: RoadNetwork) -> RoadNetwork:
    n = net.n_nodes
    incident: list[list[int]] = [[] for _ in range(n)]
    for ei, e in enumerate(net.edges):
        incident[e.u].append(ei)
        incident[e.v].append(ei)  # self-loops appear twice
    degree = [len(lst) for lst in incident]
    consumed = [False] * len(net.edges)
    out: list[NetEdge] = []

    def other_end(ei, at):
        e = net.edges[ei]
        return e.v if e.u == at else e.u

    def walk(start, first_ei):
        """Follow a chain of degree-2 nodes from an anchor; returns the merged edge."""
        total_len = net.edges[first_ei].length
        total_time = net.edges[first_ei].time_min
        classes = {net.edges[first_ei].road_class}
        consumed[first_ei] = True
        cur = other_end(first_ei, start)
        while cur != start and degree[cur] == 2:
            nxt = [e for e in incident[cur] if not consumed[e]]
            if not nxt:
                break
            ei = nxt[0]
            consumed[ei] = True
            total_len += net.edges[ei].length
            total_time += net.edges[ei].time_min
            classes.add(net.edges[ei].road_class)
            cur = other_end(ei, cur)
        cls = classes.pop() if len(classes) == 1 else None
        return NetEdge(start, cur, total_len, total_time, cls)

    anchors = [u for u in range(n) if degree[u] != 2]
    for a in anchors:
        for ei in incident[a]:
            if consumed[ei]:
                continue
            e = net.edges[ei]
            if e.u == e.v:  # anchor self-loop kept as is
                consumed[ei] = True
                out.append(e)
                continue
            out.append(walk(a, ei))

    # leftover components are pure degree-2 cycles: keep the lowest node as
    # anchor and fold the cycle into a self-loop so the component survives
    for ei in range(len(net.edges)):
        if consumed[ei]:
            continue
        e = net.edges[ei]
        cycle_nodes = {e.u, e.v}
        total_len, total_time = e.length, e.time_min
        classes = {e.road_class}
        consumed[ei] = True
        cur, start = e.v, e.u
        while cur != start:
            nxt = [x for x in incident[cur] if not consumed[x]]
            if not nxt:
                break
            nei = nxt[0]
            consumed[nei] = True
            total_len += net.edges[nei].length
            total_time += net.edges[nei].time_min
            classes.add(net.edges[nei].road_class)
            cur = other_end(nei, cur)
            cycle_nodes.add(cur)
        anchor = min(cycle_nodes)
        cls = classes.pop() if len(classes) == 1 else None
        out.append(NetEdge(anchor, anchor, total_len, total_time, cls))

    return _renumber(net.node_xy, out)


# ---------------------------------------------------------------------------
# assortativity

def assortativity_coefficient(net: RoadNetwork) -> float | None:
    """Pearson correlation of node degrees across edge ends, each edge
    counted in both orientations. None when degenerate (no edges, or a
    regular graph with zero degree variance)."""
    if not net.edges:
        return None
    deg = net.degrees()
    xs, ys = [], []
    for e in net.edges:
        xs.append(deg[e.u]); ys.append(deg[e.v])
        xs.append(deg[e.v]); ys.append(deg[e.u])
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    mean = x.mean()  # x and y hold the same multiset
    dx, dy = x - mean, y - mean
    var = float(dx @ dx)
    if var <= 1e-12 * len(x):
        return None
    r = float((dx @ dy) / var)
    return min(1.0, max(-1.0, r))


# ---------------------------------------------------------------------------
# travel times

def dijkstra_times(net: RoadNetwork, source: int,
                   adj: list[list[tuple[int, float]]] | None = None) -> np.ndarray:
    """Shortest free-flow travel time (minutes) from one node to all nodes."""
    if adj is None:
        adj = net.adjacency()
    dist = np.full(net.n_nodes, np.inf)
    dist[source] = 0.0
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v, t in adj[u]:
            nd = d + t
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def snap_to_node(net: RoadNetwork, point: tuple[float, float]) -> int | None:
    """Nearest network node by Euclidean distance; ties take the lowest id."""
    if net.n_nodes == 0:
        return None
    best, best_d = 0, math.inf
    for i, (x, y) in enumerate(net.node_xy):
        d = math.hypot(x - point[0], y - point[1])
        if d < best_d:
            best, best_d = i, d
    return best


def travel_time_matrix(net: RoadNetwork, grid: Grid,
                       facilities: PointLayer) -> np.ndarray:
    """Minutes from each cell centroid to each facility, both snapped to
    their nearest network node. Unreachable pairs are +inf."""
    m, n_fac = len(grid.cells), len(facilities.points)
    tt = np.full((m, n_fac), np.inf)
    if n_fac == 0:
        return tt
    if net.n_nodes == 0:
        logger.warning("travel_time_matrix: empty road network, all times +inf")
        return tt
    adj = net.adjacency()
    cell_nodes = [snap_to_node(net, c.centroid) for c in grid.cells]
    fac_nodes = [snap_to_node(net, (p.x, p.y)) for p in facilities.points]
    dist_cache: dict[int, np.ndarray] = {}
    for f, fn in enumerate(fac_nodes):
        if fn not in dist_cache:
            dist_cache[fn] = dijkstra_times(net, fn, adj)
        dist = dist_cache[fn]
        for i, cn in enumerate(cell_nodes):
            tt[i, f] = dist[cn]
    return tt
