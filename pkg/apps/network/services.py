# apps/network/services.py
from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import networkx as nx
import numpy as np
from scipy.spatial.distance import cdist

from apps.core.exceptions import InvalidK, NotStronglyConnected, RoadNetworkFormatError
from apps.core.serializers import load_document

from .domain import Arc, CompleteNetwork, RoadNetwork, ZonePartition, link_order
from .serializers import PointsFileSerializer, RoadNetworkFileSerializer

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ShortestPath:
    minutes: float
    miles: float
    nodes: tuple[int, ...]

    @property
    def hops(self) -> int:
        return len(self.nodes) - 1


# ---- Loading ----

def road_network_from_dict(data: dict) -> RoadNetwork:
    """Build a RoadNetwork from validated file data (see serializers)."""
    arcs = []
    for a in data["arcs"]:
        arcs.append(Arc(a["from"], a["to"], float(a["minutes"]), float(a["miles"])))
        if data.get("bidirectional"):
            arcs.append(Arc(a["to"], a["from"], float(a["minutes"]), float(a["miles"])))
    coords = {n["id"]: (float(n["x"]), float(n["y"])) for n in data["nodes"] if "x" in n}
    return RoadNetwork(
        nodes=tuple(n["id"] for n in data["nodes"]),
        arcs=tuple(arcs),
        coordinates=coords or None,
        name=data.get("name", ""),
    )


def load_road_network(path: str | Path) -> RoadNetwork:
    data = load_document(path, RoadNetworkFileSerializer, error_class=RoadNetworkFormatError)
    return road_network_from_dict(data)


def load_points(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    data = load_document(path, PointsFileSerializer)
    pts = np.array([[p["x"], p["y"]] for p in data["points"]], dtype=float).reshape(-1, 2)
    weights = np.array([p["weight"] for p in data["points"]], dtype=float)
    return pts, weights


# ---- Connectivity & shortest paths ----

def check_strong_connectivity(net: RoadNetwork) -> bool:
    return nx.is_strongly_connected(net.digraph)


def _dijkstra(net: RoadNetwork, origin: int) -> dict[int, ShortestPath]:
    """
    Single-source Dijkstra on minutes. Labels compare as
    (minutes, hops, node sequence), so ties go to fewer hops and then to the
    lexicographically smallest id sequence.
    """
    g = net.digraph
    best: dict[int, tuple] = {}
    heap = [(0.0, 0, (origin,), 0.0)]
    while heap:
        minutes, hops, path, miles = heapq.heappop(heap)
        node = path[-1]
        if node in best:
            continue
        best[node] = (minutes, miles, path)
        for nxt in sorted(g.successors(node)):
            if nxt in best:
                continue
            edge = g.edges[node, nxt]
            # rounding keeps float noise from defeating the hop tie-break
            heapq.heappush(
                heap,
                (round(minutes + edge["minutes"], 9), hops + 1, path + (nxt,), miles + edge["miles"]),
            )
    return {node: ShortestPath(m, mi, p) for node, (m, mi, p) in best.items()}


def shortest_path(net: RoadNetwork, origin: int, dest: int) -> ShortestPath:
    if origin not in net.nodes or dest not in net.nodes:
        raise RoadNetworkFormatError(f"Unknown node in pair ({origin}, {dest}).")
    if origin == dest:
        return ShortestPath(0.0, 0.0, (origin,))
    found = _dijkstra(net, origin).get(dest)
    if found is None:
        raise NotStronglyConnected(f"No directed path from {origin} to {dest}.")
    return found


def all_shortest_paths(net: RoadNetwork) -> dict[tuple[int, int], ShortestPath]:
    if not check_strong_connectivity(net):
        raise NotStronglyConnected()
    out = {}
    for r in sorted(net.nodes):
        tree = _dijkstra(net, r)
        for s in sorted(net.nodes):
            if s != r:
                out[(r, s)] = tree[s]
    return out


def travel_steps(minutes, step_minutes: float) -> np.ndarray:
    """Whole control steps, rounded up, never below one."""
    steps = np.ceil(np.round(np.asarray(minutes, dtype=float) / step_minutes, 9))
    return np.maximum(steps, 1).astype(np.int64)


def complete(net: RoadNetwork, step_minutes: float) -> CompleteNetwork:
    if not step_minutes > 0:
        raise ValueError("step_minutes must be positive.")
    paths = all_shortest_paths(net)
    zones = tuple(sorted(net.nodes))
    links = link_order(zones)
    minutes = np.array([paths[l].minutes for l in links])
    miles = np.array([paths[l].miles for l in links])
    cn = CompleteNetwork.build(
        zones,
        travel_steps(minutes, step_minutes),
        miles,
        step_minutes=step_minutes,
        minutes=minutes,
        paths=[paths[l].nodes for l in links],
    )
    virtual = sum(1 for l in links if paths[l].hops > 1)
    logger.info(
        "network completed",
        extra={"network": net.name, "n": cn.n, "links": cn.m, "virtual_links": virtual, "step_minutes": step_minutes},
    )
    return cn


def complete_from_matrix(minutes, miles=None, *, step_minutes: float, zones=None) -> CompleteNetwork:
    """Complete network straight from n x n minute / mile matrices (diagonal ignored)."""
    minutes = np.asarray(minutes, dtype=float)
    n = minutes.shape[0]
    zones = tuple(range(1, n + 1)) if zones is None else tuple(zones)
    arcs = []
    for i in range(n):
        for j in range(n):
            if i != j and np.isfinite(minutes[i, j]):
                d = minutes[i, j] if miles is None else float(np.asarray(miles)[i, j])
                arcs.append(Arc(zones[i], zones[j], float(minutes[i, j]), float(d)))
    return complete(RoadNetwork(nodes=zones, arcs=tuple(arcs)), step_minutes)


# ---- Zone partitioning (Lloyd) ----

def _weighted_objective(points, weights, centers, assignment) -> float:
    d2 = ((points - centers[assignment]) ** 2).sum(axis=1)
    return float((weights * d2).sum())


def _maximin_centers(distinct: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    # first center drawn, the rest greedily farthest from those already chosen
    chosen = [int(rng.integers(len(distinct)))]
    d2 = ((distinct - distinct[chosen[0]]) ** 2).sum(axis=1)
    while len(chosen) < k:
        nxt = int(d2.argmax())
        chosen.append(nxt)
        d2 = np.minimum(d2, ((distinct - distinct[nxt]) ** 2).sum(axis=1))
    return distinct[chosen].copy()


def partition_zones(
    points,
    k: int,
    *,
    max_iters: int = 100,
    seed: int = 0,
    weights=None,
) -> ZonePartition:
    """
    Weighted Lloyd iterations. Initial centers are k distinct points picked by
    seeded maximin; a cluster that empties is re-seeded at the point
    farthest from its current center. Stops at an assignment fixpoint or after
    max_iters.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    w = np.ones(len(pts)) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (len(pts),) or (w <= 0).any():
        raise InvalidK("Weights must be positive, one per point.")
    distinct = np.unique(pts, axis=0)
    if not (2 <= k <= len(distinct)):
        raise InvalidK(f"k={k} with {len(distinct)} distinct points.")
    if max_iters < 1:
        raise InvalidK("max_iters must be at least 1.")

    centers = _maximin_centers(distinct, k, np.random.default_rng(seed))
    assignment = cdist(pts, centers, "sqeuclidean").argmin(axis=1)
    history = [_weighted_objective(pts, w, centers, assignment)]

    iterations = 0
    for iterations in range(1, max_iters + 1):
        for c in range(k):
            members = assignment == c
            if members.any():
                centers[c] = np.average(pts[members], axis=0, weights=w[members])
            else:
                far = ((pts - centers[assignment]) ** 2).sum(axis=1).argmax()
                centers[c] = pts[far]
                assignment[far] = c
        new_assignment = cdist(pts, centers, "sqeuclidean").argmin(axis=1)
        history.append(_weighted_objective(pts, w, centers, new_assignment))
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment

    return ZonePartition(
        points=pts,
        weights=w,
        k=k,
        centers=centers,
        assignment=assignment,
        objective_history=tuple(history),
        iterations=iterations,
    )


def road_network_from_partition(
    partition: ZonePartition,
    *,
    speed_mph: float = 15.0,
    detour_factor: float = 1.3,
    name: str = "partition",
) -> RoadNetwork:
    """Direct arcs between every pair of zone centers; miles = straight line x detour factor."""
    centers = partition.centers
    dist = cdist(centers, centers) * detour_factor
    nodes = tuple(range(1, partition.k + 1))
    arcs = []
    for i in range(partition.k):
        for j in range(partition.k):
            if i == j:
                continue
            miles = max(float(dist[i, j]), 1e-3)
            arcs.append(Arc(nodes[i], nodes[j], 60.0 * miles / speed_mph, miles))
    coords = {nodes[i]: (float(centers[i, 0]), float(centers[i, 1])) for i in range(partition.k)}
    return RoadNetwork(nodes=nodes, arcs=tuple(arcs), coordinates=coords, name=name)


def network_summary(net: RoadNetwork, cn: Optional[CompleteNetwork] = None) -> dict:
    out = {
        "name": net.name,
        "nodes": net.n,
        "arcs": len(net.arcs),
        "strongly_connected": check_strong_connectivity(net),
    }
    if cn is not None:
        out.update(
            links=cn.m,
            step_minutes=cn.step_minutes,
            max_T=int(cn.T.max()),
            virtual_links=sum(1 for p in cn.paths if len(p) > 2),
        )
    return out
