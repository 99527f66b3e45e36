# apps/network/domain.py
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Optional

import networkx as nx
import numpy as np

from apps.core.exceptions import RoadNetworkFormatError


@dataclass(frozen=True)
class Arc:
    origin: int
    dest: int
    minutes: float
    miles: float


@dataclass(frozen=True)
class RoadNetwork:
    """
    Directed road network between zones. Node ids are integers; arcs carry
    positive travel time (minutes) and distance (miles).
    """

    nodes: tuple[int, ...]
    arcs: tuple[Arc, ...]
    coordinates: Optional[Mapping[int, tuple[float, float]]] = None
    name: str = ""

    def __post_init__(self):
        if len(self.nodes) < 2:
            raise RoadNetworkFormatError("A road network needs at least 2 nodes.")
        if len(set(self.nodes)) != len(self.nodes):
            raise RoadNetworkFormatError("Duplicate node ids.")
        known = set(self.nodes)
        seen: set[tuple[int, int]] = set()
        for a in self.arcs:
            if a.origin not in known or a.dest not in known:
                raise RoadNetworkFormatError(f"Arc {a.origin}->{a.dest} references an unknown node.")
            if a.origin == a.dest:
                raise RoadNetworkFormatError(f"Self-loop on node {a.origin}.")
            if not (a.minutes > 0 and a.miles > 0):
                raise RoadNetworkFormatError(f"Arc {a.origin}->{a.dest} needs positive minutes and miles.")
            if (a.origin, a.dest) in seen:
                raise RoadNetworkFormatError(f"Duplicate arc {a.origin}->{a.dest}.")
            seen.add((a.origin, a.dest))

    @property
    def n(self) -> int:
        return len(self.nodes)

    @cached_property
    def digraph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(sorted(self.nodes))
        for a in self.arcs:
            g.add_edge(a.origin, a.dest, minutes=float(a.minutes), miles=float(a.miles))
        return g


def link_order(zones: tuple[int, ...]) -> tuple[tuple[int, int], ...]:
    """All ordered pairs (r, s), r != s, lexicographic over the zone order."""
    return tuple((r, s) for r in zones for s in zones if r != s)


def incidence_matrices(zones: tuple[int, ...], links) -> tuple[np.ndarray, np.ndarray]:
    pos = {z: i for i, z in enumerate(zones)}
    e_in = np.zeros((len(zones), len(links)))
    e_out = np.zeros((len(zones), len(links)))
    for k, (r, s) in enumerate(links):
        e_out[pos[r], k] = 1.0
        e_in[pos[s], k] = 1.0
    return e_in, e_out


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CompleteNetwork:
    """
    Complete digraph over the zones: one (actual or virtual) link per ordered
    pair. T is in whole control steps, D in miles. Immutable once built.
    """

    zones: tuple[int, ...]
    links: tuple[tuple[int, int], ...]
    T: np.ndarray
    D: np.ndarray
    E_in: np.ndarray
    E_out: np.ndarray
    step_minutes: float = 1.0
    minutes: Optional[np.ndarray] = None
    paths: tuple[tuple[int, ...], ...] = field(default=())

    @classmethod
    def build(
        cls,
        zones,
        T,
        D=None,
        *,
        step_minutes: float = 1.0,
        minutes=None,
        paths=(),
    ) -> "CompleteNetwork":
        zones = tuple(int(z) for z in zones)
        links = link_order(zones)
        T = np.asarray(T, dtype=np.int64)
        D = np.ones(len(links)) if D is None else np.asarray(D, dtype=float)
        e_in, e_out = incidence_matrices(zones, links)
        net = cls(
            zones=zones,
            links=links,
            T=_frozen(T),
            D=_frozen(D),
            E_in=_frozen(e_in),
            E_out=_frozen(e_out),
            step_minutes=float(step_minutes),
            minutes=None if minutes is None else _frozen(np.asarray(minutes, dtype=float)),
            paths=tuple(tuple(p) for p in paths),
        )
        net.validate()
        return net

    @property
    def n(self) -> int:
        return len(self.zones)

    @property
    def m(self) -> int:
        return len(self.links)

    @cached_property
    def E(self) -> np.ndarray:
        return _frozen(self.E_in - self.E_out)

    @cached_property
    def _index(self) -> dict[tuple[int, int], int]:
        return {link: k for k, link in enumerate(self.links)}

    def link_index(self, r: int, s: int) -> int:
        return self._index[(r, s)]

    def zone_index(self, z: int) -> int:
        return self.zones.index(z)

    def validate(self) -> None:
        n, m = self.n, self.m
        if n < 2:
            raise ValueError("Complete network needs n >= 2.")
        if m != n * (n - 1):
            raise ValueError(f"Expected {n * (n - 1)} links, found {m}.")
        if self.T.shape != (m,) or self.D.shape != (m,):
            raise ValueError("T and D need one entry per ordered link.")
        if (self.T < 1).any():
            raise ValueError("Travel times must be at least one step.")
        if (self.D <= 0).any():
            raise ValueError("Distances must be positive.")
        for mat in (self.E_in, self.E_out):
            if mat.shape != (n, m) or not np.array_equal(mat.sum(axis=0), np.ones(m)):
                raise ValueError("Each incidence column needs exactly one 1.")


@dataclass(frozen=True)
class ZonePartition:
    points: np.ndarray
    weights: np.ndarray
    k: int
    centers: np.ndarray
    assignment: np.ndarray
    objective_history: tuple[float, ...] = ()
    iterations: int = 0

    @property
    def objective(self) -> float:
        d2 = ((self.points - self.centers[self.assignment]) ** 2).sum(axis=1)
        return float((self.weights * d2).sum())

    def zone_sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)
