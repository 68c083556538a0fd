"""Directed observer topology and Round-Robin schedule arithmetic.

Nodes are numbered from 1 in every public function (the convention used in
config files and reports); arrays such as ``adjacency`` are 0-based.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import (DisconnectedGraph, IndexOutOfRange, NonPositivePeriod,
                     NotANeighbour, SelfLoop)


@dataclass(frozen=True)
class ObserverGraph:
    """Directed graph; edge ``(j, i)`` means node ``j`` sends to node ``i``."""

    node_count: int
    edges: frozenset
    neighbourhoods: tuple  # neighbourhoods[i-1] = ascending in-neighbours of i
    in_degree: tuple
    out_degree: tuple
    adjacency: np.ndarray = field(repr=False, compare=False)
    laplacian: np.ndarray = field(repr=False, compare=False)

    @property
    def max_in_degree(self) -> int:
        return max(self.in_degree)

    def neighbours(self, i: int) -> tuple:
        return self.neighbourhoods[_check_node(self, i) - 1]

    def p(self, i: int) -> int:
        return self.in_degree[_check_node(self, i) - 1]

    def q(self, i: int) -> int:
        return self.out_degree[_check_node(self, i) - 1]

    def receivers(self, j: int) -> tuple:
        """Nodes ``i`` with ``j`` in their neighbourhood, ascending."""
        _check_node(self, j)
        return tuple(i for i in range(1, self.node_count + 1) if j in self.neighbourhoods[i - 1])

    def to_config(self) -> dict:
        return {"nodes": self.node_count, "edges": [list(e) for e in sorted(self.edges)]}


def _check_node(graph: ObserverGraph, i: int) -> int:
    if not 1 <= i <= graph.node_count:
        raise IndexOutOfRange(f"node {i} not in 1..{graph.node_count}")
    return i


def build_graph(node_count: int, edges) -> ObserverGraph:
    """Validate a directed edge list and derive degrees, adjacency and Laplacian.

    Raises ``SelfLoop``, ``IndexOutOfRange`` or ``DisconnectedGraph`` (the
    graph must be weakly connected).
    """
    node_count = int(node_count)
    if node_count < 1:
        raise IndexOutOfRange("node_count must be at least 1")
    edge_set = set()
    for e in edges:
        j, i = (int(v) for v in e)
        if not (1 <= i <= node_count and 1 <= j <= node_count):
            raise IndexOutOfRange(f"edge {(j, i)} has an endpoint outside 1..{node_count}")
        if i == j:
            raise SelfLoop(f"self-loop at node {i}")
        edge_set.add((j, i))

    adjacency = np.zeros((node_count, node_count))
    for j, i in edge_set:
        adjacency[i - 1, j - 1] = 1.0
    hoods = tuple(tuple(sorted(j for (j, k) in edge_set if k == i)) for i in range(1, node_count + 1))
    p = tuple(len(h) for h in hoods)
    q = tuple(sum(1 for (j, _) in edge_set if j == i) for i in range(1, node_count + 1))
    laplacian = np.diag(np.asarray(p, dtype=float)) - adjacency

    # weak connectivity: BFS on the undirected version
    undirected = [set() for _ in range(node_count)]
    for j, i in edge_set:
        undirected[i - 1].add(j - 1)
        undirected[j - 1].add(i - 1)
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in undirected[u] - seen:
            seen.add(v)
            queue.append(v)
    if len(seen) != node_count:
        raise DisconnectedGraph(f"graph is not weakly connected ({len(seen)} of {node_count} nodes reachable)")

    adjacency.flags.writeable = False
    laplacian.flags.writeable = False
    return ObserverGraph(node_count, frozenset(edge_set), hoods, p, q, adjacency, laplacian)


def shift_permutation(ordered_set) -> list:
    """Move the last element to the front: ``{j1,...,jp} -> {jp,j1,...,j(p-1)}``."""
    items = list(ordered_set)
    if len(items) < 2:
        return items
    return [items[-1]] + items[:-1]


def permuted_neighbourhood(graph: ObserverGraph, i: int, k: int) -> list:
    """Neighbourhood of ``i`` after ``k`` shift permutations."""
    hood = list(graph.neighbours(i))
    p = len(hood)
    if p == 0:
        return []
    s = k % p
    # k shifts to the right == rotate by s
    return hood[p - s:] + hood[:p - s] if s else hood


def polled_neighbour(graph: ObserverGraph, i: int, k: int):
    """Neighbour polled by node ``i`` at instant ``t_k`` (``None`` if ``p_i = 0``)."""
    perm = permuted_neighbourhood(graph, i, k)
    return perm[0] if perm else None


def sample_slot(graph: ObserverGraph, i: int, j: int, k: int) -> int:
    """1-based position of ``j`` in the k-th permutation of node ``i``'s neighbourhood.

    On ``[t_k, t_{k+1})`` node ``i`` uses the sample of ``j`` taken at
    ``t_{k - slot + 1}``.
    """
    hood = graph.neighbours(i)
    if j not in hood:
        raise NotANeighbour(f"node {j} is not an in-neighbour of node {i}")
    p = len(hood)
    return (hood.index(j) + k) % p + 1


def sample_index(graph: ObserverGraph, i: int, j: int, k: int) -> int:
    """Index ``l`` of the instant ``t_l`` whose sample of edge j->i is in use on [t_k, t_{k+1}).

    Negative values denote the zero-initialised prehistory.
    """
    return k - sample_slot(graph, i, j, k) + 1


@dataclass(frozen=True)
class RoundRobinSchedule:
    """Uniform sampling grid ``t_k = k * period`` with per-node maximum delays."""

    period: float
    node_delays: tuple
    network_delay: float

    def instant(self, k: int) -> float:
        return k * self.period

    def interval_index(self, t: float) -> int:
        """``k`` such that ``t_k <= t < t_{k+1}``."""
        return int(np.floor(t / self.period + 1e-12))

    def tau(self, i: int) -> float:
        return self.node_delays[i - 1]


def node_delays(graph: ObserverGraph, period: float) -> RoundRobinSchedule:
    """Per-node delays ``tau_i = p_i * period`` and network delay ``max_i tau_i``."""
    period = float(period)
    if not period > 0:
        raise NonPositivePeriod(f"sampling period must be positive, got {period}")
    taus = tuple(p * period for p in graph.in_degree)
    return RoundRobinSchedule(period, taus, max(taus))
