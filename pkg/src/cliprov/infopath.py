"""InfoPath retrieval: shortest suspicious source-to-sink process chains."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .analytics import CommunityPartition, EdgeWeights
from .graph import Edge, ProvenanceGraph


@dataclass
class InfoPath:
    nodes: tuple[str, ...]
    effective_length: float
    diversity: int
    communities: tuple[int, ...] = ()

    @property
    def edges(self) -> list[Edge]:
        return list(zip(self.nodes, self.nodes[1:]))

    @property
    def rank_key(self) -> tuple:
        return (self.effective_length, -self.diversity, self.nodes)


def edge_length(reew: float, cs: float) -> float:
    """Inverted, community-adjusted length ``1 / (reew * cs)``."""
    return 1.0 / (reew * cs)


def edge_lengths(g: ProvenanceGraph, weights: EdgeWeights, partition: CommunityPartition) -> dict[Edge, float]:
    """Length of every edge; the community of an edge is its child's community."""
    out = {}
    for e in g.sorted_edges():
        cs = partition.cs.get(partition.assignment[e[1]], 1.0)
        out[e] = edge_length(weights.refined(e), cs)
    return out


def find_terminals(g: ProvenanceGraph) -> tuple[list[str], list[str]]:
    """Zero in-degree sources and zero out-degree sinks, isolated nodes excluded."""
    indeg = {n: 0 for n in g.nodes}
    outdeg = {n: 0 for n in g.nodes}
    for p, c in g.edges:
        outdeg[p] += 1
        indeg[c] += 1
    sources = sorted(n for n in g.nodes if indeg[n] == 0 and outdeg[n] > 0)
    sinks = sorted(n for n in g.nodes if outdeg[n] == 0 and indeg[n] > 0)
    return sources, sinks


def _dijkstra(source: str, succ: dict[str, list[str]], lengths: dict[Edge, float]) -> dict[str, tuple[float, tuple[str, ...]]]:
    """Single-source shortest paths keyed by ``(length, node sequence)``.

    Comparing full node sequences on ties makes the chosen path the
    lexicographically smallest among the shortest ones.
    """
    best: dict[str, tuple[float, tuple[str, ...]]] = {source: (0.0, (source,))}
    heap = [(0.0, (source,))]
    done: set[str] = set()
    while heap:
        dist, path = heapq.heappop(heap)
        u = path[-1]
        if u in done:
            continue
        done.add(u)
        for v in succ[u]:
            if v in done:
                continue
            cand = (dist + lengths[(u, v)], path + (v,))
            if v not in best or cand < best[v]:
                best[v] = cand
                heapq.heappush(heap, cand)
    return best


def _make_path(g: ProvenanceGraph, nodes: tuple[str, ...], length: float, partition: CommunityPartition) -> InfoPath:
    images = {g.nodes[n].image.lower() for n in nodes}
    comms = tuple(partition.assignment[n] for n in nodes)
    return InfoPath(nodes=nodes, effective_length=length, diversity=len(images), communities=comms)


def search_infopaths(
    g: ProvenanceGraph,
    weights: EdgeWeights,
    partition: CommunityPartition,
    k_per_pair: int = 1,
) -> list[InfoPath]:
    """Shortest path for every reachable (source, sink) pair.

    Only ``k_per_pair == 1`` is supported.
    """
    if k_per_pair != 1:
        raise NotImplementedError("only the single shortest path per pair is supported")
    lengths = edge_lengths(g, weights, partition)
    succ = g.children()
    sources, sinks = find_terminals(g)
    sink_set = set(sinks)
    paths: list[InfoPath] = []
    for s in sources:
        best = _dijkstra(s, succ, lengths)
        for t in sorted(best):
            if t in sink_set:
                dist, nodes = best[t]
                paths.append(_make_path(g, nodes, dist, partition))
    return paths


def rank_infopaths(paths: Iterable[InfoPath]) -> list[InfoPath]:
    """Shortest first, then most distinct images, then node-id order."""
    return sorted(paths, key=lambda p: p.rank_key)


def path_length(nodes: Iterable[str], lengths: dict[Edge, float]) -> float:
    """Sum edge lengths along ``nodes`` left to right (same order as Dijkstra)."""
    nodes = list(nodes)
    total = 0.0
    for e in zip(nodes, nodes[1:]):
        total += lengths[e]
    return total
