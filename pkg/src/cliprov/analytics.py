"""Node centralities, edge weights and connectivity-safe communities."""

from __future__ import annotations

import math
import random
import warnings
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional

from .graph import Edge, ProvenanceGraph

EPSILON = 1e-6
DEFAULT_DAMPING = 0.85
CS_FLOOR = 0.1


class NonConvergence(RuntimeWarning):
    pass


@dataclass
class NodeScores:
    pr: dict[str, float]
    cb: dict[str, float]
    damping: float = DEFAULT_DAMPING


@dataclass
class EdgeWeights:
    ew: dict[Edge, float]
    reew: dict[Edge, float] = field(default_factory=dict)

    def refined(self, edge: Edge) -> float:
        return self.reew.get(edge, self.ew[edge])


@dataclass
class CommunityPartition:
    assignment: dict[str, int]
    cs: dict[int, float] = field(default_factory=dict)

    def members(self) -> dict[int, list[str]]:
        out: dict[int, list[str]] = {}
        for n in sorted(self.assignment):
            out.setdefault(self.assignment[n], []).append(n)
        return out


@dataclass
class PageRankResult:
    scores: dict[str, float]
    iterations: int
    converged: bool


def pagerank(
    g: ProvenanceGraph,
    d: float = DEFAULT_DAMPING,
    eps: float = 1e-10,
    max_iter: int = 200,
) -> PageRankResult:
    """Iterate ``PR(v) = (1 - d) + d * sum(PR(u) / L(u))`` over in-neighbours.

    This is the unnormalized form: scores do not sum to one and no mass is
    redistributed from dangling nodes. On a DAG the iteration is exact after
    at most depth + 1 sweeps. If ``max_iter`` runs out a
    :class:`NonConvergence` warning is emitted and the last iterate returned.
    """
    nodes = sorted(g.nodes)
    out_deg = {n: 0 for n in nodes}
    preds: dict[str, list[str]] = {n: [] for n in nodes}
    for p, c in g.sorted_edges():
        out_deg[p] += 1
        preds[c].append(p)
    pr = {n: 1.0 - d for n in nodes}
    converged = not nodes
    it = 0
    for it in range(1, max_iter + 1):
        new = {v: (1.0 - d) + d * sum(pr[u] / out_deg[u] for u in preds[v]) for v in nodes}
        delta = max((abs(new[v] - pr[v]) for v in nodes), default=0.0)
        pr = new
        if delta < eps:
            converged = True
            break
    if not converged:
        warnings.warn(f"pagerank did not converge in {max_iter} iterations", NonConvergence)
    return PageRankResult(pr, it, converged)


def minmax(values: Mapping, lo: float = 0.0, hi: float = 1.0, flat: float = 0.5) -> dict:
    """Affine map of ``values`` onto ``[lo, hi]``; all-equal inputs map to ``flat``."""
    if not values:
        return {}
    vmin, vmax = min(values.values()), max(values.values())
    if vmax == vmin:
        return {k: flat for k in values}
    span = vmax - vmin
    # pin the extremes so rounding never pushes them past the bounds
    return {
        k: lo if v == vmin else hi if v == vmax else min(hi, max(lo, lo + (hi - lo) * (v - vmin) / span))
        for k, v in values.items()
    }


def rareness_normalize(raw: Mapping[str, float]) -> dict[str, float]:
    """Flip scores so the least-linked node gets 1.0 and the most-linked 0.0."""
    if not raw:
        raise ValueError("rareness_normalize needs at least one score")
    vmin, vmax = min(raw.values()), max(raw.values())
    if vmax == vmin:
        return {k: 0.5 for k in raw}
    return {k: (vmax - v) / (vmax - vmin) for k, v in raw.items()}


def betweenness_raw(g: ProvenanceGraph) -> dict[str, float]:
    """Exact unweighted directed betweenness by Brandes accumulation.

    Dependencies are accumulated as rationals so the result is the correctly
    rounded float of the exact value, independent of accumulation order.
    """
    nodes = sorted(g.nodes)
    succ = g.children()
    cb = {n: Fraction(0) for n in nodes}
    for s in nodes:
        stack: list[str] = []
        preds: dict[str, list[str]] = {}
        sigma = {s: 1}
        dist = {s: 0}
        q = deque([s])
        while q:
            v = q.popleft()
            stack.append(v)
            for w in succ[v]:
                if w not in dist:
                    dist[w] = dist[v] + 1
                    q.append(w)
                    sigma[w] = 0
                    preds[w] = []
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = {v: Fraction(0) for v in stack}
        while stack:
            w = stack.pop()
            for v in preds.get(w, ()):
                delta[v] += Fraction(sigma[v], sigma[w]) * (1 + delta[w])
            if w != s:
                cb[w] += delta[w]
    return {n: float(v) for n, v in cb.items()}


def betweenness(g: ProvenanceGraph) -> dict[str, float]:
    """Shortest-path betweenness, min-max normalized to [0, 1]."""
    return minmax(betweenness_raw(g))


def node_scores(g: ProvenanceGraph, d: float = DEFAULT_DAMPING) -> NodeScores:
    pr = pagerank(g, d=d).scores
    return NodeScores(pr=rareness_normalize(pr) if pr else {}, cb=betweenness(g), damping=d)


def edge_weights(g: ProvenanceGraph, scores: NodeScores) -> EdgeWeights:
    """Sum endpoint scores per edge, normalize over edges, clamp at EPSILON.

    A graph with a single edge (or all-equal sums) gets the degenerate value:
    1.0 for one edge, 0.5 for several equal ones.
    """
    sums = {
        (m, n): scores.pr[m] + scores.pr[n] + scores.cb[m] + scores.cb[n]
        for m, n in g.sorted_edges()
    }
    if len(sums) == 1:
        ew = {e: 1.0 for e in sums}
    else:
        ew = {e: max(EPSILON, min(1.0, w)) for e, w in minmax(sums).items()}
    return EdgeWeights(ew=ew, reew=dict(ew))


# -- community detection ---------------------------------------------------


def _undirected_weights(g: ProvenanceGraph, weights: Optional[EdgeWeights]) -> dict[str, dict[str, float]]:
    adj: dict[str, dict[str, float]] = {n: {} for n in sorted(g.nodes)}
    for e in g.sorted_edges():
        u, v = e
        w = weights.ew[e] if weights is not None else 1.0
        adj[u][v] = adj[u].get(v, 0.0) + w
        adj[v][u] = adj[v].get(u, 0.0) + w
    return adj


def modularity(adj: Mapping[str, Mapping[str, float]], assignment: Mapping[str, int], resolution: float = 1.0) -> float:
    """Weighted undirected modularity of ``assignment``."""
    two_m = sum(sum(nb.values()) for nb in adj.values())
    if two_m == 0:
        return 0.0
    inner: dict[int, float] = {}
    tot: dict[int, float] = {}
    for u, nb in adj.items():
        cu = assignment[u]
        tot[cu] = tot.get(cu, 0.0) + sum(nb.values())
        for v, w in nb.items():
            if assignment[v] == cu:
                inner[cu] = inner.get(cu, 0.0) + w
    return sum(inner.get(c, 0.0) / two_m - resolution * (t / two_m) ** 2 for c, t in tot.items())


def _local_moving(
    adj: dict, order: list, resolution: float, two_m: float, rng: random.Random
) -> tuple[dict, bool]:
    """One Louvain level: greedily move nodes to the best neighbouring community."""
    comm = {u: i for i, u in enumerate(order)}
    k = {u: sum(adj[u].values()) for u in order}
    tot = {comm[u]: k[u] for u in order}
    improved = False
    moved = True
    visit = list(order)
    while moved:
        moved = False
        rng.shuffle(visit)
        for u in visit:
            cu = comm[u]
            links: dict[int, float] = {}
            for v, w in adj[u].items():
                if v != u:
                    links[comm[v]] = links.get(comm[v], 0.0) + w
            tot[cu] -= k[u]
            best_c = cu
            best_gain = links.get(cu, 0.0) - resolution * tot[cu] * k[u] / two_m
            for c in sorted(links):
                gain = links[c] - resolution * tot[c] * k[u] / two_m
                if gain > best_gain + 1e-12:
                    best_c, best_gain = c, gain
            tot[best_c] = tot.get(best_c, 0.0) + k[u]
            if best_c != cu:
                comm[u] = best_c
                moved = True
                improved = True
    return comm, improved


def _connected_split(members: list, adj: Mapping) -> list[list]:
    """Split a node set into the connected pieces of its induced subgraph."""
    inside = set(members)
    seen: set = set()
    pieces = []
    for s in sorted(members, key=repr):
        if s in seen:
            continue
        piece = []
        q = deque([s])
        seen.add(s)
        while q:
            u = q.popleft()
            piece.append(u)
            for v in adj[u]:
                if v in inside and v not in seen:
                    seen.add(v)
                    q.append(v)
        pieces.append(piece)
    return pieces


def detect_communities(
    g: ProvenanceGraph,
    weights: Optional[EdgeWeights] = None,
    resolution: float = 1.0,
    seed: int = 0,
    max_levels: int = 20,
) -> CommunityPartition:
    """Modularity communities that are guaranteed to be connected.

    Louvain-style local moving and aggregation, with a refinement step after
    every level that splits each community into the connected components of
    its induced subgraph before it is collapsed. That split is what keeps
    aggregated super-nodes, and therefore the final communities, internally
    connected. Edge direction is ignored; edges are weighted by ``weights.ew``
    when given.
    """
    nodes = sorted(g.nodes)
    if not nodes:
        return CommunityPartition(assignment={})
    rng = random.Random(seed)
    base_adj = _undirected_weights(g, weights)
    two_m = sum(sum(nb.values()) for nb in base_adj.values())

    # level-0 "super nodes" are the original nodes
    members: dict = {n: [n] for n in nodes}
    adj = base_adj
    if two_m > 0:
        for _ in range(max_levels):
            order = sorted(adj, key=repr)
            comm, improved = _local_moving(adj, order, resolution, two_m, rng)
            if not improved:
                break
            groups: dict[int, list] = {}
            for u in order:
                groups.setdefault(comm[u], []).append(u)
            new_members: dict = {}
            owner: dict = {}
            idx = 0
            for c in sorted(groups):
                for piece in _connected_split(groups[c], adj):
                    key = idx
                    idx += 1
                    new_members[key] = [n for u in piece for n in members[u]]
                    for u in piece:
                        owner[u] = key
            if len(new_members) == len(members):
                break
            new_adj: dict = {c: {} for c in new_members}
            for u, nb in adj.items():
                cu = owner[u]
                for v, w in nb.items():
                    cv = owner[v]
                    new_adj[cu][cv] = new_adj[cu].get(cv, 0.0) + w
            members, adj = new_members, new_adj

    # final guard: split on the original graph as well
    final: list[list[str]] = []
    for group in members.values():
        final.extend(sorted(p) for p in _connected_split(sorted(group), base_adj))
    final.sort()
    assignment = {n: cid for cid, group in enumerate(final) for n in group}
    return CommunityPartition(assignment=assignment)


def community_scores(partition: CommunityPartition, weights: EdgeWeights) -> dict[int, float]:
    """Mean refined weight of intra-community edges, rescaled to [0.1, 1].

    Communities without internal edges get the floor value 0.1. A lone
    community with edges gets 1.0, as do several communities whose means tie.
    The result is also stored on ``partition.cs``.
    """
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    for e in sorted(weights.ew):
        cu, cv = partition.assignment[e[0]], partition.assignment[e[1]]
        if cu == cv:
            sums[cu] = sums.get(cu, 0.0) + weights.refined(e)
            counts[cu] = counts.get(cu, 0) + 1
    means = {c: sums[c] / counts[c] for c in sums}
    scaled = minmax(means, lo=CS_FLOOR, hi=1.0, flat=1.0)
    cs = {c: scaled.get(c, CS_FLOOR) for c in sorted(set(partition.assignment.values()))}
    partition.cs = cs
    return cs
