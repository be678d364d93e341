"""Command-line focused process provenance graph.

Every node is a process instance. Command-lines and network endpoints are
kept as ordered attributes on the node instead of separate vertices, and
file objects are not modelled at all.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

import networkx as nx

from .ingest import AuditEvent, EventKind

UNKNOWN_IMAGE = "<unknown>"

Edge = tuple[str, str]


def make_node_id(host: str, pid: int, ts: int) -> str:
    return f"{host}:{pid}:{ts}"


@dataclass
class ProcessNode:
    node_id: str
    image: str
    host: str
    pid: int
    first_ts: int
    last_ts: int
    cmdlines: list[str] = field(default_factory=list)
    endpoints: list[str] = field(default_factory=list)
    synthetic: bool = False

    @property
    def has_cmdline(self) -> bool:
        return any(c for c in self.cmdlines)

    def to_dict(self) -> dict:
        return {
            "node_id": self.node_id,
            "image": self.image,
            "host": self.host,
            "pid": self.pid,
            "first_ts": self.first_ts,
            "last_ts": self.last_ts,
            "cmdlines": list(self.cmdlines),
            "endpoints": list(self.endpoints),
            "synthetic": self.synthetic,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProcessNode":
        return cls(
            node_id=d["node_id"],
            image=d["image"],
            host=d.get("host", ""),
            pid=int(d.get("pid", 0)),
            first_ts=int(d["first_ts"]),
            last_ts=int(d["last_ts"]),
            cmdlines=list(d.get("cmdlines", [])),
            endpoints=list(d.get("endpoints", [])),
            synthetic=bool(d.get("synthetic", False)),
        )


@dataclass
class ProvenanceGraph:
    """Directed process-call graph.

    ``edges`` maps ``(parent_id, child_id)`` to the timestamp at which the
    edge was first observed.
    """

    nodes: dict[str, ProcessNode] = field(default_factory=dict)
    edges: dict[Edge, int] = field(default_factory=dict)
    is_dag: bool = False

    def __len__(self) -> int:
        return len(self.nodes)

    def sorted_edges(self) -> list[Edge]:
        return sorted(self.edges)

    def parents(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {n: [] for n in self.nodes}
        for p, c in self.sorted_edges():
            out[c].append(p)
        return out

    def children(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {n: [] for n in self.nodes}
        for p, c in self.sorted_edges():
            out[p].append(c)
        return out

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(sorted(self.nodes))
        for (p, c) in self.sorted_edges():
            g.add_edge(p, c, ts=self.edges[(p, c)])
        return g

    def subgraph(self, node_ids: Iterable[str]) -> "ProvenanceGraph":
        keep = set(node_ids)
        return ProvenanceGraph(
            nodes={n: self.nodes[n] for n in sorted(keep)},
            edges={e: t for e, t in self.edges.items() if e[0] in keep and e[1] in keep},
            is_dag=self.is_dag,
        )

    def hosts(self) -> list[str]:
        return sorted({n.host for n in self.nodes.values()})

    def to_json(self, extra: Optional[dict] = None) -> str:
        doc = {
            "is_dag": self.is_dag,
            "nodes": [self.nodes[n].to_dict() for n in sorted(self.nodes)],
            "edges": [
                {"parent": p, "child": c, "first_ts": self.edges[(p, c)]}
                for p, c in self.sorted_edges()
            ],
        }
        if extra:
            doc.update(extra)
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ProvenanceGraph":
        doc = json.loads(text)
        nodes = {d["node_id"]: ProcessNode.from_dict(d) for d in doc.get("nodes", [])}
        edges = {}
        for e in doc.get("edges", []):
            if e["parent"] not in nodes or e["child"] not in nodes:
                raise ValueError(f"edge references unknown node: {e}")
            edges[(e["parent"], e["child"])] = int(e["first_ts"])
        return cls(nodes=nodes, edges=edges, is_dag=bool(doc.get("is_dag", False)))


class GraphBuilder:
    """Incrementally fold normalized events into a provenance graph.

    Feeding events in several batches gives the same graph as feeding them
    all at once, provided the batches are in time order. A ``ppid`` of 0 (or
    equal to the pid itself) marks a root process with no parent edge.
    """

    def __init__(self) -> None:
        self.graph = ProvenanceGraph()
        self._live: dict[tuple[str, int], str] = {}
        self.batches = 0

    def _new_node(self, host: str, pid: int, ts: int, image: str, synthetic: bool) -> ProcessNode:
        node_id = make_node_id(host, pid, ts)
        suffix = 1
        while node_id in self.graph.nodes:
            node_id = f"{make_node_id(host, pid, ts)}#{suffix}"
            suffix += 1
        node = ProcessNode(node_id, image, host, pid, ts, ts, synthetic=synthetic)
        self.graph.nodes[node_id] = node
        self._live[(host, pid)] = node_id
        return node

    def _live_or_synthetic(self, host: str, pid: int, ts: int) -> ProcessNode:
        nid = self._live.get((host, pid))
        if nid is not None:
            return self.graph.nodes[nid]
        return self._new_node(host, pid, ts, UNKNOWN_IMAGE, synthetic=True)

    def feed(self, events: Iterable[AuditEvent]) -> None:
        self.batches += 1
        for ev in events:
            if ev.kind is EventKind.PROCESS_START:
                parent = None
                if ev.ppid not in (0, ev.pid):
                    parent = self._live_or_synthetic(ev.host, ev.ppid, ev.ts)
                    parent.last_ts = max(parent.last_ts, ev.ts)
                child = self._new_node(ev.host, ev.pid, ev.ts, ev.image, synthetic=False)
                if ev.cmdline:
                    child.cmdlines.append(ev.cmdline)
                if parent is not None and parent.node_id != child.node_id:
                    self.graph.edges.setdefault((parent.node_id, child.node_id), ev.ts)
            else:
                node = self._live_or_synthetic(ev.host, ev.pid, ev.ts)
                if node.synthetic and node.image == UNKNOWN_IMAGE and ev.image:
                    node.image = ev.image
                node.endpoints.append(ev.remote)
                node.last_ts = max(node.last_ts, ev.ts)


def build_graph(events: Iterable[AuditEvent]) -> ProvenanceGraph:
    """Build a provenance graph from normalized (sorted, deduplicated) events."""
    builder = GraphBuilder()
    builder.feed(events)
    return builder.graph


def weak_components(g: ProvenanceGraph) -> list[list[str]]:
    """Weakly connected components, each sorted, ordered by first member."""
    comps = [sorted(c) for c in nx.weakly_connected_components(g.to_networkx())]
    return sorted(comps)


def reduce_irrelevant(g: ProvenanceGraph) -> ProvenanceGraph:
    """Drop every weakly connected component that carries no command-line."""
    keep: list[str] = []
    for comp in weak_components(g):
        if any(g.nodes[n].has_cmdline for n in comp):
            keep.extend(comp)
    return g.subgraph(keep)


def _latest_edge(cycle: list[Edge], edges: dict[Edge, int]) -> Edge:
    return max(cycle, key=lambda e: (edges[e], e))


def to_dag(g: ProvenanceGraph) -> tuple[ProvenanceGraph, list[Edge]]:
    """Break cycles by deleting, within each cycle found, its newest edge.

    Returns the acyclic graph and the list of removed edges in removal order.
    """
    edges = dict(g.edges)
    removed: list[Edge] = []
    nxg = nx.DiGraph()
    nxg.add_nodes_from(sorted(g.nodes))
    nxg.add_edges_from(sorted(edges))
    # only strongly connected pieces can hold cycles
    for scc in sorted(sorted(c) for c in nx.strongly_connected_components(nxg) if len(c) > 1):
        sub = nxg.subgraph(scc).copy()
        while True:
            try:
                cycle = nx.find_cycle(sub, source=scc[0])
            except nx.NetworkXNoCycle:
                try:
                    cycle = nx.find_cycle(sub)
                except nx.NetworkXNoCycle:
                    break
            victim = _latest_edge([(u, v) for u, v in cycle], edges)
            sub.remove_edge(*victim)
            del edges[victim]
            removed.append(victim)
    dag = ProvenanceGraph(nodes=dict(g.nodes), edges=edges, is_dag=True)
    return dag, removed


def topological_order(g: ProvenanceGraph) -> list[str]:
    """Deterministic topological order; raises ``ValueError`` on a cycle."""
    try:
        return list(nx.lexicographical_topological_sort(g.to_networkx()))
    except nx.NetworkXUnfeasible as exc:
        raise ValueError("graph contains a directed cycle") from exc
