"""End-to-end orchestration from audit events to ranked snapshot alarms."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from . import analytics
from .embedding import EmbeddingConfig, SelectionReport, Strategy, TooFewSamples, default_configs, select_embedding
from .ensemble import DetectorConfig, Verdict, featurize_paths, path_cmdlines, run_detectors, vote
from .graph import GraphBuilder, ProvenanceGraph, reduce_irrelevant, to_dag
from .infopath import InfoPath, rank_infopaths, search_infopaths
from .ingest import AuditEvent, normalize_events
from .report import SNAPSHOT_SIZE, SnapshotAlarm, build_alarm, llm_recommend, template_explanation
from .rules import Rule, RuleMatch, load_rules, match_graph, refine_edge_weights, risk_table

logger = logging.getLogger(__name__)

ENV_PREFIX = "CLIPROV_"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    rules_path: Optional[str] = None
    contamination: float = 0.5
    rs_high: float = 2.5
    rs_medium: float = 2.0
    rs_low: float = 1.5
    neighbors: int = 300
    vector_size: int = 60
    seed: int = 0
    batch_size: int = 5000
    report_path: Optional[str] = None
    llm_endpoint: Optional[str] = None

    def validate(self) -> "RunConfig":
        if not 0 < self.contamination <= 0.5:
            raise ConfigError("contamination must be in (0, 0.5]")
        if min(self.rs_high, self.rs_medium, self.rs_low) < 1.0:
            raise ConfigError("risk scores must be >= 1")
        if self.neighbors < 1:
            raise ConfigError("neighbors must be >= 1")
        if self.vector_size < 8:
            raise ConfigError("vector size must be >= 8")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        return self

    @classmethod
    def from_env(cls, env: Optional[Mapping[str, str]] = None, **overrides) -> "RunConfig":
        """Defaults, then ``CLIPROV_<FIELD>`` variables, then non-None overrides."""
        env = os.environ if env is None else env
        values: dict = {}
        for f in fields(cls):
            raw = env.get(ENV_PREFIX + f.name.upper())
            if raw is None:
                continue
            typ = type(f.default) if f.default is not None else str
            try:
                values[f.name] = typ(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {ENV_PREFIX}{f.name.upper()}: {raw!r}") from exc
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values).validate()

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.pop("report_path")
        d.pop("llm_endpoint")
        d.pop("rules_path")
        return d


@dataclass
class HostAnalysis:
    host: str
    graph: ProvenanceGraph
    weights: analytics.EdgeWeights
    partition: analytics.CommunityPartition
    matches: list[RuleMatch]
    paths: list[InfoPath]
    stats: dict


@dataclass
class PipelineResult:
    alarms: list[SnapshotAlarm]
    restored: list[SnapshotAlarm]
    manifest: dict
    hosts: dict[str, HostAnalysis] = field(default_factory=dict)
    verdict: Optional[Verdict] = None
    warnings: list[str] = field(default_factory=list)


def batched(events: Sequence[AuditEvent], size: int) -> Iterable[Sequence[AuditEvent]]:
    for i in range(0, len(events), size):
        yield events[i:i + size]


def build_host_graphs(events: Sequence[AuditEvent], batch_size: int) -> tuple[dict[str, ProvenanceGraph], int]:
    """Fold time-ordered events into one graph per host, batch by batch."""
    builders: dict[str, GraphBuilder] = {}
    n_batches = 0
    for batch in batched(events, batch_size):
        n_batches += 1
        per_host: dict[str, list[AuditEvent]] = {}
        for ev in batch:
            per_host.setdefault(ev.host, []).append(ev)
        for host in sorted(per_host):
            builders.setdefault(host, GraphBuilder()).feed(per_host[host])
    return {h: b.graph for h, b in sorted(builders.items())}, n_batches


def analyze_host(host: str, raw: ProvenanceGraph, rules: Sequence[Rule], cfg: RunConfig) -> HostAnalysis:
    reduced = reduce_irrelevant(raw)
    dag, removed = to_dag(reduced)
    stats = {
        "nodes_raw": len(raw.nodes),
        "edges_raw": len(raw.edges),
        "nodes_reduced": len(reduced.nodes),
        "edges_reduced": len(reduced.edges),
        "cycle_edges_removed": len(removed),
        "edges_dag": len(dag.edges),
    }
    if not dag.nodes:
        empty_w = analytics.EdgeWeights(ew={}, reew={})
        stats.update(communities=0, rule_matches=0, infopaths=0)
        return HostAnalysis(host, dag, empty_w, analytics.CommunityPartition({}), [], [], stats)

    scores = analytics.node_scores(dag)
    weights = analytics.edge_weights(dag, scores)
    partition = analytics.detect_communities(dag, weights, seed=cfg.seed)
    matches = match_graph(dag, rules, risk_table(cfg.rs_high, cfg.rs_medium, cfg.rs_low))
    weights = refine_edge_weights(weights, matches)
    analytics.community_scores(partition, weights)
    paths = search_infopaths(dag, weights, partition)
    stats.update(
        communities=len(partition.cs),
        rule_matches=len(matches),
        refined_edges=sum(1 for e in weights.ew if weights.reew[e] != weights.ew[e]),
        infopaths=len(paths),
    )
    return HostAnalysis(host, dag, weights, partition, matches, paths, stats)


def path_id(host: str, path: InfoPath) -> str:
    return host + "|" + ">".join(path.nodes)


def run_pipeline(
    events: Sequence[AuditEvent],
    cfg: RunConfig,
    rules: Optional[Sequence[Rule]] = None,
    skipped_lines: int = 0,
) -> PipelineResult:
    """Run every stage and collect snapshot alarms plus a manifest of statistics.

    ``rules`` defaults to loading ``cfg.rules_path``. The manifest is filled
    incrementally; if a stage raises, the partial manifest is attached to the
    exception as ``exc.manifest``.
    """
    cfg.validate()
    manifest: dict = {"config": cfg.to_dict(), "input": {"events": len(events), "skipped_lines": skipped_lines}}
    try:
        return _run(events, cfg, rules, manifest)
    except Exception as exc:
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        exc.manifest = manifest  # type: ignore[attr-defined]
        raise


def _run(events, cfg: RunConfig, rules, manifest: dict) -> PipelineResult:
    if rules is None:
        rules = load_rules(cfg.rules_path) if cfg.rules_path else []
    manifest["rules"] = len(rules)
    events = normalize_events(events)
    manifest["input"]["events_normalized"] = len(events)
    graphs, n_batches = build_host_graphs(events, cfg.batch_size)
    manifest["input"]["batches"] = n_batches

    hosts = {h: analyze_host(h, g, rules, cfg) for h, g in graphs.items()}
    manifest["hosts"] = {h: a.stats for h, a in hosts.items()}

    candidates: list[tuple[str, InfoPath]] = []
    for h, a in hosts.items():
        candidates.extend((h, p) for p in a.paths)
    ranked_ids = {id(p): i for i, p in enumerate(rank_infopaths(p for _, p in candidates))}
    candidates.sort(key=lambda hp: (ranked_ids[id(hp[1])], hp[0]))
    manifest["infopaths"] = len(candidates)

    per_path_cmds = [path_cmdlines(p, hosts[h].graph) for h, p in candidates]
    corpus = sorted({c for cmds in per_path_cmds for c in cmds})
    configs = default_configs(vector_size=cfg.vector_size, seed=cfg.seed)
    selection: Optional[SelectionReport] = None
    vectors: dict[str, np.ndarray] = {}
    try:
        selection = select_embedding(corpus, configs)
        vectors = selection.vectors
        manifest["embedding"] = selection.to_dict()
    except TooFewSamples:
        if corpus:
            from .embedding import embed_corpus
            vectors = embed_corpus(corpus, configs[0])
        manifest["embedding"] = {"chosen": None, "separability": {}, "n_commands": len(corpus)}

    ids = [path_id(h, p) for h, p in candidates]
    verdict: Optional[Verdict] = None
    if len(candidates) >= 2:
        X = featurize_paths([p for _, p in candidates], vectors, cmdlines=per_path_cmds, dim=cfg.vector_size)
        dcfg = DetectorConfig(contamination=cfg.contamination, neighbors=cfg.neighbors, seed=cfg.seed)
        verdict = vote(run_detectors(X, dcfg, ids=ids), items=ids)
        anomalous = verdict.anomalous
        manifest["ensemble"] = {
            "rows": len(ids),
            "flags_per_detector": {d: len(s) for d, s in sorted(verdict.per_detector.items())},
            "votes": {i: verdict.votes[i] for i in ids},
            "anomalous": len(anomalous),
        }
    else:
        # the ensemble needs two rows; fall back to rule evidence
        anomalous = {
            pid for pid, (h, p) in zip(ids, candidates)
            if any(m.node_id in p.nodes for m in hosts[h].matches)
        }
        manifest["ensemble"] = {"rows": len(ids), "skipped": "fewer than 2 InfoPaths", "anomalous": len(anomalous)}

    descriptions = {r.rule_id: r.description for r in rules}
    flagged = [(pid, h, p) for pid, (h, p) in zip(ids, candidates) if pid in anomalous]
    alarms: list[SnapshotAlarm] = []
    for rank, (pid, h, p) in enumerate(flagged, 1):
        votes = verdict.votes.get(pid, 0) if verdict else 0
        alarm = build_alarm(rank, p, hosts[h].graph, hosts[h].matches, votes)
        alarm.explanation = template_explanation(alarm, descriptions)
        alarms.append(alarm)

    warnings: list[str] = []
    snapshot, restored = alarms[:SNAPSHOT_SIZE], alarms[SNAPSHOT_SIZE:]
    if cfg.llm_endpoint:
        snapshot, warnings = llm_recommend(snapshot, cfg.llm_endpoint)
    manifest["alarms"] = {"snapshot": len(snapshot), "restored": len(restored)}
    if warnings:
        manifest["warnings"] = warnings
    return PipelineResult(snapshot, restored, manifest, hosts, verdict, warnings)
