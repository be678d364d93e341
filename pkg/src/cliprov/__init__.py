"""Command-line focused attack provenance analysis.

Build process provenance graphs from audit events, weight them with
rareness-aware centralities and rule hits, retrieve suspicious InfoPaths
and vote on them with an ensemble of outlier detectors.
"""

from .analytics import (
    CommunityPartition,
    EdgeWeights,
    NodeScores,
    betweenness,
    community_scores,
    detect_communities,
    edge_weights,
    pagerank,
    rareness_normalize,
)
from .embedding import EmbeddingConfig, SimHashSignature, Strategy, embed_corpus, hamming, select_embedding, simhash, tokenize
from .ensemble import DetectorConfig, Verdict, featurize_paths, run_detectors, vote
from .graph import ProcessNode, ProvenanceGraph, build_graph, reduce_irrelevant, to_dag
from .infopath import InfoPath, find_terminals, rank_infopaths, search_infopaths
from .ingest import AuditEvent, EventKind, normalize_stream, parse_event_line, render_event
from .pipeline import RunConfig, run_pipeline
from .report import SnapshotAlarm, llm_recommend, render_report
from .rules import Level, Rule, RuleMatch, load_rules, load_starter_rules, match_graph, refine_edge_weights
from .synth import Metrics, Scenario, ScenarioKind, generate_scenario, score

__version__ = "0.1.0"
