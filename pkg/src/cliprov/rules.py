"""Known-attack and defense-evasion rules over process chains.

Rules are a minimal subset of Sigma: up to three regular expressions
(process image, parent image, command-line) that must all match. Patterns
use Python's :mod:`re` dialect and are searched case-insensitively
anywhere in the target string.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Pattern, Union

import yaml

from .analytics import EdgeWeights
from .graph import Edge, ProvenanceGraph


class RuleError(ValueError):
    pass


class InvalidPattern(RuleError):
    def __init__(self, rule_id: str, reason: str):
        super().__init__(f"rule {rule_id!r}: {reason}")
        self.rule_id = rule_id


class DuplicateRuleId(RuleError):
    def __init__(self, rule_id: str):
        super().__init__(f"duplicate rule_id {rule_id!r}")
        self.rule_id = rule_id


class Level(str, Enum):
    HIGH = "High"
    MEDIUM = "Medium"
    LOW = "Low"

    @classmethod
    def parse(cls, value: str) -> "Level":
        for lv in cls:
            if str(value).strip().lower() in (lv.value.lower(), lv.value[0].lower()):
                return lv
        raise ValueError(f"unknown level {value!r}")


DEFAULT_RISK = {Level.HIGH: 2.5, Level.MEDIUM: 2.0, Level.LOW: 1.5}


def risk_table(high: float = 2.5, medium: float = 2.0, low: float = 1.5) -> dict[Level, float]:
    for v in (high, medium, low):
        if v < 1.0:
            raise ValueError("risk scores must be >= 1 so refinement never lowers a weight")
    return {Level.HIGH: high, Level.MEDIUM: medium, Level.LOW: low}


@dataclass(frozen=True)
class Rule:
    rule_id: str
    level: Level
    image_pattern: Optional[Pattern] = None
    cmdline_pattern: Optional[Pattern] = None
    parent_image_pattern: Optional[Pattern] = None
    description: str = ""

    def __post_init__(self):
        if not (self.image_pattern or self.cmdline_pattern or self.parent_image_pattern):
            raise InvalidPattern(self.rule_id, "at least one of image, parent_image, cmdline is required")


@dataclass(frozen=True)
class RuleMatch:
    rule_id: str
    node_id: str
    matched_edge: Optional[Edge]
    level: Level
    rs: float
    matched_text: str

    def to_dict(self) -> dict:
        return {
            "rule_id": self.rule_id,
            "node_id": self.node_id,
            "matched_edge": list(self.matched_edge) if self.matched_edge else None,
            "level": self.level.value,
            "rs": self.rs,
            "matched_text": self.matched_text,
        }


def _compile(rule_id: str, pattern) -> Optional[Pattern]:
    if pattern is None or pattern == "":
        return None
    if not isinstance(pattern, str):
        raise InvalidPattern(rule_id, f"pattern must be a string, got {pattern!r}")
    try:
        return re.compile(pattern, re.IGNORECASE)
    except re.error as exc:
        raise InvalidPattern(rule_id, f"bad regex {pattern!r}: {exc}") from None


def parse_rules(docs: Iterable[Mapping]) -> list[Rule]:
    rules: list[Rule] = []
    seen: set[str] = set()
    for doc in docs:
        if doc is None:
            continue
        if not isinstance(doc, Mapping) or "rule_id" not in doc:
            raise RuleError(f"rule document without rule_id: {doc!r}")
        rid = str(doc["rule_id"])
        if rid in seen:
            raise DuplicateRuleId(rid)
        seen.add(rid)
        try:
            level = Level.parse(doc.get("level", ""))
        except ValueError as exc:
            raise InvalidPattern(rid, str(exc)) from None
        rules.append(
            Rule(
                rule_id=rid,
                level=level,
                image_pattern=_compile(rid, doc.get("image")),
                cmdline_pattern=_compile(rid, doc.get("cmdline")),
                parent_image_pattern=_compile(rid, doc.get("parent_image")),
                description=str(doc.get("description", "")).strip(),
            )
        )
    return rules


def load_rules(path: Union[str, Path]) -> list[Rule]:
    """Load a YAML rule file (one document per rule, ``---`` separated)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"rule file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        try:
            docs = list(yaml.safe_load_all(fh))
        except yaml.YAMLError as exc:
            raise RuleError(f"{path}: invalid YAML: {exc}") from None
    flat: list = []
    for doc in docs:
        # a single document may also hold a list of rules
        flat.extend(doc if isinstance(doc, list) else [doc])
    return parse_rules(flat)


def starter_rules_path() -> Path:
    return Path(str(resources.files("cliprov") / "data" / "starter_rules.yml"))


def load_starter_rules() -> list[Rule]:
    return load_rules(starter_rules_path())


def _first_match(pattern: Pattern, texts: Iterable[str]) -> Optional[str]:
    for t in texts:
        if t and pattern.search(t):
            return t
    return None


def match_graph(
    g: ProvenanceGraph,
    rules: Iterable[Rule],
    risk: Optional[Mapping[Level, float]] = None,
) -> list[RuleMatch]:
    """Match every rule against every node.

    A rule fires on node ``n`` when each non-null pattern matches: the image
    against ``n.image``, the command-line against any of ``n.cmdlines``, the
    parent image against any parent's image. One match is recorded per
    incoming edge it applies to (only matching parents when a parent pattern
    is set), or a single edgeless match for a source node.
    """
    risk = dict(DEFAULT_RISK if risk is None else risk)
    parents = g.parents()
    out: list[RuleMatch] = []
    ordered = sorted(rules, key=lambda r: r.rule_id)
    for nid in sorted(g.nodes):
        node = g.nodes[nid]
        for rule in ordered:
            texts: list[str] = []
            if rule.image_pattern is not None:
                if not rule.image_pattern.search(node.image):
                    continue
                texts.append(node.image)
            if rule.cmdline_pattern is not None:
                hit = _first_match(rule.cmdline_pattern, node.cmdlines)
                if hit is None:
                    continue
                texts.append(hit)
            if rule.parent_image_pattern is not None:
                edges = [
                    (p, nid) for p in parents[nid]
                    if rule.parent_image_pattern.search(g.nodes[p].image)
                ]
                if not edges:
                    continue
            else:
                edges = [(p, nid) for p in parents[nid]] or [None]
            text = " | ".join(texts) if texts else node.image
            rs = risk[rule.level]
            for e in edges:
                out.append(RuleMatch(rule.rule_id, nid, e, rule.level, rs, text))
    return out


def refine_edge_weights(weights: EdgeWeights, matches: Iterable[RuleMatch]) -> EdgeWeights:
    """Multiply each matched edge's weight by the largest risk score hitting it.

    Reads only ``weights.ew`` so repeated calls with the same matches agree.
    Unmatched edges keep their original weight.
    """
    best: dict[Edge, float] = {}
    for m in matches:
        if m.matched_edge is not None and m.matched_edge in weights.ew:
            best[m.matched_edge] = max(best.get(m.matched_edge, 0.0), m.rs)
    reew = {e: w * best.get(e, 1.0) for e, w in weights.ew.items()}
    return EdgeWeights(ew=dict(weights.ew), reew=reew)
