"""Snapshot alarms, JSON/text reports and the optional LLM annotator."""

from __future__ import annotations

import json
import logging
import urllib.error
import urllib.request
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

from .graph import ProvenanceGraph
from .infopath import InfoPath
from .rules import RuleMatch

logger = logging.getLogger(__name__)

SNAPSHOT_SIZE = 5
REPORT_VERSION = 1
NO_ALARMS = "no anomalous InfoPaths"


class ReportWriteFailure(OSError):
    pass


class EndpointUnreachable(RuntimeError):
    pass


class MalformedResponse(RuntimeError):
    pass


@dataclass
class SnapshotAlarm:
    rank: int
    infopath: InfoPath
    images: list[str]
    cmdlines: list[list[str]]
    endpoints: list[list[str]]
    rule_hits: list[RuleMatch]
    votes: int
    explanation: str = ""

    @property
    def effective_length(self) -> float:
        return self.infopath.effective_length

    @property
    def diversity(self) -> int:
        return self.infopath.diversity

    def chain_text(self) -> str:
        parts = []
        for image, cmds in zip(self.images, self.cmdlines):
            parts.append(f"{image} ({'; '.join(cmds)})" if cmds else image)
        eps = sorted({e for es in self.endpoints for e in es})
        text = " -> ".join(parts)
        if eps:
            text += " -> " + ", ".join(eps)
        return text

    def to_dict(self) -> dict:
        return {
            "rank": self.rank,
            "nodes": list(self.infopath.nodes),
            "chain": [
                {"node_id": n, "image": img, "cmdlines": list(c), "endpoints": list(e)}
                for n, img, c, e in zip(self.infopath.nodes, self.images, self.cmdlines, self.endpoints)
            ],
            "communities": list(self.infopath.communities),
            "effective_length": self.infopath.effective_length,
            "diversity": self.infopath.diversity,
            "votes": self.votes,
            "rule_hits": [m.to_dict() for m in self.rule_hits],
            "explanation": self.explanation,
        }


_RULE_HINT = {
    "High": "matches a known attack signature",
    "Medium": "matches a defense-evasion indicator",
    "Low": "matches a low-confidence evasion indicator",
}


def template_explanation(alarm: SnapshotAlarm, descriptions: Optional[dict] = None) -> str:
    """Deterministic per-command explanation used when no LLM is configured."""
    descriptions = descriptions or {}
    lines = []
    by_node: dict[str, list[RuleMatch]] = {}
    for m in alarm.rule_hits:
        by_node.setdefault(m.node_id, []).append(m)
    for node, image, cmds in zip(alarm.infopath.nodes, alarm.images, alarm.cmdlines):
        for c in cmds:
            hits = sorted({(m.rule_id, m.level.value) for m in by_node.get(node, [])})
            if hits:
                why = "; ".join(
                    f"{rid} ({lvl}): {descriptions.get(rid) or _RULE_HINT[lvl]}" for rid, lvl in hits
                )
                lines.append(f"{image}: `{c}` {why}.")
            else:
                lines.append(f"{image}: `{c}` has no rule hit; flagged by command-line differentiation.")
    lines.append(f"{alarm.votes}/6 detectors voted this InfoPath anomalous.")
    return "\n".join(lines)


def build_alarm(
    rank: int, path: InfoPath, graph: ProvenanceGraph, matches: Sequence[RuleMatch], votes: int
) -> SnapshotAlarm:
    on_path = set(path.nodes)
    path_edges = set(path.edges)
    hits = [
        m for m in matches
        if m.node_id in on_path and (m.matched_edge is None or m.matched_edge in path_edges)
    ]
    nodes = [graph.nodes[n] for n in path.nodes]
    return SnapshotAlarm(
        rank=rank,
        infopath=path,
        images=[n.image for n in nodes],
        cmdlines=[[c for c in n.cmdlines if c] for n in nodes],
        endpoints=[list(n.endpoints) for n in nodes],
        rule_hits=hits,
        votes=votes,
    )


def render_report(
    alarms: Sequence[SnapshotAlarm],
    manifest: dict,
    restored: Sequence[SnapshotAlarm] = (),
) -> tuple[str, str]:
    """Return ``(json_text, text_digest)``; both are byte-stable for equal input."""
    doc = {
        "version": REPORT_VERSION,
        "alarms": [a.to_dict() for a in alarms],
        "restored": [a.to_dict() for a in restored],
        "manifest": manifest,
    }
    json_text = json.dumps(doc, indent=2, sort_keys=True) + "\n"

    out = ["Snapshot alarms", "=" * 15, ""]
    if not alarms:
        out += [f"{NO_ALARMS}.", ""]
    for a in alarms:
        out.append(f"#{a.rank}  votes={a.votes}/6  length={a.effective_length:.6g}  diversity={a.diversity}")
        out.append(f"    {a.chain_text()}")
        for m in sorted({(m.rule_id, m.level.value, m.matched_text) for m in a.rule_hits}):
            out.append(f"    rule {m[0]} [{m[1]}]: {m[2]}")
        for line in a.explanation.splitlines():
            out.append(f"    | {line}")
        out.append("")
    if restored:
        out += ["Restored for further review", "-" * 27]
        for a in restored:
            out.append(f"#{a.rank}  votes={a.votes}/6  {a.chain_text()}")
        out.append("")
    out += ["Manifest", "-" * 8, json.dumps(manifest, indent=2, sort_keys=True), ""]
    return json_text, "\n".join(out)


def write_report(path: Union[str, Path], json_text: str, text: str) -> tuple[Path, Path]:
    """Write ``<path>`` (JSON) and ``<path>.txt`` (digest)."""
    path = Path(path)
    txt = path.with_suffix(path.suffix + ".txt") if path.suffix != ".txt" else path.with_suffix(".digest.txt")
    try:
        path.write_text(json_text, encoding="utf-8")
        txt.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise ReportWriteFailure(f"cannot write report to {path}: {exc}") from exc
    return path, txt


# -- LLM annotation -----------------------------------------------------------


def _prompt(alarm: SnapshotAlarm) -> str:
    return (
        "Explain the intent and impact of this process chain and its command-lines "
        "for a security analyst.\n" + alarm.chain_text()
    )


def _http_complete(endpoint: str, prompt: str, timeout: float) -> str:
    body = json.dumps({"prompt": prompt}).encode("utf-8")
    req = urllib.request.Request(endpoint, data=body, headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            raw = resp.read().decode("utf-8")
    except (urllib.error.URLError, OSError, ValueError) as exc:
        raise EndpointUnreachable(str(exc)) from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError:
        doc = raw
    text = doc.get("text") if isinstance(doc, dict) else doc
    if not isinstance(text, str) or not text.strip():
        raise MalformedResponse(f"no text in response: {raw[:200]!r}")
    return text.strip()


def llm_recommend(
    alarms: Sequence[SnapshotAlarm],
    endpoint: Optional[str],
    timeout: float = 10.0,
    complete: Optional[Callable[[str, str, float], str]] = None,
) -> tuple[list[SnapshotAlarm], list[str]]:
    """Replace alarm explanations with text from a completion endpoint.

    The endpoint receives ``{"prompt": ...}`` and should answer with
    ``{"text": ...}`` or plain text. Failures are never fatal: the alarm
    keeps its template explanation and a warning is returned. Only the
    explanation field ever changes.
    """
    if not endpoint:
        return list(alarms), []
    complete = complete or _http_complete
    out, warnings = [], []
    for a in alarms:
        try:
            text = complete(endpoint, _prompt(a), timeout)
            if not isinstance(text, str) or not text.strip():
                raise MalformedResponse("empty completion")
            out.append(replace(a, explanation=text.strip()))
        except (EndpointUnreachable, MalformedResponse, TimeoutError) as exc:
            msg = f"alarm #{a.rank}: llm annotation failed ({type(exc).__name__}: {exc}); template kept"
            logger.warning(msg)
            warnings.append(msg)
            out.append(a)
    return out, warnings
