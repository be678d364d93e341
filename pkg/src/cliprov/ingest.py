"""Parsing and normalization of JSON-lines audit events."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

logger = logging.getLogger(__name__)


class IngestError(ValueError):
    """Base class for event parsing failures."""


class MalformedLine(IngestError):
    pass


class SchemaViolation(IngestError):
    pass


class BadTimestamp(IngestError):
    pass


class EventKind(str, Enum):
    PROCESS_START = "ProcessStart"
    NET_CONNECT = "NetConnect"


@dataclass(frozen=True)
class AuditEvent:
    event_id: str
    kind: EventKind
    ts: int
    host: str
    pid: int
    image: str
    ppid: Optional[int] = None
    cmdline: Optional[str] = None
    remote: Optional[str] = None

    def to_dict(self) -> dict:
        d = {
            "event_id": self.event_id,
            "kind": self.kind.value,
            "ts": self.ts,
            "host": self.host,
            "pid": self.pid,
            "image": self.image,
        }
        if self.kind is EventKind.PROCESS_START:
            d["ppid"] = self.ppid
            d["cmdline"] = self.cmdline
        else:
            d["remote"] = self.remote
        return d


def render_event(event: AuditEvent) -> str:
    """Serialize an event as one canonical JSON line (no trailing newline)."""
    return json.dumps(event.to_dict(), sort_keys=True, separators=(",", ":"))


def _content_id(fields: dict) -> str:
    blob = json.dumps(fields, sort_keys=True, separators=(",", ":"))
    return hashlib.sha1(blob.encode("utf-8")).hexdigest()[:16]


def _require(obj: dict, key: str, typ, kind: str):
    if key not in obj or obj[key] is None:
        raise SchemaViolation(f"{kind} event missing required field '{key}'")
    val = obj[key]
    # bool is an int subclass; reject it for integer fields
    if typ is int and (isinstance(val, bool) or not isinstance(val, int)):
        raise SchemaViolation(f"field '{key}' must be an integer, got {val!r}")
    if typ is str and not isinstance(val, str):
        raise SchemaViolation(f"field '{key}' must be a string, got {val!r}")
    return val


def parse_event_line(line: str) -> AuditEvent:
    """Parse one JSON-lines record into an :class:`AuditEvent`.

    Unknown fields are ignored. When ``event_id`` is absent it is derived
    from a hash of the record's content, so identical records share an id.

    Raises
    ------
    MalformedLine
        The line is not a JSON object.
    SchemaViolation
        A field required for the event kind is missing or mistyped.
    BadTimestamp
        ``ts`` is not strictly positive.
    """
    try:
        obj = json.loads(line)
    except (json.JSONDecodeError, TypeError) as exc:
        raise MalformedLine(f"not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise MalformedLine("record is not a JSON object")

    raw_kind = obj.get("kind")
    try:
        kind = EventKind(raw_kind)
    except ValueError:
        raise SchemaViolation(f"unknown or missing kind {raw_kind!r}") from None

    ts = _require(obj, "ts", int, kind.value)
    if ts <= 0:
        raise BadTimestamp(f"ts must be > 0, got {ts}")
    host = _require(obj, "host", str, kind.value)
    pid = _require(obj, "pid", int, kind.value)
    if pid < 0:
        raise SchemaViolation(f"pid must be >= 0, got {pid}")
    image = _require(obj, "image", str, kind.value)

    fields = {"kind": kind.value, "ts": ts, "host": host, "pid": pid, "image": image}
    if kind is EventKind.PROCESS_START:
        ppid = _require(obj, "ppid", int, kind.value)
        if ppid < 0:
            raise SchemaViolation(f"ppid must be >= 0, got {ppid}")
        cmdline = obj.get("cmdline", "")
        if cmdline is None:
            cmdline = ""
        if not isinstance(cmdline, str):
            raise SchemaViolation("field 'cmdline' must be a string")
        fields.update(ppid=ppid, cmdline=cmdline)
    else:
        remote = _require(obj, "remote", str, kind.value)
        host_part, sep, port = remote.rpartition(":")
        if not sep or not host_part or not port.isdigit():
            raise SchemaViolation(f"remote must be 'ip:port', got {remote!r}")
        fields.update(remote=remote)

    event_id = obj.get("event_id")
    if event_id is None:
        event_id = _content_id(fields)
    elif not isinstance(event_id, str):
        event_id = str(event_id)

    return AuditEvent(
        event_id=event_id,
        kind=kind,
        ts=ts,
        host=host,
        pid=pid,
        image=image,
        ppid=fields.get("ppid"),
        cmdline=fields.get("cmdline"),
        remote=fields.get("remote"),
    )


@dataclass
class NormalizeResult:
    events: list[AuditEvent]
    skipped: int = 0
    duplicates: int = 0


def normalize_events(events: Iterable[AuditEvent]) -> list[AuditEvent]:
    """Sort by ``(ts, event_id)`` and keep the first event seen per key."""
    seen: dict[tuple[int, str], AuditEvent] = {}
    for ev in events:
        seen.setdefault((ev.ts, ev.event_id), ev)
    return [seen[k] for k in sorted(seen)]


def normalize_stream(lines: Iterable[str]) -> NormalizeResult:
    """Parse, deduplicate and time-order a sequence of event lines.

    Malformed or invalid lines are skipped and counted; blank lines are
    ignored silently.
    """
    parsed: list[AuditEvent] = []
    skipped = 0
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            parsed.append(parse_event_line(line))
        except IngestError as exc:
            skipped += 1
            logger.debug("skipping line %d: %s", n, exc)
    events = normalize_events(parsed)
    if skipped:
        logger.warning("skipped %d invalid event line(s)", skipped)
    return NormalizeResult(events=events, skipped=skipped, duplicates=len(parsed) - len(events))
