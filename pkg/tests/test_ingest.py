import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cliprov.ingest import (
    AuditEvent,
    BadTimestamp,
    EventKind,
    MalformedLine,
    SchemaViolation,
    normalize_events,
    normalize_stream,
    parse_event_line,
    render_event,
)


def line(**kw):
    return json.dumps(kw)


def test_parse_process_start():
    ev = parse_event_line(line(kind="ProcessStart", ts=1, host="h1", pid=2, ppid=1, image="explorer.exe", cmdline=""))
    assert ev.kind is EventKind.PROCESS_START
    assert (ev.pid, ev.ppid, ev.cmdline, ev.remote) == (2, 1, "", None)


def test_parse_net_connect():
    ev = parse_event_line(line(kind="NetConnect", ts=5, host="h1", pid=9, image="csc.exe", remote="154.26.156.62:4444"))
    assert ev.kind is EventKind.NET_CONNECT
    assert ev.remote == "154.26.156.62:4444"
    assert ev.ppid is None and ev.cmdline is None


@pytest.mark.parametrize("ts", [-3, 0])
def test_nonpositive_timestamp(ts):
    with pytest.raises(BadTimestamp):
        parse_event_line(line(kind="ProcessStart", ts=ts, host="h", pid=2, ppid=1, image="x"))


@pytest.mark.parametrize("text", ["not json", "[1, 2]", '"str"', ""])
def test_malformed(text):
    with pytest.raises(MalformedLine):
        parse_event_line(text)


@pytest.mark.parametrize(
    "record",
    [
        {"kind": "ProcessStart", "ts": 1, "host": "h", "pid": 2, "image": "x"},  # no ppid
        {"kind": "NetConnect", "ts": 1, "host": "h", "pid": 2, "image": "x"},  # no remote
        {"kind": "NetConnect", "ts": 1, "host": "h", "pid": 2, "image": "x", "remote": "nohost"},
        {"kind": "Bogus", "ts": 1, "host": "h", "pid": 2, "image": "x"},
        {"kind": "ProcessStart", "ts": True, "host": "h", "pid": 2, "ppid": 1, "image": "x"},
        {"kind": "ProcessStart", "ts": 1, "host": "h", "pid": -1, "ppid": 1, "image": "x"},
    ],
)
def test_schema_violations(record):
    with pytest.raises(SchemaViolation):
        parse_event_line(json.dumps(record))


def test_extra_fields_ignored_and_missing_id_is_content_hash():
    a = parse_event_line(line(kind="ProcessStart", ts=1, host="h", pid=2, ppid=1, image="x", colour="red"))
    b = parse_event_line(line(kind="ProcessStart", ts=1, host="h", pid=2, ppid=1, image="x"))
    assert a == b
    assert len(a.event_id) == 16


def ps(ts, pid=2, event_id=None, cmd=""):
    return line(event_id=event_id or f"e{ts}-{pid}", kind="ProcessStart", ts=ts, host="h", pid=pid, ppid=1, image="x", cmdline=cmd)


def test_normalize_sorts():
    out = normalize_stream([ps(5), ps(1)])
    assert [e.ts for e in out.events] == [1, 5]


def test_normalize_dedups():
    out = normalize_stream([ps(3), ps(3)])
    assert len(out.events) == 1
    assert out.duplicates == 1


def test_normalize_skips_garbage():
    out = normalize_stream([ps(1), "garbage{", ps(2), "   "])
    assert [e.ts for e in out.events] == [1, 2]
    assert out.skipped == 1


# -- properties -----------------------------------------------------------------


hosts = st.sampled_from(["h1", "h2"])
images = st.sampled_from(["a.exe", "bash", "sh", "csc.exe"])


@st.composite
def events(draw):
    kind = draw(st.sampled_from(list(EventKind)))
    base = dict(
        ts=draw(st.integers(1, 10**12)),
        host=draw(hosts),
        pid=draw(st.integers(0, 50)),
        image=draw(images),
    )
    if kind is EventKind.PROCESS_START:
        base.update(ppid=draw(st.integers(0, 50)), cmdline=draw(st.text(max_size=20)))
    else:
        ip = ".".join(str(draw(st.integers(0, 255))) for _ in range(4))
        base.update(remote=f"{ip}:{draw(st.integers(1, 65535))}")
    return AuditEvent(event_id=draw(st.text("abcdef0123", min_size=1, max_size=8)), kind=kind, **base)


@given(events())
def test_render_parse_roundtrip(ev):
    assert parse_event_line(render_event(ev)) == ev


def unique_by_key(evs):
    seen = {}
    for e in evs:
        seen.setdefault((e.ts, e.event_id), e)
    return list(seen.values())


@settings(max_examples=60)
@given(st.lists(events(), max_size=25), st.randoms(use_true_random=False))
def test_normalize_idempotent_and_order_free(evs, rnd):
    evs = unique_by_key(evs)
    once = normalize_events(evs)
    assert normalize_events(once) == once
    shuffled = list(evs)
    rnd.shuffle(shuffled)
    assert normalize_events(shuffled) == once
    assert [(e.ts, e.event_id) for e in once] == sorted((e.ts, e.event_id) for e in once)


@settings(max_examples=40)
@given(st.lists(events(), max_size=15))
def test_stream_matches_event_normalization(evs):
    lines = [render_event(e) for e in evs]
    assert normalize_stream(lines).events == normalize_events(evs)
