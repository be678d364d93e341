import networkx as nx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cliprov.graph import build_graph
from cliprov.synth import (
    HEX_GTCACHE,
    HEX_SED,
    Metrics,
    MetricLevel,
    ScenarioKind,
    Truth,
    UnknownKind,
    generate_scenario,
    hex_encode,
    score,
)


def graph_of(sc):
    return build_graph(sc.events)


def test_hex_payloads_decode():
    assert bytes.fromhex(HEX_SED).decode() == "s/[[:blank:]]\\+/ /g"
    assert HEX_SED.startswith("732F5B") and HEX_SED.endswith("202F67")
    assert bytes.fromhex(HEX_GTCACHE).decode() == "./gtcache &> /dev/null &"
    assert HEX_GTCACHE.startswith("2E2F67") and HEX_GTCACHE.endswith("6C2026")
    assert hex_encode("id") == "6964"


def test_turla_small_scale():
    sc = generate_scenario("TurlaChain", seed=1, scale=100)
    g = graph_of(sc)
    images = {n: g.nodes[n].image.rsplit("\\", 1)[-1].lower() for n in sc.attack_nodes}
    chain = ["explorer.exe", "powershell.exe", "csc.exe", "wmi.exe"]
    nxg = g.to_networkx()
    by_name = {}
    for n, img in images.items():
        by_name.setdefault(img, []).append(n)
    assert all(by_name.get(x) for x in chain)
    assert any(
        nxg.has_edge(a, b) and nxg.has_edge(b, c) and nxg.has_edge(c, d)
        for a in by_name["explorer.exe"] for b in by_name["powershell.exe"]
        for c in by_name["csc.exe"] for d in by_name["wmi.exe"]
    )
    assert len(set(g.nodes) - sc.attack_nodes) >= 96


def test_deterministic():
    a = generate_scenario("d", seed=5, scale=80)
    b = generate_scenario("d", seed=5, scale=80)
    assert a == b
    assert generate_scenario("d", seed=6, scale=80).events != a.events


def test_minimum_scale_and_unknown_kind():
    sc = generate_scenario("f", seed=0, scale=10)
    assert sc.attack_nodes <= set(graph_of(sc).nodes)
    with pytest.raises(ValueError):
        generate_scenario("f", scale=9)
    with pytest.raises(UnknownKind):
        generate_scenario("Rootkit")


@pytest.mark.parametrize("kind", list(ScenarioKind))
def test_truth_lives_in_graph_and_is_connected(kind):
    sc = generate_scenario(kind, seed=2, scale=200)
    g = graph_of(sc)
    assert sc.attack_nodes <= set(g.nodes)
    assert sc.attack_edges <= set(g.edges)
    sub = nx.DiGraph(list(sc.attack_edges))
    assert set(sub.nodes) == sc.attack_nodes
    assert nx.is_weakly_connected(sub)
    cmdlines = [c for n in sc.attack_nodes for c in g.nodes[n].cmdlines]
    for m in sc.markers:
        assert any(m in c for c in cmdlines)
    benign = len(g.nodes) - len(sc.attack_nodes)
    assert benign >= 50 * len(sc.attack_nodes) * 0.5


@pytest.mark.parametrize("kind,needle", [("b", HEX_SED), ("c", HEX_GTCACHE), ("d", "clear_console"),
                                         ("e", "date -d null +%s"), ("f", "chmod +x tcexec")])
def test_kind_signatures(kind, needle):
    sc = generate_scenario(kind, seed=0)
    assert any(needle in (e.cmdline or "") for e in sc.events)


def test_truth_roundtrip(tmp_path):
    sc = generate_scenario("a", seed=3, scale=50)
    sc.write(tmp_path / "e.jsonl", tmp_path / "t.json")
    t = Truth.load(tmp_path / "t.json")
    assert t.attack_nodes == sc.attack_nodes and t.attack_edges == sc.attack_edges and t.markers == sc.markers


# -- metrics ----------------------------------------------------------------------


def truth(nodes, edges=(), markers=()):
    return Truth(set(nodes), set(edges), list(markers))


def alarm(nodes, cmdlines=()):
    return {"nodes": list(nodes), "chain": [{"cmdlines": list(cmdlines)}]}


def test_node_level_examples():
    t = truth(["a", "b", "c", "d"])
    exact = score([alarm("abcd")], t, "node")
    assert (exact.precision, exact.recall, exact.f1) == (1.0, 1.0, 1.0)
    none = score([], t, "node")
    assert none.recall == 0.0 and none.f1 == 0.0
    m = score([alarm("abcdwxyz")], t, MetricLevel.NODE)
    assert m.precision == 0.5 and m.recall == 1.0 and m.f1 == pytest.approx(2 / 3)


def test_path_level():
    t = truth("abc", [("a", "b"), ("b", "c")])
    m = score([alarm("ab"), alarm("xy")], t, "path")
    assert m.precision == 0.5 and m.recall == 0.5


def test_ttp_level():
    t = truth("ab", markers=["clear_console", "rm -f"])
    m = score([alarm("ab", ["w; clear_console -q"]), alarm("xy", ["ls"])], t, "ttp")
    assert m.recall == 0.5 and m.precision == 0.5


@given(st.floats(0, 1), st.floats(0, 1))
def test_f1_identity(p, r):
    m = Metrics.from_pr(p, r, MetricLevel.NODE)
    if p + r == 0:
        assert m.f1 == 0.0
    else:
        assert m.f1 == 2 * p * r / (p + r)
    assert 0.0 <= m.f1 <= 1.0 + 1e-12


@settings(max_examples=30)
@given(st.sets(st.sampled_from("abcdefgh")), st.sets(st.sampled_from("abcdefgh"), min_size=1))
def test_scores_bounded(pred, attack):
    m = score([alarm(sorted(pred))] if pred else [], truth(attack), "node")
    assert 0 <= m.precision <= 1 and 0 <= m.recall <= 1
