import random
import warnings

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cliprov.analytics import (
    CS_FLOOR,
    EPSILON,
    CommunityPartition,
    EdgeWeights,
    NodeScores,
    NonConvergence,
    _undirected_weights,
    betweenness,
    betweenness_raw,
    community_scores,
    detect_communities,
    edge_weights,
    modularity,
    node_scores,
    pagerank,
    rareness_normalize,
)

from oracles import (
    best_partition,
    betweenness_bruteforce,
    make_graph,
    modularity_reference,
    pagerank_direct,
    random_dag,
    random_digraph,
)


# -- PageRank --------------------------------------------------------------------


def test_isolated_node():
    assert pagerank(make_graph(1, [])).scores == {"n0": pytest.approx(0.15)}


def test_single_edge():
    pr = pagerank(make_graph(2, [("n0", "n1")])).scores
    assert pr["n0"] == pytest.approx(0.15)
    assert pr["n1"] == pytest.approx(0.15 + 0.85 * 0.15)


def test_two_cycle_fixed_point():
    pr = pagerank(make_graph(2, [("n0", "n1"), ("n1", "n0")])).scores
    assert pr["n0"] == pytest.approx(1.0, abs=1e-8)
    assert pr["n1"] == pytest.approx(1.0, abs=1e-8)


def test_nonconvergence_warns_and_returns_iterate():
    g = make_graph(2, [("n0", "n1"), ("n1", "n0")])
    with pytest.warns(NonConvergence):
        res = pagerank(g, max_iter=3)
    assert not res.converged and res.iterations == 3


def test_dag_converges_quickly():
    g = make_graph(4, [("n0", "n1"), ("n1", "n2"), ("n2", "n3")])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        res = pagerank(g)
    assert res.converged and res.iterations <= 6


@pytest.mark.parametrize("seed", range(40))
def test_pagerank_matches_linear_solve(seed):
    g = random_digraph(random.Random(seed), max_nodes=8)
    got = pagerank(g).scores
    want = pagerank_direct(g)
    for n in g.nodes:
        assert abs(got[n] - want[n]) <= 1e-8


# -- rareness / betweenness -----------------------------------------------------------


def test_rareness_examples():
    assert rareness_normalize({"A": 0.15, "B": 0.2775}) == {"A": 1.0, "B": 0.0}
    assert rareness_normalize({"a": 1, "b": 2, "c": 3}) == {"a": 1.0, "b": 0.5, "c": 0.0}
    assert rareness_normalize({"a": 0.3, "b": 0.3}) == {"a": 0.5, "b": 0.5}
    with pytest.raises(ValueError):
        rareness_normalize({})


@given(st.dictionaries(st.text(min_size=1, max_size=3), st.floats(0, 10), min_size=1, max_size=8))
def test_rareness_flips_order(raw):
    rare = rareness_normalize(raw)
    assert all(0.0 <= v <= 1.0 for v in rare.values())
    if len(set(raw.values())) > 1:
        lo = min(raw, key=raw.get)
        hi = max(raw, key=raw.get)
        assert rare[lo] == 1.0 and rare[hi] == 0.0


def test_betweenness_chain():
    g = make_graph(["A", "B", "C"], [("A", "B"), ("B", "C")])
    assert betweenness_raw(g) == {"A": 0.0, "B": 1.0, "C": 0.0}
    assert betweenness(g) == {"A": 0.0, "B": 1.0, "C": 0.0}


def test_betweenness_single_node():
    assert betweenness(make_graph(1, [])) == {"n0": 0.5}


def test_betweenness_star():
    g = make_graph(["i1", "i2", "c", "o1", "o2"], [("i1", "c"), ("i2", "c"), ("c", "o1"), ("c", "o2")])
    assert betweenness_raw(g)["c"] == 4.0


@pytest.mark.parametrize("seed", range(40))
def test_betweenness_matches_enumeration(seed):
    g = random_digraph(random.Random(1000 + seed), max_nodes=7)
    got = betweenness_raw(g)
    want = betweenness_bruteforce(g)
    assert got == {n: float(v) for n, v in want.items()}


def test_node_scores_cover_graph():
    g = random_dag(random.Random(3), max_nodes=8, p=0.4)
    s = node_scores(g)
    assert set(s.pr) == set(s.cb) == set(g.nodes)
    assert all(0 <= v <= 1 for v in list(s.pr.values()) + list(s.cb.values()))


# -- edge weights ----------------------------------------------------------------------


def test_edge_weight_linear_map_and_clamp():
    g = make_graph(6, [("n0", "n1"), ("n2", "n3"), ("n4", "n5")])
    pr = {"n0": 0.3, "n1": 0.3, "n2": 0.5, "n3": 0.5, "n4": 0.7, "n5": 0.7}
    cb = {"n0": 0.3, "n1": 0.3, "n2": 0.5, "n3": 0.5, "n4": 0.7, "n5": 0.7}
    ew = edge_weights(g, NodeScores(pr, cb)).ew
    # sums are 1.2, 2.0, 2.8
    assert ew[("n0", "n1")] == EPSILON
    assert ew[("n2", "n3")] == pytest.approx(0.5)
    assert ew[("n4", "n5")] == 1.0


def test_edge_weights_degenerate():
    one = make_graph(2, [("n0", "n1")])
    assert edge_weights(one, node_scores(one)).ew == {("n0", "n1"): 1.0}
    two = make_graph(4, [("n0", "n1"), ("n2", "n3")])
    half = {n: 0.5 for n in two.nodes}
    assert set(edge_weights(two, NodeScores(half, half)).ew.values()) == {0.5}


@settings(max_examples=50)
@given(st.integers(0, 10**6))
def test_edge_weights_in_range_and_reew_copy(seed):
    g = random_dag(random.Random(seed), max_nodes=8, p=0.4)
    w = edge_weights(g, node_scores(g))
    assert all(EPSILON <= v <= 1.0 for v in w.ew.values())
    assert w.reew == w.ew


@settings(max_examples=50)
@given(st.integers(0, 10**6), st.floats(0, 1))
def test_edge_sum_monotone_in_node_scores(seed, bump):
    rng = random.Random(seed)
    g = random_dag(rng, max_nodes=6, p=0.5)
    if not g.edges:
        return
    s = node_scores(g)
    m, n = sorted(g.edges)[0]
    before = s.pr[m] + s.pr[n] + s.cb[m] + s.cb[n]
    s.pr[m] += bump
    assert s.pr[m] + s.pr[n] + s.cb[m] + s.cb[n] >= before


# -- communities --------------------------------------------------------------------------


def two_cliques():
    a, b = ["a1", "a2", "a3"], ["b1", "b2", "b3"]
    intra = [("a1", "a2"), ("a1", "a3"), ("a2", "a3"), ("b1", "b2"), ("b1", "b3"), ("b2", "b3")]
    g = make_graph(a + b, intra + [("a3", "b1")])
    ew = {e: 1.0 for e in intra}
    ew[("a3", "b1")] = 0.1
    return g, EdgeWeights(ew=ew, reew=dict(ew))


def test_two_cliques_match_bruteforce_optimum():
    g, w = two_cliques()
    best = best_partition(sorted(g.nodes), w.ew)
    assert sorted(sorted(b) for b in best) == [["a1", "a2", "a3"], ["b1", "b2", "b3"]]
    part = detect_communities(g, w, seed=0)
    assert sorted(part.members().values()) == sorted(sorted(b) for b in best)


def test_modularity_agrees_with_reference():
    g, w = two_cliques()
    adj = _undirected_weights(g, w)
    for p in ([["a1", "a2", "a3"], ["b1", "b2", "b3"]], [list(g.nodes)], [[n] for n in g.nodes]):
        assignment = {n: i for i, block in enumerate(p) for n in block}
        assert modularity(adj, assignment) == pytest.approx(modularity_reference(w.ew, p))


def test_single_node_community():
    part = detect_communities(make_graph(1, []))
    assert part.assignment == {"n0": 0}


def communities_connected(g, part):
    import networkx as nx

    und = g.to_networkx().to_undirected()
    return all(nx.is_connected(und.subgraph(m)) for m in part.members().values())


@pytest.mark.parametrize("seed", range(30))
def test_communities_connected_and_deterministic(seed):
    g = random_dag(random.Random(seed), max_nodes=14, p=0.2)
    w = edge_weights(g, node_scores(g))
    p1 = detect_communities(g, w, seed=seed)
    p2 = detect_communities(g, w, seed=seed)
    assert p1.assignment == p2.assignment
    assert set(p1.assignment) == set(g.nodes)
    assert communities_connected(g, p1)


def test_cs_examples():
    g = make_graph(4, [("n0", "n1"), ("n2", "n3")])
    w = EdgeWeights(ew={("n0", "n1"): 0.2, ("n2", "n3"): 0.8})
    part = CommunityPartition({"n0": 0, "n1": 0, "n2": 1, "n3": 1})
    assert community_scores(part, w) == {0: pytest.approx(0.1), 1: 1.0}
    assert part.cs == {0: pytest.approx(0.1), 1: 1.0}

    single = CommunityPartition({"n0": 0, "n1": 0, "n2": 0, "n3": 0})
    assert community_scores(single, w) == {0: 1.0}

    lonely = CommunityPartition({"n0": 0, "n1": 0, "n2": 1, "n3": 2})
    cs = community_scores(lonely, EdgeWeights(ew={("n0", "n1"): 0.5, ("n2", "n3"): 0.5}))
    assert cs[1] == CS_FLOOR and cs[2] == CS_FLOOR and cs[0] == 1.0


def test_cs_uses_refined_weights():
    w = EdgeWeights(ew={("n0", "n1"): 0.2, ("n2", "n3"): 0.3}, reew={("n0", "n1"): 0.5, ("n2", "n3"): 0.3})
    part = CommunityPartition({"n0": 0, "n1": 0, "n2": 1, "n3": 1})
    assert community_scores(part, w) == {0: 1.0, 1: pytest.approx(0.1)}
