import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bvmcov import graph as g
from bvmcov.graph import UGraph


def cycle(p):
    return UGraph(p, frozenset((i, (i + 1) % p) for i in range(p)))


def brute_chordal(gr):
    """Every cycle of length >= 4 has a chord: no induced cycle of length >= 4."""
    for k in range(4, gr.p + 1):
        for sub in itertools.combinations(range(gr.p), k):
            deg = [sum(gr.has_edge(u, v) for v in sub if v != u) for u in sub]
            if all(d == 2 for d in deg):
                # connected 2-regular induced subgraph is a chordless cycle
                seen, stack = {sub[0]}, [sub[0]]
                while stack:
                    u = stack.pop()
                    for v in sub:
                        if v not in seen and gr.has_edge(u, v):
                            seen.add(v)
                            stack.append(v)
                if len(seen) == k:
                    return False
    return True


def test_ugraph_normalises_edges():
    gr = UGraph(3, frozenset({(2, 0), (1, 0)}))
    assert gr.edges == {(0, 1), (0, 2)}
    with pytest.raises(ValueError):
        UGraph(3, frozenset({(1, 1)}))
    with pytest.raises(ValueError):
        UGraph(3, frozenset({(0, 3)}))


def test_mcs_examples():
    assert g.mcs_decomposable(cycle(4)) == (False, None)
    ok, order = g.mcs_decomposable(g.star(5))
    assert ok and sorted(order) == list(range(5))
    assert g.mcs_decomposable(g.complete(4))[0]


def test_mcs_agrees_with_brute_force_p_le_6():
    for p in range(1, 6):
        for gr in g.all_graphs(p):
            assert g.is_decomposable(gr) == brute_chordal(gr)
    # p = 6 has 32768 graphs; a seeded sample keeps the run short
    rng = np.random.default_rng(0)
    pairs = list(itertools.combinations(range(6), 2))
    for _ in range(1500):
        mask = rng.random(len(pairs)) < rng.uniform(0.2, 0.8)
        gr = UGraph(6, frozenset(pr for pr, m in zip(pairs, mask) if m))
        assert g.is_decomposable(gr) == brute_chordal(gr)


def test_enumeration_counts_match_oracle(oracle):
    for p in (2, 3, 4, 5):
        assert len(g.enumerate_decomposable(p)) == oracle["chordal_counts"][str(p)]
    four = g.enumerate_decomposable(4)
    assert cycle(4) not in four
    with pytest.raises(ValueError):
        g.enumerate_decomposable(6)


def test_perfect_sequence_examples():
    jt = g.perfect_sequence(g.band(3, 1))
    assert set(jt.cliques) == {frozenset({0, 1}), frozenset({1, 2})}
    assert jt.separators == (frozenset({1}),)
    jt = g.perfect_sequence(g.star(4))
    assert set(jt.cliques) == {frozenset({0, v}) for v in (1, 2, 3)}
    assert jt.separators == (frozenset({0}),) * 2
    jt = g.perfect_sequence(g.complete(3))
    assert jt.cliques == (frozenset({0, 1, 2}),) and jt.separators == ()
    with pytest.raises(ValueError):
        g.perfect_sequence(cycle(4))


def _check_junction_tree(gr, jt):
    covered = set()
    for k, c in enumerate(jt.cliques):
        if k:
            # running intersection: the separator is the overlap with all earlier cliques
            assert jt.separators[k - 1] == c & covered
            assert any(jt.separators[k - 1] <= jt.cliques[m] for m in range(k))
        covered |= c
    assert covered == set(range(gr.p))
    for i, j in gr.edges:
        assert any({i, j} <= c for c in jt.cliques)
    for c in jt.cliques:
        assert all(gr.has_edge(a, b) for a, b in itertools.combinations(c, 2))
    residuals = jt.residuals()
    assert sorted(v for r in residuals for v in r) == list(range(gr.p))


@given(st.integers(1, 12), st.integers(0, 2 ** 31))
def test_random_decomposable_property(p, seed):
    gr = g.random_decomposable(p, seed)
    assert g.is_decomposable(gr)
    assert gr == g.random_decomposable(p, seed)
    _check_junction_tree(gr, g.perfect_sequence(gr))


def test_random_decomposable_seed_7():
    assert g.mcs_decomposable(g.random_decomposable(8, seed=7))[0]


def test_graph_stats_examples():
    for p in range(2, 9):
        st_ = g.graph_stats(g.star(p), ordering=list(range(p)))
        assert (st_.d, st_.aG, st_.edge_count) == (p, 2 * p, p - 1)
        assert min(st_.aG, st_.d ** 4) * math.log(p) == pytest.approx(2 * p * math.log(p))
    st_ = g.graph_stats(g.empty(6))
    assert (st_.d, st_.aG, st_.edge_count) == (1, 1, 0)
    st_ = g.graph_stats(g.band(6, 1), ordering=list(range(6)))
    assert (st_.d, st_.aG) == (3, 4)


@given(st.integers(1, 10), st.integers(0, 2 ** 31))
def test_graph_stats_bounds(p, seed):
    gr = g.random_decomposable(p, seed)
    st_ = g.min_graph_stats(gr)
    assert 1 <= st_.d <= p and 1 <= st_.aG <= p * p and st_.edge_count <= p * (p - 1) // 2
    assert st_.aG <= g.graph_stats(gr).aG


def test_generators():
    assert g.star(3).edges == {(0, 1), (0, 2)}
    assert g.band(4, 1).edges == {(0, 1), (1, 2), (2, 3)}
    with pytest.raises(ValueError):
        g.band(4, 4)


def test_membership():
    rng = np.random.default_rng(1)
    for gr in (g.star(4), g.empty(4), g.complete(4)):
        assert g.membership_PG(np.eye(4), gr)
    a = rng.standard_normal((4, 6))
    dense = a @ a.T + np.eye(4)
    assert not g.membership_PG(dense, g.empty(4))
    assert not g.membership_PG(-np.eye(4), g.complete(4))


def test_edgelist_round_trip(tmp_path):
    gr = g.random_decomposable(7, 3)
    path = tmp_path / "g.txt"
    g.write_edgelist(gr, path)
    assert path.read_text().splitlines()[0] == "p 7"
    assert g.read_edgelist(path) == gr
    path.write_text("p 3\n1 2 3\n")
    with pytest.raises(ValueError, match="line 2"):
        g.read_edgelist(path)
