"""Decomposable (chordal) graph utilities.

Vertices are ``0 .. p-1``.  Orderings returned here are maximum-cardinality
search visit orders: every vertex's *earlier* neighbours form a clique, so
reading the ordering backwards gives a perfect elimination ordering.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .matcore import is_positive_definite


@dataclass(frozen=True)
class UGraph:
    p: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("graph needs at least one vertex")
        norm = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop at vertex {i}")
            if not (0 <= i < self.p and 0 <= j < self.p):
                raise ValueError(f"edge ({i}, {j}) out of range for p={self.p}")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))

    def has_edge(self, i, j):
        return (min(i, j), max(i, j)) in self.edges

    def neighbors(self, v):
        return {j if i == v else i for i, j in self.edges if v in (i, j)}

    def adjacency(self):
        adj = np.zeros((self.p, self.p), dtype=bool)
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = True
        return adj

    @property
    def n_edges(self):
        return len(self.edges)

    @classmethod
    def from_adjacency(cls, adj):
        adj = np.asarray(adj, dtype=bool)
        i, j = np.nonzero(np.triu(adj, 1))
        return cls(adj.shape[0], frozenset(zip(i.tolist(), j.tolist())))

    def sorted_edges(self):
        return sorted(self.edges)


@dataclass(frozen=True)
class JunctionTree:
    ordering: tuple
    cliques: tuple
    separators: tuple

    def residuals(self):
        return tuple(c - s for c, s in zip(self.cliques, (frozenset(),) + self.separators))


@dataclass(frozen=True)
class GraphStats:
    d: int
    aG: int
    edge_count: int
    max_forward: int
    max_backward: int


def complete(p):
    return UGraph(p, frozenset(itertools.combinations(range(p), 2)))


def empty(p):
    return UGraph(p)


def star(p, hub=0):
    return UGraph(p, frozenset((hub, v) for v in range(p) if v != hub))


def band(p, k):
    """Banded graph: i ~ j iff 0 < |i - j| <= k."""
    if not 0 <= k < max(p, 1):
        raise ValueError("bandwidth must satisfy 0 <= k < p")
    return UGraph(p, frozenset((i, j) for i in range(p) for j in range(i + 1, min(p, i + k + 1))))


def random_decomposable(p, seed, max_clique=None):
    """Random decomposable graph grown one simplicial vertex at a time.

    Each new vertex is joined to a random subset of a random existing
    clique, which keeps the graph chordal; labels are shuffled at the end.
    """
    rng = np.random.default_rng(seed)
    cliques = [{0}]
    edges = set()
    for v in range(1, p):
        c = cliques[rng.integers(len(cliques))]
        cap = len(c) if max_clique is None else min(len(c), max_clique - 1)
        k = int(rng.integers(cap + 1))
        sub = set(rng.choice(sorted(c), size=k, replace=False).tolist()) if k else set()
        edges.update((u, v) for u in sub)
        if sub == c:
            c.add(v)
        else:
            cliques.append(sub | {v})
    perm = rng.permutation(p)
    return UGraph(p, frozenset((int(perm[i]), int(perm[j])) for i, j in edges))


def mcs_order(graph, start=0):
    """Maximum-cardinality search visit order, ties broken by lowest label."""
    p = graph.p
    nbrs = [graph.neighbors(v) for v in range(p)]
    weight = [0] * p
    seen = [False] * p
    order = []
    for step in range(p):
        if step == 0:
            v = start
        else:
            v = max((u for u in range(p) if not seen[u]), key=lambda u: (weight[u], -u))
        seen[v] = True
        order.append(v)
        for u in nbrs[v]:
            if not seen[u]:
                weight[u] += 1
    return order


def _is_perfect(graph, ordering):
    pos = {v: k for k, v in enumerate(ordering)}
    for v in ordering:
        earlier = [u for u in graph.neighbors(v) if pos[u] < pos[v]]
        for a, b in itertools.combinations(earlier, 2):
            if not graph.has_edge(a, b):
                return False
    return True


def mcs_decomposable(graph, start=0):
    """Decomposability test by maximum-cardinality search plus a fill-in check.

    Returns ``(True, ordering)`` for a chordal graph and ``(False, None)``
    otherwise.
    """
    order = mcs_order(graph, start)
    if _is_perfect(graph, order):
        return True, tuple(order)
    return False, None


def is_decomposable(graph):
    return mcs_decomposable(graph)[0]


def perfect_sequence(graph, ordering=None):
    """Cliques and separators in a perfect sequence (running intersection holds)."""
    if ordering is None:
        ok, ordering = mcs_decomposable(graph)
        if not ok:
            raise ValueError("graph is not decomposable")
    elif not _is_perfect(graph, ordering):
        raise ValueError("ordering is not perfect for this graph (graph not decomposable?)")
    pos = {v: k for k, v in enumerate(ordering)}
    candidates = []
    for v in ordering:
        candidates.append(frozenset(u for u in graph.neighbors(v) if pos[u] < pos[v]) | {v})
    # a candidate can only be swallowed by a later one
    cliques = [c for k, c in enumerate(candidates)
               if not any(c < other for other in candidates[k + 1:])]
    seps = []
    covered = set(cliques[0])
    for c in cliques[1:]:
        seps.append(frozenset(c & covered))
        covered |= c
    return JunctionTree(tuple(ordering), tuple(cliques), tuple(seps))


def graph_stats(graph, ordering=None):
    """d = 1 + max degree; aG = (max forward count + 1)(max backward count + 1)."""
    if ordering is None:
        ordering = mcs_order(graph)
    pos = {v: k for k, v in enumerate(ordering)}
    fwd = [0] * graph.p
    bwd = [0] * graph.p
    for a, b in graph.edges:
        lo, hi = (a, b) if pos[a] < pos[b] else (b, a)
        fwd[lo] += 1
        bwd[hi] += 1
    deg = [len(graph.neighbors(v)) for v in range(graph.p)]
    nf, nb = max(fwd), max(bwd)
    return GraphStats(d=1 + max(deg), aG=(nf + 1) * (nb + 1), edge_count=graph.n_edges,
                      max_forward=nf, max_backward=nb)


def min_graph_stats(graph):
    """graph_stats with aG minimized over MCS orderings from every start vertex."""
    best = None
    for s in range(graph.p):
        ok, order = mcs_decomposable(graph, start=s)
        if not ok:
            raise ValueError("graph is not decomposable")
        st = graph_stats(graph, order)
        if best is None or st.aG < best.aG:
            best = st
    return best


def all_graphs(p):
    pairs = list(itertools.combinations(range(p), 2))
    for mask in range(1 << len(pairs)):
        yield UGraph(p, frozenset(pr for b, pr in enumerate(pairs) if mask >> b & 1))


def enumerate_decomposable(p):
    """Every labelled decomposable graph on p <= 5 vertices."""
    if p > 5:
        raise ValueError("enumeration is limited to p <= 5")
    return [g for g in all_graphs(p) if is_decomposable(g)]


def membership_PG(omega, graph, tol=1e-10):
    """True iff omega is positive definite with |omega_ij| <= tol off the graph."""
    omega = np.asarray(omega, dtype=float)
    p = graph.p
    if omega.shape != (p, p):
        return False
    off = ~graph.adjacency()
    np.fill_diagonal(off, False)
    if np.any(np.abs(omega[off]) > tol):
        return False
    return is_positive_definite(omega)


def write_edgelist(graph, path):
    lines = [f"p {graph.p}"] + [f"{i + 1} {j + 1}" for i, j in graph.sorted_edges()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_edgelist(path):
    """Parse the ``p <int>`` header plus 1-based ``i j`` lines."""
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or not lines[0].startswith("p "):
        raise ValueError(f"{path}: first line must be 'p <int>'")
    p = int(lines[0].split()[1])
    edges = set()
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if len(parts) != 2:
            raise ValueError(f"{path}: line {lineno}: expected 'i j', got {ln!r}")
        edges.add((int(parts[0]) - 1, int(parts[1]) - 1))
    return UGraph(p, frozenset(edges))
