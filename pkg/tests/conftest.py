"""Shared helpers: random graphs, brute-force oracles and hypothesis strategies."""

import itertools

import numpy as np
import pytest
from hypothesis import strategies as st

from cinpp.complex import build_graph, lift


def random_graph(rng, n, p, node_dim=None, edge_dim=None):
    edges = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < p]
    nf = None if node_dim is None else rng.normal(size=(n, node_dim))
    ef = None if edge_dim is None else rng.normal(size=(len(edges), edge_dim))
    return build_graph(n, edges, nf, ef)


def brute_force_induced_cycles(graph, max_size):
    """Vertex sets whose induced subgraph is a single cycle, by subset search."""
    adj = [set() for _ in range(graph.num_nodes)]
    for u, v in graph.edges:
        adj[u].add(v)
        adj[v].add(u)
    found = set()
    for k in range(3, min(max_size, graph.num_nodes) + 1):
        for subset in itertools.combinations(range(graph.num_nodes), k):
            s = set(subset)
            if any(len(adj[v] & s) != 2 for v in subset):
                continue
            # 2-regular; a single cycle iff connected
            seen, stack = {subset[0]}, [subset[0]]
            while stack:
                for w in adj[stack.pop()] & s:
                    if w not in seen:
                        seen.add(w)
                        stack.append(w)
            if len(seen) == k:
                found.add(frozenset(subset))
    return found


def fused_chain_edges(n):
    """Hexagon chain written independently of the library's generator (rung layout)."""
    top = list(range(0, 2 * n + 1))
    bottom = list(range(2 * n + 1, 4 * n + 2))
    edges = [(top[i], top[i + 1]) for i in range(2 * n)]
    edges += [(bottom[i], bottom[i + 1]) for i in range(2 * n)]
    edges += [(top[2 * i], bottom[2 * i]) for i in range(n + 1)]
    return 4 * n + 2, edges


@st.composite
def graphs(draw, max_nodes=9, min_nodes=1):
    n = draw(st.integers(min_nodes, max_nodes))
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    mask = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
    return build_graph(n, [e for e, keep in zip(pairs, mask) if keep])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def triangle():
    return lift(build_graph(3, [(0, 1), (1, 2), (0, 2)]), 6)


@pytest.fixture
def hexagon():
    return lift(build_graph(6, [(i, (i + 1) % 6) for i in range(6)]), 6)
