import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cinpp.complex import build_graph, lift
from cinpp.cwl import (
    Coloring,
    InternTable,
    RefinementScheme,
    coloring_equivalent,
    distinguishable,
    initial_coloring,
    refine_step,
    refine_to_stable,
    refines,
)
from cinpp.exceptions import DomainMismatch, MissingFeatures
from cinpp.io import fused_chain
from cinpp.model import input_features

from conftest import graphs, random_graph


def cycle_edges(n, offset=0):
    return [(offset + i, offset + (i + 1) % n) for i in range(n)]


C6 = build_graph(6, cycle_edges(6))
TWO_C3 = build_graph(6, cycle_edges(3) + cycle_edges(3, 3))
P3 = build_graph(3, [(0, 1), (1, 2)])
K3 = build_graph(3, cycle_edges(3))


def one_wl_hash(g):
    ref = nx.Graph(list(g.edges))
    ref.add_nodes_from(range(g.num_nodes))
    return nx.weisfeiler_lehman_graph_hash(ref, iterations=g.num_nodes)


def random_relabel(cx, rng):
    return cx.permute([rng.permutation(n) for n in cx.counts])


class TestIntern:
    def test_dense_and_injective(self):
        table = InternTable()
        ids = [table(s) for s in ["a", ("b", 1), "a", ("b", 2), ("b", 1)]]
        assert ids == [0, 1, 0, 2, 1]
        assert len(table) == 3


class TestInitialColoring:
    def test_uniform_k3(self):
        assert initial_coloring(lift(K3, 6)).num_classes() == 3

    def test_uniform_p3(self):
        assert initial_coloring(lift(P3, 6)).num_classes() == 2

    def test_features_distinct_rows(self):
        g = build_graph(3, [(0, 1), (1, 2)], node_features=np.eye(3))
        cx = lift(g, 6)
        col = initial_coloring(cx, "features", input_features(cx, 3, 1))
        assert len(set(col.colors[:3].tolist())) == 3

    def test_features_required(self):
        with pytest.raises(MissingFeatures):
            initial_coloring(lift(K3, 6), "features")


class TestRefinement:
    def test_fixed_point(self, rng):
        cx = lift(random_graph(rng, 9, 0.4), 6)
        res = refine_to_stable(cx)
        again = refine_step(cx, res.coloring, "cinpp")
        assert coloring_equivalent(again, res.coloring)

    def test_c6_vs_two_triangles_ring_colours_after_one_step(self):
        from cinpp.complex import disjoint_union

        union, owner = disjoint_union([lift(C6, 6), lift(TWO_C3, 6)])
        step = refine_step(union, initial_coloring(union), "cin")
        rings = union.dims == 2
        hexagon = set(step.colors[rings & (owner == 0)].tolist())
        triangles = set(step.colors[rings & (owner == 1)].tolist())
        assert hexagon.isdisjoint(triangles)

    def test_k3_edges_stay_one_orbit(self):
        cx = lift(K3, 6)
        for scheme in ("cin", "cinpp"):
            res = refine_to_stable(cx, scheme=scheme)
            assert len(set(res.coloring.colors[cx.dims == 1].tolist())) == 1

    def test_p3_middle_vertex(self):
        res = refine_to_stable(lift(P3, 6))
        c = res.coloring.colors
        assert c[0] == c[2] != c[1]

    def test_iterations_bounded(self, rng):
        for _ in range(20):
            cx = lift(random_graph(rng, 9, 0.35), 6)
            assert refine_to_stable(cx).iterations <= cx.num_cells

    def test_max_iters_validated(self):
        with pytest.raises(ValueError):
            refine_to_stable(lift(K3, 6), max_iters=0)

    def test_scheme_parse(self):
        assert RefinementScheme.parse("CIN++") is RefinementScheme.CINPP
        assert RefinementScheme.parse("cin") is RefinementScheme.CIN


class TestFusedChains:
    # (iterations, 2-cell stabilisation) computed by running both schemes
    @pytest.mark.parametrize("n", [3, 4, 5, 6])
    def test_lower_messages_speed_up_ring_colours(self, n):
        cx = lift(fused_chain(n), 6)
        cin = refine_to_stable(cx, scheme="cin").dim_stable_at[2]
        cinpp = refine_to_stable(cx, scheme="cinpp").dim_stable_at[2]
        assert cinpp < cin

    def test_two_rings_are_symmetric(self):
        # both rings of the 2-chain lie in one automorphism orbit, so their
        # partition is final before any refinement under either scheme
        cx = lift(fused_chain(2), 6)
        for scheme in ("cin", "cinpp"):
            assert refine_to_stable(cx, scheme=scheme).dim_stable_at[2] == 0

    def test_never_slower(self):
        for n in range(1, 9):
            cx = lift(fused_chain(n), 6)
            cin = refine_to_stable(cx, scheme="cin").dim_stable_at[2]
            cinpp = refine_to_stable(cx, scheme="cinpp").dim_stable_at[2]
            assert cinpp <= cin


class TestDistinguishable:
    def test_c6_vs_two_triangles(self):
        assert one_wl_hash(C6) == one_wl_hash(TWO_C3)
        for scheme in ("cin", "cinpp"):
            assert distinguishable(lift(C6, 6), lift(TWO_C3, 6), scheme)

    def test_ring_bound_matters(self):
        assert distinguishable(lift(C6, 6), lift(C6, 5))

    def test_relabelled_copy(self, rng):
        for _ in range(25):
            cx = lift(random_graph(rng, 8, 0.4), 6)
            assert not distinguishable(cx, random_relabel(cx, rng))

    def test_features(self):
        a = lift(build_graph(2, [(0, 1)], node_features=[[0.0], [1.0]]), 6)
        b = lift(build_graph(2, [(0, 1)], node_features=[[0.0], [0.0]]), 6)
        fa, fb = input_features(a, 1, 1), input_features(b, 1, 1)
        assert distinguishable(a, b, init="features", features_a=fa, features_b=fb)
        assert not distinguishable(a, b)
        with pytest.raises(MissingFeatures):
            distinguishable(a, b, init="features")


class TestRefines:
    def test_examples(self):
        ident = Coloring(np.arange(5))
        const = Coloring(np.zeros(5, dtype=int))
        assert refines(ident, const)
        assert not refines(const, ident)
        assert refines(const, const)

    def test_bijective_recolouring(self, rng):
        c = Coloring(rng.integers(0, 4, size=30))
        perm = rng.permutation(4)
        assert coloring_equivalent(c, Coloring(perm[c.colors]))

    def test_strictly_coarser(self):
        fine = Coloring(np.array([0, 1, 2, 2]))
        coarse = Coloring(np.array([0, 0, 1, 1]))
        assert not coloring_equivalent(fine, coarse)

    def test_domain_mismatch(self):
        with pytest.raises(DomainMismatch):
            refines(Coloring(np.zeros(3, dtype=int)), Coloring(np.zeros(4, dtype=int)))


@settings(max_examples=60, deadline=None)
@given(graphs(max_nodes=8), st.integers(0, 2**31 - 1))
def test_refinement_properties(g, seed):
    rng = np.random.default_rng(seed)
    cx = lift(g, 6)
    stable = {}
    for scheme in ("cin", "cinpp"):
        res = refine_to_stable(cx, scheme=scheme)
        for prev, nxt in zip(res.history, res.history[1:]):
            assert refines(nxt, prev)
        stable[scheme] = res.coloring
        # histograms are invariant under relabelling
        perms = [rng.permutation(n) for n in cx.counts]
        relabelled = refine_to_stable(cx.permute(perms), scheme=scheme)
        for k in range(3):
            a = sorted(np.unique(res.coloring.colors[cx.dims == k], return_counts=True)[1].tolist())
            b = sorted(np.unique(relabelled.coloring.colors[cx.dims == k], return_counts=True)[1].tolist())
            assert a == b
    assert refines(stable["cinpp"], stable["cin"])
