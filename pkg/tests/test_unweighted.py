import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bmatch import generators
from bmatch.graph import BMatching, CopyVertex, Graph, GraphError, apply_walks, validate_bmatching
from bmatch.mpc import MachineCluster, derive_rng
from bmatch.oracle import exact_max_bmatching
from bmatch.unweighted import (PartialPathSet, UnweightedConfig, approximation_certificate,
                               build_layered_unweighted, distribute_matched_edges, extend_layer,
                               grow_paths, has_full_path, layers_for, unweighted_one_plus_eps)
from conftest import binomial_ok


class ScriptedRng:
    """Answers ``integers`` calls from a fixed script (one array per call)."""

    def __init__(self, *answers):
        self.answers = list(answers)

    def integers(self, lo, hi=None, size=None):
        return np.asarray(self.answers.pop(0))


def exact_matcher(small, cap, seed):
    return exact_max_bmatching(small, cap, weighted=False)[1].edge_ids


# -- matched copies ------------------------------------------------------------------

def test_distribute_star_centre_gets_two_copies():
    g = Graph(3, [(0, 1), (0, 2)])
    m = BMatching.build(g, [2, 1, 1], [0, 1])
    asg = distribute_matched_edges(g, [2, 1, 1], m)
    assert {asg.copy_of[(0, 0)], asg.copy_of[(1, 0)]} == {1, 2}


def test_distribute_empty_matching():
    g, b = generators.fixture("F3")
    asg = distribute_matched_edges(g, b, BMatching.empty(g))
    assert asg.copy_of == {} and asg.edge_at == {}


def test_distribute_rejects_overfull_vertex():
    g = Graph(3, [(0, 1), (0, 2)])
    m = BMatching(frozenset({0, 1}), (2, 1, 1))
    with pytest.raises(GraphError, match="invalid matching"):
        distribute_matched_edges(g, [1, 1, 1], m)


def test_distribute_matches_counting_oracle():
    g = generators.gnp(1000, 0.01, seed=3)
    b = [int(x) for x in np.random.default_rng(3).integers(1, 4, size=g.n)]
    taken, deg = [], [0] * g.n
    for e in np.random.default_rng(4).permutation(g.m):
        a, c = g.endpoints(int(e))
        if deg[a] < b[a] and deg[c] < b[c]:
            deg[a] += 1
            deg[c] += 1
            taken.append(int(e))
    m = BMatching.build(g, b, taken)
    cl = MachineCluster.for_input(g.n, g.m, 0)
    asg = distribute_matched_edges(g, b, m, cl)
    counter = {}
    for e in sorted(m.edge_ids):
        for v in g.endpoints(e):
            counter[v] = counter.get(v, 0) + 1
            assert asg.copy_of[(e, v)] == counter[v] <= b[v]
    assert len(asg.edge_at) == 2 * len(m)
    assert cl.log.rounds_executed == 3


# -- layering -----------------------------------------------------------------------------

def test_layering_with_no_matched_edges():
    g, b = generators.fixture("F3")
    m = BMatching.empty(g)
    lay = build_layered_unweighted(g, b, m, distribute_matched_edges(g, b, m), 0, derive_rng(1))
    assert lay.arcs == {} and set(lay.label.values()) == {0}
    assert set(lay.free_side.values()) <= {0, 1}
    assert set(lay.orient) == set(range(g.m))


def test_layering_reproducible():
    g, b = generators.fixture("F3")
    m = BMatching.build(g, b, [1])
    asg = distribute_matched_edges(g, b, m)
    a = build_layered_unweighted(g, b, m, asg, 1, derive_rng(5))
    c = build_layered_unweighted(g, b, m, asg, 1, derive_rng(5))
    assert (a.label, a.orient, a.free_side) == (c.label, c.orient, c.free_side)


def f3_layering(flip, side_a, side_d, lab_ab, bit_ab, lab_cd, bit_cd):
    g, b = generators.fixture("F3")
    m = BMatching.build(g, b, [1])
    rand = {0: (lab_ab, bit_ab), 2: (lab_cd, bit_cd)}
    lay = build_layered_unweighted(
        g, b, m, distribute_matched_edges(g, b, m), 1, ScriptedRng([1], [flip]),
        edge_randomness=rand.__getitem__,
        free_sides={CopyVertex(0, 1): side_a, CopyVertex(3, 1): side_d})
    return g, b, m, lay


def test_f3_survival_probability_exact_and_sampled():
    # exhaustive: 2 arc directions x 2 x 2 free sides x (2 labels x 2 bits) per unmatched edge
    space = list(itertools.product([0, 1], [0, 1], [0, 1], [0, 1], [0, 1], [0, 1], [0, 1]))
    hits = sum(has_full_path(f3_layering(fl, 2 * sa, 2 * sd, la, ba, lc, bc)[3])
               for fl, sa, sd, la, ba, lc, bc in space)
    exact = Fraction(hits, len(space))
    assert exact == Fraction(1, 64)  # one favourable outcome per direction of the path
    g, b = generators.fixture("F3")
    m = BMatching.build(g, b, [1])
    asg = distribute_matched_edges(g, b, m)
    trials = 20_000
    rng = derive_rng(77)
    got = sum(has_full_path(build_layered_unweighted(g, b, m, asg, 1, rng)) for _ in range(trials))
    assert binomial_ok(got, trials, float(exact))


def test_unmatched_edges_only_fill_their_slot():
    g = generators.gnp(30, 0.2, seed=2)
    b = [2] * g.n
    m = unweighted_one_plus_eps(g, b, 1.0, seed=2, config=UnweightedConfig(phase_budget=2))
    lay = build_layered_unweighted(g, b, m, distribute_matched_edges(g, b, m), 3, derive_rng(2))
    for e in lay.label:
        assert e not in m and 0 <= lay.label[e] <= 3
        assert set(lay.orient[e]) == set(g.endpoints(e))
    for e, arc in lay.arcs.items():
        assert e in m and 1 <= arc.layer <= 3
        assert {arc.tail.base, arc.head.base} == set(g.endpoints(e)) and arc.tail != arc.head


# -- extending and growing --------------------------------------------------------------

def test_extend_with_no_edges_returns_none():
    g = Graph(2, [])
    m = BMatching.empty(g)
    lay = build_layered_unweighted(g, [1, 1], m, distribute_matched_edges(g, [1, 1], m), 1,
                                   ScriptedRng([], [], [], []), free_sides={CopyVertex(0, 1): 0,
                                                              CopyVertex(1, 1): 2})
    assert extend_layer(PartialPathSet.start(lay), 0, None, 0) is None


def two_into_one():
    # w (budget 2) is matched to p and q; free x and y both point at w
    g = Graph(5, [(0, 1), (0, 2), (0, 3), (0, 4)])
    b = [2, 1, 1, 1, 1]
    m = BMatching.build(g, b, [0, 1])
    rand = {2: (0, 1), 3: (0, 1)}
    lay = build_layered_unweighted(g, b, m, distribute_matched_edges(g, b, m), 1,
                                   ScriptedRng([1, 1], [0, 0]), edge_randomness=rand.__getitem__,
                                   free_sides={CopyVertex(3, 1): 0, CopyVertex(4, 1): 0})
    return g, b, m, lay


def test_extend_respects_multiplicity():
    g, b, m, lay = two_into_one()
    assert lay.multiplicities(1, "tail") == {0: 2}
    state = PartialPathSet.start(lay)
    ext = extend_layer(state, 0, None, 0, matcher=exact_matcher)
    assert sorted(ext) == [0, 1]
    assert {state.paths[p].steps[0][1] for p in ext} == {CopyVertex(0, 1), CopyVertex(0, 2)}


def test_single_extendable_path_extends_at_single_edge_rate():
    g, b, m, lay = f3_layering(0, 0, 2, 0, 0, 1, 0)
    hits = sum(bool(extend_layer(PartialPathSet.start(lay), 0, None, s, repetitions=1))
               for s in range(2000))
    assert binomial_ok(hits, 2000, 0.2)


def test_grow_paths_finds_the_f3_augmentation():
    g, b, m, lay = f3_layering(0, 0, 2, 0, 0, 1, 0)
    paths = grow_paths(lay, None, 0, budget=200, matcher=exact_matcher)
    assert len(paths) == 1
    # with the randomized matcher the path survives as long as backtracking is patient
    assert len(grow_paths(lay, None, 0, budget=400, stuck_limit=100)) == 1
    walk = paths[0].to_walk(g, m)
    assert walk.vertices == (0, 1, 2, 3)
    assert apply_walks(m, [walk], g, b).edge_ids == {0, 2}


def test_grow_paths_empty_when_no_layered_path():
    g, b, m, lay = f3_layering(1, 0, 2, 0, 0, 1, 0)  # arc points the wrong way
    assert not has_full_path(lay)
    assert grow_paths(lay, None, 0, budget=50) == []


@given(st.integers(0, 10**6))
@settings(max_examples=40)
def test_grown_paths_are_copy_disjoint_and_apply_cleanly(seed):
    rng = np.random.default_rng(seed)
    g, b = generators.random_small_instance(seed, n_range=(6, 16), bmax=3)
    m = unweighted_one_plus_eps(g, b, 2.0, seed=seed,
                                config=UnweightedConfig(phase_budget=0, repetitions=1))
    k = int(rng.integers(0, 4))
    lay = build_layered_unweighted(g, b, m, distribute_matched_edges(g, b, m), k,
                                   derive_rng(seed, 1))
    paths = grow_paths(lay, None, seed, budget=64, matcher=exact_matcher)
    copies = [c for p in paths for c in p.copies()]
    assert len(copies) == len(set(copies))
    new = apply_walks(m, [p.to_walk(g, m) for p in paths], g, b)
    assert len(new) == len(m) + len(paths)
    assert not validate_bmatching(g, b, new.edge_ids)


# -- certificate -------------------------------------------------------------------

def test_certificate_on_maximum_matching():
    g, b = generators.fixture("F3")
    m = BMatching.build(g, b, [0, 2])
    for k in (1, 2, 4, 8):
        count, bound = approximation_certificate(g, b, m, k)
        assert count == 0 and bound == 1 + 2 / k


def test_certificate_finds_the_f3_path():
    g, b = generators.fixture("F3")
    m = BMatching.build(g, b, [1])
    # the path a-b-c-d has four vertices, so it counts from k = 2 on
    assert approximation_certificate(g, b, m, 1) == (0, 3.0)
    assert approximation_certificate(g, b, m, 2) == (1, None)


@given(st.integers(0, 10**6))
def test_certificate_never_contradicts_oracle(seed):
    g, b = generators.random_small_instance(seed)
    m = unweighted_one_plus_eps(g, b, 2.0, seed=seed,
                                config=UnweightedConfig(phase_budget=1, repetitions=1))
    opt, _ = exact_max_bmatching(g, b, weighted=False)
    for k in (1, 2, 3, 4, 6):
        _, bound = approximation_certificate(g, b, m, k)
        if bound is not None:
            assert opt <= bound * len(m) + 1e-9


# -- driver ----------------------------------------------------------------------------

def test_large_eps_uses_one_layer():
    assert layers_for(2.0) == 1 and layers_for(5.0) == 1 and layers_for(0.5) == 4
    g, b = generators.random_small_instance(3)
    m = unweighted_one_plus_eps(g, b, 2.0, seed=3)
    assert not validate_bmatching(g, b, m.edge_ids)


def test_f3_reaches_the_maximum():
    g, b = generators.fixture("F3")
    # pilot: 99 of seeds 0..99 reach |M| = 2
    hits = sum(len(unweighted_one_plus_eps(g, b, 0.5, seed=s)) == 2 for s in range(100))
    assert hits >= 99


def test_intermediate_matchings_valid_and_growing():
    g, b = generators.random_small_instance(11, n_range=(12, 16))
    seen = []

    def watch(m):
        assert not validate_bmatching(g, b, m.edge_ids)
        seen.append(len(m))

    res = unweighted_one_plus_eps(g, b, 0.5, seed=11, trace=watch, details=True,
                                  config=UnweightedConfig(repetitions=1))
    assert res.sizes == sorted(res.sizes)
    assert seen == sorted(seen)


def test_unweighted_deterministic_under_seed():
    g, b = generators.random_small_instance(5)
    assert unweighted_one_plus_eps(g, b, 0.5, seed=9) == unweighted_one_plus_eps(g, b, 0.5, seed=9)
