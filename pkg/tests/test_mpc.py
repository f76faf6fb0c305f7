import math

import numpy as np
import pytest

from bmatch import generators
from bmatch.mpc import (ABSENT, MachineCluster, ModelViolation, derive_rng, partition_vertices,
                        run_machine_rounds)


def cluster(machines=4, words=10_000, seed=0, **kw):
    return MachineCluster(machines, words, seed, **kw)


# -- partitioning ---------------------------------------------------------------

def test_single_group_keeps_everything_local():
    g = generators.gnp(50, 0.2, seed=1)
    part = partition_vertices(g, 1, cluster(1), derive_rng(0))
    assert set(part.local_edges[0].tolist()) == set(range(g.m))


def test_partition_is_reproducible():
    g, _ = generators.fixture("F2")
    a = partition_vertices(g, 3, cluster(3), derive_rng(7, 1))
    b = partition_vertices(g, 3, cluster(3), derive_rng(7, 1))
    assert a.assignment.tolist() == b.assignment.tolist()


def test_local_edges_are_exactly_the_induced_ones():
    g = generators.gnp(200, 0.05, seed=3)
    part = partition_vertices(g, 5, cluster(5), derive_rng(3))
    for i, ids in enumerate(part.local_edges):
        want = [e for e in range(g.m)
                if part.assignment[g.u[e]] == i and part.assignment[g.v[e]] == i]
        assert ids.tolist() == want


def test_partition_load_stays_near_linear():
    # pilot: the largest induced subgraph holds about m / N^2 ~ 10^3 edges,
    # far below n log^2 n ~ 2.4e5, so c = 1 is pinned
    n, c = 2000, 1.0
    worst = 0
    for seed in range(50):
        g = generators.gnp(n, 0.05, seed)
        N = math.ceil(math.sqrt(float(g.avg_degree)))
        cl = MachineCluster.for_input(g.n, g.m, seed)
        part = partition_vertices(g, N, cl, derive_rng(seed))
        worst = max(worst, max(ids.size for ids in part.local_edges))
    assert worst <= c * n * math.log2(n) ** 2


# -- primitives ----------------------------------------------------------------

def test_sort_examples():
    cl = cluster()
    assert cl.distributed_sort([]) == []
    assert cl.distributed_sort([1, 2, 3]) == [1, 2, 3]
    assert cl.log.rounds_executed == 2 * cl.sort_round_cost


def test_sort_matches_reference_and_is_stable():
    rng = np.random.default_rng(5)
    recs = [(int(k), i) for i, k in enumerate(rng.integers(0, 1000, size=10**5))]
    cl = cluster(words=10**6)
    out = cl.distributed_sort(recs, key=lambda r: r[0])
    assert out == sorted(recs, key=lambda r: r[0])


def test_sort_rejects_oversized_record():
    with pytest.raises(ModelViolation):
        cluster(words=4).distributed_sort([1], record_words=5)


def test_prefix_sum_examples():
    cl = cluster()
    assert cl.prefix_sum([1, 1, 1]).tolist() == [0, 1, 2]
    assert cl.prefix_sum([]).tolist() == []
    vals = np.random.default_rng(1).integers(-50, 50, size=10**4)
    out = cl.prefix_sum(vals)
    acc = 0
    for i, x in enumerate(vals):
        assert out[i] == acc
        acc += int(x)


def test_search_tree_examples():
    cl = cluster()
    assert cl.search_tree_broadcast([("v", "S")], ["v", "v", "v"]) == ["S"] * 3
    assert cl.search_tree_broadcast([], [1, 2]) == [ABSENT, ABSENT]


def test_search_tree_matches_hash_join():
    rng = np.random.default_rng(2)
    keys = rng.choice(10**5, size=1000, replace=False).tolist()
    specials = [(k, k * 3) for k in keys]
    queries = rng.integers(0, 10**5, size=10**4).tolist()
    table = dict(specials)
    out = cluster(words=10**6).search_tree_broadcast(specials, queries)
    assert out == [table.get(q, ABSENT) for q in queries]


def test_round_costs_are_configurable():
    cl = cluster(sort_round_cost=3, prefix_round_cost=2, search_round_cost=5)
    cl.distributed_sort([2, 1])
    cl.prefix_sum([1])
    cl.search_tree_broadcast([], [])
    assert cl.log.rounds_executed == 10


# -- machine rounds ----------------------------------------------------------------

class NoOp:
    def setup(self, machine, rng):
        return None

    def step(self, machine, round_no, state, inbox, rng):
        return state, {}, True


class Echo:
    """Every machine sends ``size`` words to the next, once; then records what it got."""

    def __init__(self, size):
        self.size = size

    def setup(self, machine, rng):
        return {"got": []}

    def step(self, machine, round_no, state, inbox, rng):
        state["got"].extend(inbox)
        if round_no == 1:
            payload = rng.integers(0, 1000, size=self.size)
            return state, {(machine + 1) % 4: [payload]}, False
        return state, {}, True


def test_noop_program_takes_no_rounds():
    cl = cluster()
    run_machine_rounds(cl, NoOp())
    assert cl.log.rounds_executed == 0


def test_oversized_message_is_a_violation():
    with pytest.raises(ModelViolation):
        run_machine_rounds(cluster(words=16), Echo(17))


def test_echo_identical_across_host_threads():
    outs = []
    for threads in (1, 8):
        cl = cluster(seed=11, threads=threads)
        states = run_machine_rounds(cl, Echo(32))
        outs.append(([s["got"][0].tolist() for s in states], cl.log.to_dict()))
    assert outs[0] == outs[1]


def test_global_memory_covers_input():
    for n, m in [(10, 20), (1000, 50_000), (10**4, 10**6)]:
        cl = MachineCluster.for_input(n, m)
        assert cl.global_memory >= n + m


def test_compressed_step_identical_across_threads():
    from bmatch.fractional import LPInstance, one_round_mpc
    g = generators.gnp_avg_degree(600, 40, seed=4)
    inst = LPInstance.unit_caps(g, [1] * g.n)
    res = []
    for threads in (1, 8):
        cl = MachineCluster.for_input(g.n, g.m, 9, machines=6, threads=threads)
        sol = one_round_mpc(inst, cl, rounds=4)
        res.append((sol.x.tolist(), cl.log.to_dict()))
    assert res[0] == res[1]


def test_peaks_never_exceed_local_memory():
    g = generators.gnp_avg_degree(800, 30, seed=2)
    from bmatch.fractional import LPInstance, full_mpc
    cl = MachineCluster.for_input(g.n, g.m, 2)
    full_mpc(LPInstance.unit_caps(g, [1] * g.n), cl)
    assert cl.log.max_resident() <= cl.local_memory_words
    assert cl.log.max_traffic() <= cl.local_memory_words
