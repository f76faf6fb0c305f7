"""Fractional b-matching LP: doubling process, round compression and rounding.

All LP values live on a fixed decimal grid: an integer ``k`` stands for
``k / ONE`` with ``ONE = 10**12``.  Doubling, sums and the alpha comparisons
are then exact integer operations, so feasibility and tightness are checked
without any floating-point tolerance.  A decimal grid keeps the constants
0.2, 0.4 and 0.8 exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .graph import BMatching, Graph, as_budgets
from .mpc import (TAG_PARTITION, TAG_ROUNDING, TAG_THRESHOLD, MachineCluster,
                  child_seed, derive_rng, partition_vertices, run_machine_rounds)

ONE = 10 ** 12
MAX_BUDGET = 1 << 16  # keeps every vertex sum below 2**56


class NonConvergence(RuntimeError):
    """full_mpc hit its iteration cap."""


class NotTight(ValueError):
    """The dual built from a supposedly tight solution is infeasible."""


def to_grid(values, what: str = "value") -> np.ndarray:
    """Round non-negative rationals down onto the grid."""
    out = np.empty(len(values), dtype=np.int64)
    for i, val in enumerate(values):
        f = Fraction(val)
        if f < 0:
            raise ValueError(f"{what} {i} is negative")
        if f > MAX_BUDGET:
            raise ValueError(f"{what} {i} exceeds the supported maximum {MAX_BUDGET}")
        out[i] = (f.numerator * ONE) // f.denominator
    return out


def from_grid(k: int) -> Fraction:
    return Fraction(int(k), ONE)


@dataclass
class LPInstance:
    """Graph with vertex capacities ``b`` and edge caps ``r``, stored on the grid."""

    graph: Graph
    b: np.ndarray
    r: np.ndarray

    @classmethod
    def build(cls, g: Graph, b, r=None) -> "LPInstance":
        if len(b) != g.n:
            raise ValueError(f"budget vector has {len(b)} entries for {g.n} vertices")
        bg = to_grid(list(b), "budget")
        if r is None:
            rg = np.full(g.m, ONE, dtype=np.int64)
        else:
            if len(r) != g.m:
                raise ValueError("one cap per edge is required")
            rg = to_grid(list(r), "cap")
        return cls(g, bg, rg)

    @classmethod
    def unit_caps(cls, g: Graph, b) -> "LPInstance":
        budgets = as_budgets(b, g.n)
        arr = budgets.array()
        if arr.size and arr.max() > MAX_BUDGET:
            raise ValueError(f"budgets above {MAX_BUDGET} are not supported")
        return cls(g, arr * ONE, np.full(g.m, ONE, dtype=np.int64))


def vertex_sums(g: Graph, x: np.ndarray) -> np.ndarray:
    y = np.zeros(g.n, dtype=np.int64)
    if x.size:
        np.add.at(y, g.u, x)
        np.add.at(y, g.v, x)
    return y


def _scaled_less(a: np.ndarray, alpha: Fraction, b: np.ndarray) -> np.ndarray:
    """Elementwise ``a < alpha * b`` on non-negative integer arrays, exactly."""
    num, den = alpha.numerator, alpha.denominator
    top = max(int(a.max(initial=0)) * den, int(b.max(initial=0)) * num)
    if top < (1 << 62):
        return a * den < b * num
    return np.array([int(x) * den < int(y) * num for x, y in zip(a, b)], dtype=bool)


@dataclass
class TightnessReport:
    alpha: Fraction
    v_loose: np.ndarray  # boolean mask over vertices
    e_loose: np.ndarray  # boolean mask over edges

    @property
    def tight(self) -> bool:
        return not bool(self.e_loose.any())

    def loose_vertices(self) -> set[int]:
        return set(np.flatnonzero(self.v_loose).tolist())

    def loose_edges(self) -> set[int]:
        return set(np.flatnonzero(self.e_loose).tolist())


def loose_sets(inst: LPInstance, x: np.ndarray, alpha) -> TightnessReport:
    """Vertices with incident mass below ``alpha*b`` and edges loose at both ends."""
    alpha = Fraction(alpha)
    g = inst.graph
    y = vertex_sums(g, x)
    v_loose = _scaled_less(y, alpha, inst.b)
    e_loose = _scaled_less(x, alpha, inst.r) & v_loose[g.u] & v_loose[g.v]
    return TightnessReport(alpha, v_loose, e_loose)


@dataclass
class FractionalSolution:
    x: np.ndarray  # grid integers, one per edge
    rounds_run: int = 0
    iterations: int = 0
    branches: list[str] = field(default_factory=list)
    unfiltered: np.ndarray | None = None
    history: list[np.ndarray] | None = None
    active_history: list[np.ndarray] | None = None

    def value(self, e: int) -> Fraction:
        return from_grid(self.x[e])

    def values(self) -> list[Fraction]:
        return [from_grid(k) for k in self.x]

    def total(self) -> Fraction:
        return Fraction(int(self.x.sum(dtype=object)) if self.x.size else 0, ONE)

    def is_feasible(self, inst: LPInstance) -> bool:
        return bool(np.all(self.x >= 0) and np.all(self.x <= inst.r)
                    and np.all(vertex_sums(inst.graph, self.x) <= inst.b))


class ThresholdSchedule:
    """Counter-based thresholds ``U(0.2 b_v, 0.4 b_v)`` for each round.

    Round ``t`` always uses the stream ``(seed, t)``, so two processes that
    hold the same schedule see the same thresholds for the same budgets.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    def round(self, t: int, b: np.ndarray) -> np.ndarray:
        hi = (2 * b) // 5
        lo = np.minimum((b + 4) // 5, hi)
        rng = derive_rng(self.seed, t, TAG_THRESHOLD)
        return rng.integers(lo, hi + 1, dtype=np.int64)


def initial_values(inst: LPInstance) -> np.ndarray:
    """``x_{e,0} = min(r_e, q_u, q_v)`` with ``q_v = 0.8 b_v / max(deg v, avg deg)``."""
    g = inst.graph
    if g.m == 0:
        return np.zeros(0, dtype=np.int64)
    n, m = g.n, g.m
    deg = g.degree.astype(np.int64)
    denom = 5 * np.maximum(deg * n, 2 * m)
    q = np.array([(4 * int(bv) * n) // int(d) for bv, d in zip(inst.b, denom)], dtype=np.int64)
    return np.minimum(inst.r, np.minimum(q[g.u], q[g.v]))


def _thresholds(thresholds, t: int, b: np.ndarray) -> np.ndarray:
    if isinstance(thresholds, ThresholdSchedule):
        return thresholds.round(t, b)
    return np.asarray(thresholds[t - 1], dtype=np.int64)


def sequential(inst: LPInstance, T: int, thresholds=None, seed: int = 0, *,
               trace: bool = False, early_exit: bool = True) -> FractionalSolution:
    """Idealised doubling process for ``T`` rounds.

    ``thresholds`` is a :class:`ThresholdSchedule` or a ``T x n`` array of grid
    integers.  With ``early_exit`` the loop stops once no edge is active: the
    active vertex set only shrinks, so no edge can become active again.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    g = inst.graph
    sched = thresholds if thresholds is not None else ThresholdSchedule(seed)
    x = initial_values(inst)
    active = np.ones(g.n, dtype=bool)
    hist = [x.copy()] if trace else None
    act_hist = [active.copy()] if trace else None
    rounds = 0
    for t in range(1, T + 1):
        y = vertex_sums(g, x)
        active &= y <= _thresholds(sched, t, inst.b)
        e_act = active[g.u] & active[g.v] & (2 * x <= inst.r)
        rounds = t
        if not e_act.any() and early_exit and not trace:
            break
        x = np.where(e_act, 2 * x, x)
        if trace:
            hist.append(x.copy())
            act_hist.append(active.copy())
    return FractionalSolution(x, rounds_run=rounds, history=hist, active_history=act_hist)


def _groups_for(g: Graph) -> int:
    """``ceil(sqrt(avg degree))`` computed exactly: least N with N*N*n >= 2m."""
    if g.n == 0 or g.m == 0:
        return 1
    N = math.isqrt(max(0, (2 * g.m) // g.n))
    while N * N * g.n < 2 * g.m:
        N += 1
    while N > 1 and (N - 1) * (N - 1) * g.n >= 2 * g.m:
        N -= 1
    return max(N, 1)


def compressed_rounds(N: int) -> int:
    """``floor(log2(N) / 1000)``; zero for every N below 2**1000."""
    return (N.bit_length() - 1) // 1000 if N >= 1 else 0


class _LocalSimulation:
    """Machine program: each group runs T local estimate rounds on G[V_i]."""

    def __init__(self, inst, part, x0, thr, N, T, machine_count):
        self.inst, self.part, self.x0, self.thr = inst, part, x0, thr
        self.N, self.T, self.mc = N, T, machine_count

    def setup(self, machine, rng):
        return {"groups": [gi for gi in range(self.part.groups) if gi % self.mc == machine],
                "received": []}

    def step(self, machine, round_no, state, inbox, rng):
        if round_no > 1:
            state["received"].extend(inbox)
            return state, {}, True
        g = self.inst.graph
        out = []
        for gi in state["groups"]:
            verts = self.part.group_vertices[gi]
            edges = self.part.local_edges[gi]
            pos = np.full(g.n, -1, dtype=np.int64) if verts.size else None
            last = np.zeros(verts.size, dtype=np.int64)
            if verts.size:
                pos[verts] = np.arange(verts.size)
                a, c = pos[g.u[edges]], pos[g.v[edges]]
                xl = self.x0[edges].copy()
                rl = self.inst.r[edges]
                act = np.ones(verts.size, dtype=bool)
                for t in range(1, self.T + 1):
                    ys = np.zeros(verts.size, dtype=np.int64)
                    np.add.at(ys, a, xl)
                    np.add.at(ys, c, xl)
                    act &= ys <= self.thr[t - 1][verts] // self.N
                    last[act] = t
                    e_act = act[a] & act[c] & (2 * xl <= rl)
                    xl = np.where(e_act, 2 * xl, xl)
            out.append(np.stack([verts.astype(np.int64), last]) if verts.size
                       else np.zeros((2, 0), dtype=np.int64))
        return state, {machine: out}, False


def one_round_mpc(inst: LPInstance, cluster: MachineCluster, thresholds=None, *,
                  seed: int | None = None, rounds: int | None = None,
                  partition_key: tuple = (0,)) -> FractionalSolution:
    """Round-compressed doubling process with sampled vertex-sum estimates.

    ``rounds`` overrides ``T`` (diagnostics only; the faithful value is
    ``floor(log2 N / 1000)``).  ``unfiltered`` on the result holds the values
    before the final feasibility filter.
    """
    g = inst.graph
    N = _groups_for(g)
    T = compressed_rounds(N) if rounds is None else int(rounds)
    sched = thresholds if thresholds is not None else ThresholdSchedule(
        cluster.seed if seed is None else seed)
    x0 = initial_values(inst)
    part = partition_vertices(g, N, cluster, cluster.rng(*partition_key, TAG_PARTITION))
    cluster.charge_rounds(1, "partition")
    thr = [_thresholds(sched, t, inst.b) for t in range(1, T + 1)]
    states = run_machine_rounds(cluster, _LocalSimulation(inst, part, x0, thr, N, T,
                                                          cluster.machine_count))
    # each group reports the last round in which each of its vertices was active
    last = np.zeros(g.n, dtype=np.int64)
    for state in states:
        for pair in state["received"]:
            last[pair[0]] = pair[1]
    cluster.charge_rounds(cluster.search_round_cost, "edge-update")
    j = np.minimum(last[g.u], last[g.v])
    x = x0.copy()
    for t in range(1, T + 1):
        grow = (j >= t) & (2 * x <= inst.r)
        x = np.where(grow, 2 * x, x)
    unfiltered = x
    y = vertex_sums(g, x)
    over = y > inst.b
    cluster.charge_rounds(cluster.sort_round_cost + cluster.prefix_round_cost
                          + cluster.search_round_cost, "filter")
    x = np.where(over[g.u] | over[g.v], 0, x)
    return FractionalSolution(x, rounds_run=T, unfiltered=unfiltered)


def _iteration_cap(avg_degree: float) -> int:
    lg = math.log2(avg_degree) if avg_degree > 1 else 0.0
    llg = math.log2(lg) if lg > 1 else 0.0
    return 10 * math.ceil(llg) + 20


def full_mpc(inst: LPInstance, cluster: MachineCluster, *, seed: int | None = None,
             max_iterations: int | None = None, sequential_rounds: int | None = None,
             compressed_override: int | None = None) -> FractionalSolution:
    """Repeat the degree-reduction step on the loose edges until x is 0.05-tight.

    Each iteration works on remaining budgets and caps.  The sequential branch
    runs on a single machine, so it is taken only while the active subgraph
    fits in one machine's memory (and below ``n log^10 n`` edges); larger
    active sets go through the round-compressed step.
    """
    g = inst.graph
    n, m = g.n, g.m
    seed = cluster.seed if seed is None else seed
    cap = _iteration_cap(float(g.avg_degree)) if max_iterations is None else max_iterations
    lg = math.log2(max(n, 2))
    big = min(n * lg ** 10, cluster.local_memory_words - n)
    seq_T = math.ceil(100 * lg) if sequential_rounds is None else sequential_rounds
    alpha = Fraction(1, 20)
    x = np.zeros(m, dtype=np.int64)
    active = np.ones(m, dtype=bool)
    branches: list[str] = []
    it = 0
    while active.any():
        if it >= cap:
            raise NonConvergence(f"not 0.05-tight after {cap} iterations "
                                 f"({int(active.sum())} loose edges left)")
        it += 1
        cluster.charge_spread(n + m)
        ids = np.flatnonzero(active)
        sub = Graph.from_arrays(n, g.u[ids], g.v[ids])
        b_rem = inst.b - vertex_sums(g, x)
        cluster.charge_rounds(cluster.sort_round_cost + cluster.prefix_round_cost, "remaining")
        sub_inst = LPInstance(sub, b_rem, inst.r[ids] - x[ids])
        sched = ThresholdSchedule(child_seed(seed, it, TAG_THRESHOLD))
        if ids.size >= big:
            branches.append("compressed")
            xs = one_round_mpc(sub_inst, cluster, sched, rounds=compressed_override,
                               partition_key=(it,)).x
        else:
            branches.append("sequential")
            cluster.charge_resident(0, n + int(ids.size))
            cluster.charge_rounds(2, "gather")
            xs = sequential(sub_inst, seq_T, sched).x
        x[ids] += xs
        active &= loose_sets(inst, x, alpha).e_loose
        cluster.charge_rounds(cluster.sort_round_cost + cluster.prefix_round_cost
                              + cluster.search_round_cost, "loose")
    cluster.log.iterations += it
    return FractionalSolution(x, iterations=it, branches=branches)


@dataclass
class DualCertificate:
    y: np.ndarray
    z: np.ndarray
    value: Fraction  # sum b_v y_v + sum r_e z_e, an upper bound on the LP optimum
    primal: Fraction


def dual_certificate(inst: LPInstance, x: np.ndarray, alpha) -> DualCertificate:
    """0/1 dual built from a tight solution; checks ``sum x >= (alpha/3) * dual``."""
    alpha = Fraction(alpha)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    g = inst.graph
    ys = vertex_sums(g, x)
    y = ~_scaled_less(ys, alpha, inst.b)
    z = ~_scaled_less(x, alpha, inst.r)
    covered = y[g.u] | y[g.v] | z
    if not covered.all():
        bad = int(np.flatnonzero(~covered)[0])
        raise NotTight(f"edge {bad} is uncovered: x is not actually {alpha}-tight")
    dual = Fraction(int(inst.b[y].sum(dtype=object) or 0) + int(inst.r[z].sum(dtype=object) or 0), ONE)
    primal = Fraction(int(x.sum(dtype=object)) if x.size else 0, ONE)
    if primal < alpha / 3 * dual:
        raise NotTight(f"primal {primal} below (alpha/3) * dual = {alpha / 3 * dual}")
    return DualCertificate(y, z, dual, primal)


def round_to_integral(inst: LPInstance, x: np.ndarray, rng: np.random.Generator) -> BMatching:
    """Sample each edge w.p. x_e/4 and keep it if neither end is oversampled."""
    g = inst.graph
    if np.any(inst.r != ONE):
        raise ValueError("rounding needs unit edge caps")
    b_int = inst.b // ONE
    if np.any(b_int * ONE != inst.b):
        raise ValueError("rounding needs integer budgets")
    if g.m == 0:
        return BMatching.empty(g)
    sampled = rng.integers(0, 4 * ONE, size=g.m, dtype=np.int64) < x
    deg = np.bincount(g.u[sampled], minlength=g.n) + np.bincount(g.v[sampled], minlength=g.n)
    ok = deg <= b_int
    keep = sampled & ok[g.u] & ok[g.v]
    ids = np.flatnonzero(keep)
    kd = np.bincount(g.u[ids], minlength=g.n) + np.bincount(g.v[ids], minlength=g.n)
    return BMatching(frozenset(ids.tolist()), tuple(int(d) for d in kd))


def default_repetitions(n: int) -> int:
    return max(1, math.ceil(math.log2(max(n, 2))))


def constant_approx_bmatching(g: Graph, b, cluster: MachineCluster | None = None, *,
                              seed: int = 0, repetitions: int | None = None) -> BMatching:
    """Best of R independent (full_mpc + rounding) runs."""
    budgets = as_budgets(b, g.n)
    if g.m == 0:
        return BMatching.empty(g)
    inst = LPInstance.unit_caps(g, budgets)
    if cluster is None:
        cluster = MachineCluster.for_input(g.n, g.m, seed)
    reps = default_repetitions(g.n) if repetitions is None else repetitions
    best = BMatching.empty(g)
    for i in range(reps):
        sub = cluster.fork(child_seed(seed, i, 0))
        try:
            sol = full_mpc(inst, sub)
        except NonConvergence:
            cluster.absorb(sub)
            continue
        cand = round_to_integral(inst, sol.x, derive_rng(seed, i, TAG_ROUNDING))
        cluster.absorb(sub)
        cluster.log.iterations = max(cluster.log.iterations, sub.log.iterations)
        if len(cand) > len(best):
            best = cand
    return best
