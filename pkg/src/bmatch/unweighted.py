"""(1+eps)-approximate unweighted b-matching via layered graphs.

Every vertex ``v`` is viewed as ``b_v`` copies.  Matched edges are pinned to
one copy at each end; unmatched edges are never pinned, they only carry a
random layer label and a random orientation.  Augmenting paths are grown layer
by layer with a constant-factor b'-matching between compressed layers, and
backtracked when too few of them make progress.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fractional import constant_approx_bmatching, default_repetitions
from .graph import (AlternatingWalk, BMatching, CopyVertex, Graph, GraphError,
                    apply_walks, as_budgets, validate_bmatching)
from .mpc import TAG_LAYER, MachineCluster, child_seed, derive_rng


# -- matched edges over copies ------------------------------------------------

@dataclass
class MatchedCopyAssignment:
    """Copy index (1-based) of each end of each matched edge."""

    copy_of: dict[tuple[int, int], int]  # (edge, vertex) -> copy index
    edge_at: dict[CopyVertex, int]  # copy -> matched edge

    def copies(self, g: Graph, e: int) -> tuple[CopyVertex, CopyVertex]:
        a, c = g.endpoints(e)
        return CopyVertex(a, self.copy_of[(e, a)]), CopyVertex(c, self.copy_of[(e, c)])


def distribute_matched_edges(g: Graph, b, m: BMatching,
                             cluster: MachineCluster | None = None) -> MatchedCopyAssignment:
    """Give each (vertex, matched edge) pair its own copy of the vertex.

    Sort the pairs by vertex, find each vertex's first position with a prefix
    sum, and let every pair look that offset up in a search tree; the copy
    index is the pair's rank within its vertex.
    """
    budgets = as_budgets(b, g.n)
    pairs = []
    for e in sorted(m.edge_ids):
        a, c = g.endpoints(e)
        pairs.append((a, e))
        pairs.append((c, e))
    if cluster is not None:
        pairs = cluster.distributed_sort(pairs, record_words=2)
        starts = cluster.prefix_sum([1] * len(pairs))
    else:
        pairs.sort()
        starts = np.arange(len(pairs))
    first: dict[int, int] = {}
    for pos, (v, _) in enumerate(pairs):
        first.setdefault(v, int(starts[pos]))
    if cluster is not None:
        offsets = cluster.search_tree_broadcast(first.items(), [v for v, _ in pairs])
    else:
        offsets = [first[v] for v, _ in pairs]
    copy_of, edge_at = {}, {}
    for pos, (v, e) in enumerate(pairs):
        idx = int(starts[pos]) - offsets[pos] + 1
        if idx > budgets[v]:
            raise GraphError(f"invalid matching: vertex {v} has more than {budgets[v]} matched edges")
        copy_of[(e, v)] = idx
        edge_at[CopyVertex(v, idx)] = e
    return MatchedCopyAssignment(copy_of, edge_at)


# -- layered graph --------------------------------------------------------------

@dataclass
class Arc:
    layer: int
    edge: int
    tail: CopyVertex
    head: CopyVertex


@dataclass
class UnweightedLayeredGraph:
    """``layers`` matched layers between the free layers L_0 and L_{layers+1}.

    A path enters a matched arc at its tail and leaves at its head.  An
    unmatched edge with label ``i`` and orientation ``(x, y)`` joins a head
    of ``x`` in layer ``i`` (a free copy in L_0 when ``i == 0``) to a tail of
    ``y`` in layer ``i + 1`` (a free copy in the last layer when ``i == layers``).
    """

    graph: Graph
    layers: int
    arcs: dict[int, Arc]  # matched edge -> arc
    free_side: dict[CopyVertex, int]  # free copy -> 0 (first layer) or layers + 1
    label: dict[int, int]  # unmatched edge -> label in 0..layers
    orient: dict[int, tuple[int, int]]  # unmatched edge -> (from, to)
    heads: list[dict[int, list[CopyVertex]]]  # heads[i][v]; heads[0] = free copies in L_0
    tails: list[dict[int, list[CopyVertex]]]  # tails[i][v] for i in 1..layers+1
    arc_of_tail: dict[tuple[int, CopyVertex], Arc]

    def slots(self, i: int) -> list[int]:
        """Unmatched edges that may be used between layer ``i`` and ``i + 1``."""
        return sorted(e for e, lab in self.label.items() if lab == i)

    def multiplicities(self, i: int, side: str) -> dict[int, int]:
        src = self.heads[i] if side == "head" else self.tails[i]
        return {v: len(cs) for v, cs in src.items() if cs}


EdgeRandomness = Callable[[int], tuple[int, int]]  # edge -> (label, orientation bit)


def build_layered_unweighted(g: Graph, b, m: BMatching, assignment: MatchedCopyAssignment,
                             layers: int, rng: np.random.Generator,
                             edge_randomness: EdgeRandomness | None = None,
                             free_sides: dict[CopyVertex, int] | None = None) -> UnweightedLayeredGraph:
    """Random layering: matched arcs to layers, free copies to an end, labels to the rest."""
    if layers < 0:
        raise ValueError("layer count must be non-negative")
    budgets = as_budgets(b, g.n)
    arcs: dict[int, Arc] = {}
    heads: list[dict[int, list[CopyVertex]]] = [dict() for _ in range(layers + 1)]
    tails: list[dict[int, list[CopyVertex]]] = [dict() for _ in range(layers + 2)]
    arc_of_tail = {}
    matched = sorted(m.edge_ids)
    if layers:
        lay = rng.integers(1, layers + 1, size=len(matched))
        flip = rng.integers(0, 2, size=len(matched))
        for e, li, fl in zip(matched, lay, flip):
            p, q = assignment.copies(g, e)
            tail, head = (q, p) if fl else (p, q)
            arc = Arc(int(li), e, tail, head)
            arcs[e] = arc
            tails[arc.layer].setdefault(tail.base, []).append(tail)
            heads[arc.layer].setdefault(head.base, []).append(head)
            arc_of_tail[(arc.layer, tail)] = arc
    free_side = {}
    free = [CopyVertex(v, i) for v in range(g.n) for i in range(m.degree[v] + 1, budgets[v] + 1)]
    if free_sides is None:
        sides = rng.integers(0, 2, size=len(free))
    else:
        sides = [free_sides[c] for c in free]
    for c, sd in zip(free, sides):
        where = layers + 1 if sd else 0
        free_side[c] = where
        if where == 0:
            heads[0].setdefault(c.base, []).append(c)
        else:
            tails[layers + 1].setdefault(c.base, []).append(c)
    label, orient = {}, {}
    unmatched = [e for e in range(g.m) if e not in m]
    if edge_randomness is None:
        labs = rng.integers(0, layers + 1, size=len(unmatched))
        bits = rng.integers(0, 2, size=len(unmatched))
        pairs = zip(labs, bits)
    else:
        pairs = (edge_randomness(e) for e in unmatched)
    for e, (lab, bit) in zip(unmatched, pairs):
        a, c = g.endpoints(e)
        label[e] = int(lab)
        orient[e] = (c, a) if bit else (a, c)
    for lst in heads + tails:
        for cs in lst.values():
            cs.sort()
    return UnweightedLayeredGraph(g, layers, arcs, free_side, label, orient, heads, tails,
                                  arc_of_tail)


# -- growing paths ---------------------------------------------------------------

@dataclass
class LayeredPath:
    start: CopyVertex
    steps: list[tuple[int, CopyVertex, int | None, CopyVertex | None]] = field(default_factory=list)
    # each step: (unmatched edge, tail copy entered, matched edge or None, head copy or None)

    @property
    def layer(self) -> int:
        return len(self.steps)

    def end(self) -> CopyVertex:
        if not self.steps:
            return self.start
        return self.steps[-1][3] if self.steps[-1][3] is not None else self.steps[-1][1]

    def copies(self) -> list[CopyVertex]:
        out = [self.start]
        for _, t, _, h in self.steps:
            out.append(t)
            if h is not None:
                out.append(h)
        return out

    def to_walk(self, g: Graph, m: BMatching) -> AlternatingWalk:
        verts = [self.start.base]
        edges = []
        for ue, t, me, h in self.steps:
            edges.append(ue)
            verts.append(t.base)
            if me is not None:
                edges.append(me)
                verts.append(h.base)
        return AlternatingWalk(tuple(verts), tuple(edges), tuple(e in m for e in edges),
                               start_copy=self.start, end_copy=self.end())


@dataclass
class PartialPathSet:
    """Copy-disjoint path prefixes, bucketed by the layer they end at."""

    layered: UnweightedLayeredGraph
    paths: dict[int, LayeredPath] = field(default_factory=dict)
    pending: list[list[int]] = field(default_factory=list)
    complete: list[int] = field(default_factory=list)
    used: set = field(default_factory=set)  # copies held by live or complete paths
    dead: set = field(default_factory=set)  # (layer, copy) pairs ruled out by backtracking
    used_edges: set = field(default_factory=set)

    @classmethod
    def start(cls, layered: UnweightedLayeredGraph) -> "PartialPathSet":
        state = cls(layered, pending=[[] for _ in range(layered.layers + 1)])
        pid = 0
        for v in sorted(layered.heads[0]):
            for c in layered.heads[0][v]:
                state.paths[pid] = LayeredPath(c)
                state.pending[0].append(pid)
                state.used.add(c)
                pid += 1
        return state

    def available_tails(self, i: int) -> dict[int, list[CopyVertex]]:
        out = {}
        for v, cs in self.layered.tails[i].items():
            free = [c for c in cs if c not in self.used and (i, c) not in self.dead]
            if free:
                out[v] = free
        return out


def extend_layer(state: PartialPathSet, j: int, cluster: MachineCluster | None, seed: int,
                 repetitions: int | None = None, matcher=None) -> list[int] | None:
    """Extend paths ending at layer ``j`` by one unmatched edge and one arc.

    A b'-matching between the compressed endpoints (multiplicity = number of
    paths ending at a copy of the vertex) and the compressed free tails of
    layer ``j + 1`` decides which paths move.  Returns the ids extended, or
    ``None`` when no usable edge leaves the front at all.
    """
    lg = state.layered
    front = sorted(state.pending[j])
    at: dict[int, list[int]] = {}
    for pid in front:
        at.setdefault(state.paths[pid].end().base, []).append(pid)
    tails = state.available_tails(j + 1)
    cand = []
    for e in lg.slots(j):
        if e in state.used_edges:
            continue
        x, y = lg.orient[e]
        if x in at and y in tails:
            cand.append((x, y, e))
    if not cand:
        return None
    left = sorted({x for x, _, _ in cand})
    right = sorted({y for _, y, _ in cand})
    li = {x: i for i, x in enumerate(left)}
    ri = {y: len(left) + i for i, y in enumerate(right)}
    small = Graph(len(left) + len(right), [(li[x], ri[y]) for x, y, _ in cand])
    cap = [len(at[x]) for x in left] + [len(tails[y]) for y in right]
    if matcher is None:
        chosen = constant_approx_bmatching(small, cap, cluster, seed=seed, repetitions=repetitions)
        picked = sorted(chosen.edge_ids)
    else:
        picked = sorted(matcher(small, cap, seed))
    by_pair = {(li[x], ri[y]): e for x, y, e in cand}
    extended = []
    for se in picked:
        a, c = small.endpoints(se)
        e = by_pair[(a, c)]
        x, y = lg.orient[e]
        pid = at[x].pop(0)
        tail = tails[y].pop(0)
        if j + 1 <= lg.layers:
            arc = lg.arc_of_tail[(j + 1, tail)]
            step = (e, tail, arc.edge, arc.head)
            state.used.add(arc.head)
        else:
            step = (e, tail, None, None)
        state.paths[pid].steps.append(step)
        state.used.add(tail)
        state.used_edges.add(e)
        extended.append(pid)
    return extended


def invocation_budget(delta: float, k: int, c: float = 1.0, cap: int = 10_000) -> int:
    """``c * delta^(-2^k)``, capped; the exponent is evaluated in log space."""
    log_val = math.log(max(c, 1e-12)) - (2 ** k) * math.log(delta)
    return int(min(cap, math.ceil(math.exp(min(log_val, 50)))))


def has_full_path(layered: UnweightedLayeredGraph) -> bool:
    """Whether some path crosses every layer, ignoring disjointness."""
    reach = {v for v, cs in layered.heads[0].items() if cs}
    for i in range(layered.layers + 1):
        hit = {y for e in layered.slots(i) for x, y in [layered.orient[e]]
               if x in reach and layered.tails[i + 1].get(y)}
        if i == layered.layers:
            return bool(hit)
        reach = {layered.arc_of_tail[(i + 1, c)].head.base
                 for y in hit for c in layered.tails[i + 1][y]}
        if not reach:
            return False
    return False


def grow_paths(layered: UnweightedLayeredGraph, cluster: MachineCluster | None, seed: int,
               delta: float = 0.5, budget: int | None = None, repetitions: int | None = None,
               matcher=None, stuck_limit: int = 1) -> list[LayeredPath]:
    """Copy-disjoint augmenting paths from the first to the last layer.

    Always works on the deepest non-empty layer.  An invocation makes progress
    if at least ``max(1, delta * |front|)`` paths extend.  After
    ``stuck_limit`` invocations in a row without progress on a layer (or at
    once, if no edge leaves the front), the paths that did not move are cut
    back by one layer and the arc they ended on is discarded; at layer 0 the
    path start itself is discarded.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    state = PartialPathSet.start(layered)
    k = layered.layers
    if budget is None:
        budget = invocation_budget(delta, k)
    calls = 0
    stuck = [0] * (k + 1)
    while calls < budget:
        live = [j for j in range(k + 1) if state.pending[j]]
        if not live:
            break
        j = live[-1]
        front = list(state.pending[j])
        extended = extend_layer(state, j, cluster, child_seed(seed, calls), repetitions, matcher)
        calls += 1
        hopeless = extended is None
        extended = extended or []
        moved = set(extended)
        for pid in extended:
            state.pending[j].remove(pid)
            if j + 1 > k:
                state.complete.append(pid)
            else:
                state.pending[j + 1].append(pid)
        if len(extended) >= max(1, math.ceil(delta * len(front))):
            stuck[j] = 0
            continue
        stuck[j] += 1
        if not hopeless and stuck[j] < stuck_limit:
            continue
        stuck[j] = 0
        # backtrack every path of this front that did not move
        for pid in sorted(p for p in front if p not in moved):
            state.pending[j].remove(pid)
            path = state.paths[pid]
            if j == 0:
                state.dead.add((0, path.start))
                del state.paths[pid]
                continue
            ue, tail, me, head = path.steps.pop()
            state.dead.add((j, tail))
            state.used_edges.discard(ue)
            # the arc stays claimed so no other path enters it
            state.pending[j - 1].append(pid)
    return [state.paths[pid] for pid in sorted(state.complete)]


# -- certificate --------------------------------------------------------------

def approximation_certificate(g: Graph, b, m: BMatching, k: int) -> tuple[int, float | None]:
    """Greedy maximal set of disjoint augmenting paths with at most ``k + 2`` vertices.

    Paths are disjoint over copies (matched edges hold their own copies, a
    free end uses one spare copy) and share no edge.  If at most
    ``|M| / (k (k + 2))`` are found, ``M`` is certified ``(1 + 2/k)``-approximate
    and that factor is returned; otherwise the bound is ``None``.
    """
    budgets = as_budgets(b, g.n)
    spare = [budgets[v] - m.degree[v] for v in range(g.n)]
    used_m: set[int] = set()
    used_u: set[int] = set()
    max_edges = k + 1
    count = 0

    def dfs(v, edges, want_matched):
        # edges so far end at v; the next edge must be matched iff want_matched
        if want_matched and spare[v] > 0:
            return list(edges)
        if len(edges) >= max_edges:
            return None
        for e in g.incident(v):
            e = int(e)
            if (e in m) != want_matched or e in edges:
                continue
            if want_matched and e in used_m:
                continue
            if not want_matched and e in used_u:
                continue
            res = dfs(g.other(e, v), edges + [e], not want_matched)
            if res is not None:
                return res
        return None

    for s in range(g.n):
        while spare[s] > 0:
            spare[s] -= 1  # the start consumes a spare copy before the search
            found = dfs(s, [], False)
            if found is None:
                spare[s] += 1
                break
            end = s
            for e in found:
                end = g.other(e, end)
            spare[end] -= 1
            for e in found:
                (used_m if e in m else used_u).add(e)
            count += 1
    bound = 1 + 2 / k if k > 0 and count * k * (k + 2) <= len(m) else None
    return count, bound


# -- driver ----------------------------------------------------------------------

@dataclass
class UnweightedConfig:
    """Budgets for the phase loop.

    ``patience`` (phases in a row without growth before giving up) is off by
    default: augmenting paths survive a random layering with small
    probability, so only the certificate or ``phase_budget`` end a run.
    ``inner_repetitions`` defaults to ``ceil(log2 n)`` of the input graph.
    """

    phase_budget: int = 256
    patience: int | None = None
    repetitions: int | None = None
    delta: float = 0.5
    invocation_c: float = 2.0
    max_invocations: int = 64
    inner_repetitions: int | None = None
    stuck_limit: int = 3
    k_override: int | None = None


def layers_for(eps: float, k_override: int | None = None) -> int:
    if k_override is not None:
        return max(1, int(k_override))
    if eps <= 0:
        raise ValueError("eps must be positive")
    return max(1, math.ceil(2 / eps))


@dataclass
class UnweightedResult:
    matching: BMatching
    sizes: list[int]
    phases: int
    certified: float | None


def _run_once(g, budgets, k, cfg, cluster, seed, initial, trace) -> UnweightedResult:
    if initial is None:
        m = constant_approx_bmatching(g, budgets, cluster, seed=child_seed(seed, 0))
    else:
        m = initial
    sizes = [len(m)]
    stall = 0
    phases = 0
    certified = None
    budget = invocation_budget(cfg.delta, k, cfg.invocation_c, cfg.max_invocations)
    for phase in range(1, cfg.phase_budget + 1):
        _, certified = approximation_certificate(g, budgets, m, k)
        if certified is not None:
            break
        phases = phase
        before = len(m)
        for ell in range(k // 2 + 1):
            assign = distribute_matched_edges(g, budgets, m, cluster)
            rng = derive_rng(seed, phase, ell, TAG_LAYER)
            layered = build_layered_unweighted(g, budgets, m, assign, ell, rng)
            if not has_full_path(layered):
                continue
            inner = cfg.inner_repetitions or default_repetitions(g.n)
            paths = grow_paths(layered, cluster, child_seed(seed, phase, ell, 1), cfg.delta,
                               budget, inner, stuck_limit=cfg.stuck_limit)
            if not paths:
                continue
            walks = [p.to_walk(g, m) for p in paths]
            new = apply_walks(m, walks, g, budgets)
            assert len(new) == len(m) + len(walks)
            m = new
            if trace is not None:
                trace(m)
        sizes.append(len(m))
        stall = stall + 1 if len(m) == before else 0
        if cfg.patience is not None and stall >= cfg.patience:
            break
    if certified is None:
        _, certified = approximation_certificate(g, budgets, m, k)
    return UnweightedResult(m, sizes, phases, certified)


def unweighted_one_plus_eps(g: Graph, b, eps: float, cluster: MachineCluster | None = None, *,
                            seed: int = 0, config: UnweightedConfig | None = None,
                            initial: BMatching | None = None, trace=None,
                            details: bool = False):
    """Best of R independent runs of the phase loop (see :class:`UnweightedConfig`)."""
    cfg = config or UnweightedConfig()
    budgets = as_budgets(b, g.n)
    if initial is not None and validate_bmatching(g, budgets, initial.edge_ids):
        raise GraphError("initial matching is not a valid b-matching")
    k = layers_for(eps, cfg.k_override)
    if cluster is None:
        cluster = MachineCluster.for_input(g.n, g.m, seed)
    reps = default_repetitions(g.n) if cfg.repetitions is None else cfg.repetitions
    best: UnweightedResult | None = None
    for r in range(max(1, reps)):
        res = _run_once(g, budgets, k, cfg, cluster, child_seed(seed, r), initial, trace)
        if best is None or len(res.matching) > len(best.matching):
            best = res
    return best if details else best.matching
