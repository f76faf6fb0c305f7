"""(1+eps)-approximate weighted b-matching.

Weights are bucketed into classes W = (1+eps^4)^i.  For each class a random
layered graph over vertex copies is built from threshold sequences; paths that
cross every layer are found with the unweighted engine, cut into alternating
walks in the input graph, and thinned in two stages so that the survivors can
be applied together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Iterable, Protocol, Sequence

import numpy as np

from .graph import (AlternatingWalk, BMatching, CopyVertex, Graph, GraphError, apply_walks,
                    as_budgets, validate_bmatching)
from .mpc import TAG_RESOLVE, MachineCluster, child_seed, derive_rng
from .unweighted import (MatchedCopyAssignment, UnweightedConfig, distribute_matched_edges,
                         unweighted_one_plus_eps)

H, T = "H", "T"
TAG_SIDES = 21
TAG_ORIENT = 22
TAG_TAU = 23


class EnumerationInfeasible(ValueError):
    """The threshold family is too large to list."""


class ExtractionError(AssertionError):
    """A walk produced by extraction breaks one of its guarantees."""


class StructureError(ValueError):
    """Inputs to path following do not have the required shape."""


def _frac(x) -> Fraction:
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


# -- weight classes -----------------------------------------------------------

def class_period(eps) -> int:
    """Smallest t >= 1 with (1+eps^4)^t >= eps^-20, in exact arithmetic."""
    e = _frac(eps)
    if not 0 < e <= 1:
        raise ValueError("eps must lie in (0, 1]")
    base, target = 1 + e ** 4, 1 / e ** 20
    t, acc = 0, Fraction(1)
    while acc < target or t == 0:
        acc *= base
        t += 1
    return t


@dataclass(frozen=True)
class WeightClassSet:
    """Exponents i of the classes W = scale * (1+eps^4)^i in use."""

    eps: Fraction
    exponents: tuple[int, ...]
    scale: Fraction = Fraction(1)

    @property
    def base(self) -> Fraction:
        return 1 + self.eps ** 4

    @property
    def t(self) -> int:
        return class_period(self.eps)

    def weight(self, i: int) -> Fraction:
        return self.scale * self.base ** i

    def residue_classes(self) -> dict[int, list[int]]:
        t = self.t
        out: dict[int, list[int]] = {}
        for i in self.exponents:
            out.setdefault(i % t, []).append(i)
        return out


# -- threshold sequences --------------------------------------------------------

@dataclass(frozen=True)
class ThresholdSequences:
    """tau_a has one entry per layer, tau_b one per gap between layers."""

    tau_a: tuple[Fraction, ...]
    tau_b: tuple[Fraction, ...]

    def __post_init__(self):
        if len(self.tau_a) != len(self.tau_b) + 1:
            raise ValueError("tau_a needs exactly one more entry than tau_b")

    @property
    def layers(self) -> int:
        return len(self.tau_a)

    def violations(self, eps) -> list[str]:
        e = _frac(eps)
        unit = e ** 12
        out = []
        for x in self.tau_a + self.tau_b:
            if x < 0 or (x / unit).denominator != 1:
                out.append(f"{x} is not a non-negative multiple of eps^12")
        if sum(self.tau_b) - sum(self.tau_a) < unit:
            out.append("sum(tau_b) - sum(tau_a) < eps^12")
        if sum(self.tau_b) > 1 + e ** 4:
            out.append("sum(tau_b) > 1 + eps^4")
        if len(self.tau_b) > 32 / e ** 2:
            out.append("more than 32/eps^2 gaps")
        return out


def _compositions(total: int, parts: int, low: Sequence[int]):
    """Tuples of ``parts`` integers with entry j >= low[j] summing to ``total``."""
    rest = total - sum(low)
    if rest < 0:
        return
    for cut in combinations(range(rest + parts - 1), parts - 1):
        prev, out = -1, []
        for j, c in enumerate(cut + (rest + parts - 1,)):
            out.append(c - prev - 1 + low[j])
            prev = c
        yield tuple(out)


def _count(total: int, parts: int, low_sum: int) -> int:
    rest = total - low_sum
    return math.comb(rest + parts - 1, parts - 1) if rest >= 0 else 0


def enumerate_thresholds(eps, *, grid=None, max_gaps: int | None = None,
                         useful_only: bool = False, size_cap: int = 250_000
                         ) -> list[ThresholdSequences]:
    """Every threshold pair on the grid that meets the constraints.

    ``grid`` (default eps^12) must be a whole multiple of eps^12.  With
    ``useful_only`` the gaps and the middle layers get thresholds of at least
    one grid step; a zero there admits no edge, so the layered graph would be
    empty anyway.  Raises :class:`EnumerationInfeasible` when the family has
    more than ``size_cap`` members.
    """
    e = _frac(eps)
    if not 0 < e <= 1:
        raise ValueError("eps must lie in (0, 1]")
    unit = e ** 12
    step = unit if grid is None else _frac(grid)
    mult = step / unit
    if step <= 0 or mult.denominator != 1:
        raise ValueError(f"grid {step} is not a positive multiple of eps^12")
    top = math.floor((1 + e ** 4) / step)  # largest sum(tau_b) in steps
    gaps = math.floor(32 / e ** 2)
    if max_gaps is not None:
        gaps = min(gaps, max_gaps)
    # sum(tau_a) <= sum(tau_b) - eps^12 means sum_a <= sum_b - 1 in whole steps
    size = 0
    for k in range(1, gaps + 1):
        lb = k if useful_only else 0
        la = max(0, k - 1) if useful_only else 0
        for sb in range(1, top + 1):
            nb = _count(sb, k, lb)
            if nb:
                size += nb * sum(_count(sa, k + 1, la) for sa in range(sb))
        if size > size_cap:
            raise EnumerationInfeasible(
                f"enumeration infeasible: more than {size_cap} threshold sequences "
                f"(grid of {top + 1} values per coordinate, up to {gaps} gaps)")
    out = []
    for k in range(1, gaps + 1):
        low_b = [1 if useful_only else 0] * k
        low_a = [0] + [1 if useful_only else 0] * (k - 1) + [0]
        for sb in range(1, top + 1):
            for tb in _compositions(sb, k, low_b):
                for sa in range(sb):
                    for ta in _compositions(sa, k + 1, low_a):
                        out.append(ThresholdSequences(tuple(step * x for x in ta),
                                                      tuple(step * x for x in tb)))
    return out


# -- randomness shared by all layered graphs of one iteration ---------------

def bipartite_split(copies: Iterable[CopyVertex], rng: np.random.Generator) -> dict[CopyVertex, str]:
    """Each copy independently on side H or T with probability 1/2."""
    cs = sorted(copies)
    bits = rng.integers(0, 2, size=len(cs))
    return {c: (T if bit else H) for c, bit in zip(cs, bits)}


class OrientationSource(Protocol):
    def orient(self, e: int) -> tuple[int, int]:
        """(tail, head) of edge ``e``; the same answer on every query."""


class StoredOrientation:
    """One random bit per edge, drawn once and kept."""

    def __init__(self, g: Graph, rng: np.random.Generator):
        self._g = g
        self._bits = rng.integers(0, 2, size=g.m)

    def orient(self, e: int) -> tuple[int, int]:
        a, c = self._g.endpoints(e)
        return (c, a) if self._bits[e] else (a, c)


def orient_unmatched(g: Graph, m: BMatching, source: OrientationSource) -> dict[int, tuple[int, int]]:
    return {e: source.orient(e) for e in range(g.m) if e not in m}


# -- weighted layered graph ---------------------------------------------------

@dataclass(frozen=True)
class WeightWindow:
    """An edge is close to ``tau * W`` when its weight lies in [lo, hi] * tau * W."""

    lo: Fraction
    hi: Fraction

    @classmethod
    def default(cls, eps) -> "WeightWindow":
        e = _frac(eps)
        return cls(e ** 2, 1 + e ** 2)

    def admits(self, w, tau: Fraction, W: Fraction) -> bool:
        return tau > 0 and self.lo * tau * W <= w <= self.hi * tau * W

    def bounds(self, tau: Fraction, W: Fraction) -> tuple[Fraction, Fraction] | None:
        if tau <= 0:
            return None
        return self.lo * tau * W, self.hi * tau * W


Node = tuple[CopyVertex, int]  # (copy, layer)


@dataclass
class WeightedLayeredGraph:
    """Layers 1..L, each holding copies on side H and side T.

    ``mate`` maps a surviving node to the matched edge it owns in its layer and
    the node at the other end.  ``gaps[i]`` lists unmatched edges ``(e, u, v)``
    oriented ``u -> v`` that may join a copy of ``u`` in ``H_i`` to a copy of
    ``v`` in ``T_{i+1}``.
    """

    W: Fraction
    tau: ThresholdSequences
    sides: dict[CopyVertex, str]
    nodes: set[Node]
    mate: dict[Node, tuple[int, Node]]
    gaps: dict[int, list[tuple[int, int, int]]]
    free: set[CopyVertex]

    @property
    def layers(self) -> int:
        return self.tau.layers

    def copies(self, v: int, side: str, layer: int) -> list[CopyVertex]:
        return sorted(c for c, i in self.nodes
                      if i == layer and c.base == v and self.sides[c] == side)

    def is_empty(self) -> bool:
        return not any(self.gaps.values())

    def reachable(self) -> bool:
        """Whether some path crosses every layer, ignoring disjointness."""
        by: dict[tuple[int, str, int], list[CopyVertex]] = {}
        for c, i in self.nodes:
            by.setdefault((c.base, self.sides[c], i), []).append(c)
        front = {c.base for c, i in self.nodes if i == 1 and self.sides[c] == H}
        for i in range(1, self.layers):
            entered = [(v, c) for _, u, v in self.gaps.get(i, []) if u in front
                       for c in by.get((v, T, i + 1), [])]
            if not entered:
                return False
            if i + 1 == self.layers:
                return True
            front = {self.mate[(c, i + 1)][1][0].base for _, c in entered}
        return False


def build_weighted_layered(g: Graph, b, m: BMatching, assignment: MatchedCopyAssignment,
                           sides: dict[CopyVertex, str], orientation: dict[int, tuple[int, int]],
                           W, tau: ThresholdSequences, window: WeightWindow) -> WeightedLayeredGraph:
    """Matched edges inside layers, unmatched edges between them, then cleaning.

    A node survives when it owns a matched edge of its layer.  Free copies
    survive only in ``H_1`` when ``tau_a[0] == 0`` and in ``T_L`` when
    ``tau_a[-1] == 0``.  Edges whose ends share a side are ignored.
    """
    budgets = as_budgets(b, g.n)
    W = _frac(W)
    L = tau.layers
    cache: dict[Fraction, tuple | None] = {}

    def close(w, t) -> bool:
        if t not in cache:
            cache[t] = window.bounds(t, W)
        bd = cache[t]
        return bd is not None and bd[0] <= w <= bd[1]

    nodes: set[Node] = set()
    mate: dict[Node, tuple[int, Node]] = {}
    for e in sorted(m.edge_ids):
        p, q = assignment.copies(g, e)
        if sides[p] == sides[q]:
            continue
        h, t_ = (p, q) if sides[p] == H else (q, p)
        w = g.weight(e)
        for i in range(1, L + 1):
            if close(w, tau.tau_a[i - 1]):
                nodes.update({(h, i), (t_, i)})
                mate[(h, i)] = (e, (t_, i))
                mate[(t_, i)] = (e, (h, i))
    free = {CopyVertex(v, j) for v in range(g.n) for j in range(m.degree[v] + 1, budgets[v] + 1)}
    for c in free:
        if tau.tau_a[0] == 0 and sides[c] == H:
            nodes.add((c, 1))
        if tau.tau_a[-1] == 0 and sides[c] == T:
            nodes.add((c, L))
    tails = {(c.base, i) for c, i in nodes if sides[c] == H}
    heads = {(c.base, i) for c, i in nodes if sides[c] == T}
    gaps: dict[int, list[tuple[int, int, int]]] = {i: [] for i in range(1, L)}
    for e, (u, v) in sorted(orientation.items()):
        w = g.weight(e)
        for i in range(1, L):
            if (u, i) in tails and (v, i + 1) in heads and close(w, tau.tau_b[i - 1]):
                gaps[i].append((e, u, v))
    return WeightedLayeredGraph(W, tau, sides, nodes, mate, gaps, free)


# -- paths through the layered graph -------------------------------------------

@dataclass
class LayeredAlternatingPath:
    """Nodes visited in order and the base edge used between consecutive ones."""

    nodes: list[Node]
    edges: list[int]
    matched: list[bool]

    def gain(self, g: Graph):
        return sum((-g.weight(e) if mt else g.weight(e)) for e, mt in zip(self.edges, self.matched))


def alg_alternating(blue: Iterable[tuple], red: Iterable[tuple], specials: Iterable,
                    cluster: MachineCluster | None = None) -> list[tuple[list, list]]:
    """Follow red, blue, red, ... from every special vertex as far as possible.

    ``blue`` and ``red`` hold ``(a, c, label)`` triples.  Each vertex may touch
    at most one edge of each colour, so every step has at most one choice.
    Returns ``(vertices, labels)`` per special vertex, in the given order.
    """
    nbr = {"red": {}, "blue": {}}
    keys: dict[str, set] = {"red": set(), "blue": set()}
    for colour, edges in (("blue", blue), ("red", red)):
        for a, c, lab in edges:
            for x, y in ((a, c), (c, a)):
                if x in nbr[colour]:
                    raise StructureError(f"vertex {x!r} has two {colour} edges")
                nbr[colour][x] = (y, lab)
            keys[colour].add(frozenset((a, c)))
    if keys["red"] & keys["blue"]:
        raise StructureError("red and blue edges overlap")
    specials = list(specials)
    for s in specials:
        if s in nbr["blue"]:
            raise StructureError(f"special vertex {s!r} touches a blue edge")
    out = []
    steps = 0
    for s in specials:
        verts, labs, seen = [s], [], {s}
        colour = "red"
        while verts[-1] in nbr[colour]:
            y, lab = nbr[colour][verts[-1]]
            if y in seen:
                raise StructureError("red and blue edges close a cycle")
            verts.append(y)
            labs.append(lab)
            seen.add(y)
            colour = "blue" if colour == "red" else "red"
        steps = max(steps, len(labs))
        out.append((verts, labs))
    if cluster is not None:
        cluster.charge_rounds(steps, "alternating")
    return out


def _compress_layered(layered: WeightedLayeredGraph):
    """Contract copies sharing (vertex, side, layer); drop first and last layer matched edges."""
    L = layered.layers
    keys = sorted({(c.base, layered.sides[c], i) for c, i in layered.nodes})
    index = {k: j for j, k in enumerate(keys)}
    mult = [0] * len(keys)
    for c, i in layered.nodes:
        mult[index[(c.base, layered.sides[c], i)]] += 1
    edges, kind = [], {}
    for (c, i), (e, (d, _)) in sorted(layered.mate.items()):
        if 1 < i < L and layered.sides[c] == H:
            a, z = index[(c.base, H, i)], index[(d.base, T, i)]
            edges.append((a, z))
            kind[(min(a, z), max(a, z))] = ("blue", e, i)
    for i, lst in sorted(layered.gaps.items()):
        for e, u, v in lst:
            a, z = index[(u, H, i)], index[(v, T, i + 1)]
            edges.append((a, z))
            kind[(min(a, z), max(a, z))] = ("red", e, i)
    return keys, mult, Graph(len(keys), edges), kind


def alg_layered_matching(layered: WeightedLayeredGraph, cluster: MachineCluster | None,
                         seed: int, eps_inner: float = 0.5,
                         config: UnweightedConfig | None = None) -> list[tuple[Node, Node, int]]:
    """Unmatched layered edges chosen by a near-maximum matching of the trimmed graph.

    Copies of one vertex on one side of one layer are contracted; the matched
    edges of the middle layers form the starting b'-matching with b' the copy
    counts.  The chosen unmatched edges are then handed to copies: first the
    copies whose own matched edge was dropped, in increasing index.  Returns
    ``(H node, T node, edge)`` triples.
    """
    if layered.is_empty():
        return []
    keys, mult, cg, kind = _compress_layered(layered)
    if cg.m == 0:
        return []
    start = BMatching.build(cg, mult, [j for j in range(cg.m)
                                       if kind[cg.endpoints(j)][0] == "blue"])
    cfg = config or UnweightedConfig(phase_budget=8, repetitions=1)
    res = unweighted_one_plus_eps(cg, mult, eps_inner, cluster, seed=seed, config=cfg,
                                  initial=start)
    kept_blue = {kind[cg.endpoints(j)][1:] for j in res.edge_ids
                 if kind[cg.endpoints(j)][0] == "blue"}
    index = {k: j for j, k in enumerate(keys)}
    slots: dict[int, list[CopyVertex]] = {}
    for c, i in sorted(layered.nodes):
        owned = layered.mate.get((c, i))
        busy = owned is not None and 1 < i < layered.layers and (owned[0], i) in kept_blue
        if not busy:
            slots.setdefault(index[(c.base, layered.sides[c], i)], []).append(c)
    out = []
    for j in sorted(res.edge_ids):
        a, z = cg.endpoints(j)
        tag, e, i = kind[(a, z)]
        if tag != "red":
            continue
        ha, ta = (a, z) if keys[a][1] == H else (z, a)
        if not slots.get(ha) or not slots.get(ta):
            raise StructureError("matching exceeds the copies available at a node")
        hc, tc = slots[ha].pop(0), slots[ta].pop(0)
        out.append(((hc, i), (tc, i + 1), e))
    return out


def layered_paths(layered: WeightedLayeredGraph, red: list[tuple[Node, Node, int]],
                  m: BMatching, cluster: MachineCluster | None = None) -> list[LayeredAlternatingPath]:
    """Red-blue paths from ``H_1`` that reach the last layer, with end edges attached.

    Blue edges are the matched edges of the middle layers.  A path that starts
    at a matched copy in ``H_1`` gets its first-layer matched edge prepended,
    and one that ends at a matched copy in ``T_L`` gets its last-layer one
    appended.
    """
    L = layered.layers
    blue = [(c, d, e) for c, (e, d) in layered.mate.items()
            if 1 < c[1] < L and layered.sides[c[0]] == H]
    specials = sorted(nd for nd in layered.nodes if nd[1] == 1 and layered.sides[nd[0]] == H)
    found = alg_alternating(blue, [(a, c, e) for a, c, e in red], specials, cluster)
    out = []
    for verts, labs in found:
        if verts[-1][1] != L:
            continue
        nodes, edges = list(verts), list(labs)
        if layered.tau.tau_a[0] != 0:
            e, other = layered.mate[nodes[0]]
            nodes.insert(0, other)
            edges.insert(0, e)
        if layered.tau.tau_a[-1] != 0:
            e, other = layered.mate[nodes[-1]]
            nodes.append(other)
            edges.append(e)
        out.append(LayeredAlternatingPath(nodes, edges, [e in m for e in edges]))
    return out


# -- extraction ----------------------------------------------------------------

@dataclass
class Augmentation:
    """An alternating walk in the input graph plus the copies it occupies."""

    walk: AlternatingWalk
    footprint: frozenset[CopyVertex]
    gain: Fraction
    exponent: int = 0

    @property
    def edge_set(self) -> frozenset[int]:
        return frozenset(self.walk.edges)


WalkBundle = list[Augmentation]


def extract_alternations(path: LayeredAlternatingPath, g: Graph, m: BMatching,
                         layered: WeightedLayeredGraph, exponent: int = 0) -> WalkBundle:
    """Map a layered path to even cycles plus one path in the input graph.

    Every copy of ``v`` on side ``s`` seen on the path is replaced by a single
    representative: the free endpoint copy if there is one, else the smallest
    index.  Repeated representatives are cut out as cycles.  The three
    guarantees (cycles even, no repeated edge, endpoints free or matched) are
    checked and raise :class:`ExtractionError` when broken.
    """
    sides = layered.sides
    ends = {path.nodes[0][0], path.nodes[-1][0]}
    rep: dict[tuple[int, str], CopyVertex] = {}
    for c, _ in path.nodes:
        key = (c.base, sides[c])
        cur = rep.get(key)
        pref = (c not in ends or c not in layered.free, c.index)
        if cur is None or pref < (cur not in ends or cur not in layered.free, cur.index):
            rep[key] = c
    seq = [rep[(c.base, sides[c])] for c, _ in path.nodes]
    stack: list[CopyVertex] = []
    st_edges: list[int] = []
    pos: dict[CopyVertex, int] = {}
    pieces: list[tuple[list[CopyVertex], list[int]]] = []
    for j, c in enumerate(seq):
        if c in pos:
            p = pos[c]
            cyc_v = stack[p:] + [c]
            cyc_e = st_edges[p:]
            pieces.append((cyc_v, cyc_e))
            for x in stack[p + 1:]:
                del pos[x]
            del stack[p + 1:]
            del st_edges[p:]
        else:
            pos[c] = len(stack)
            stack.append(c)
        if j < len(path.edges):
            st_edges.append(path.edges[j])
    pieces.append((stack, st_edges))
    out = []
    for verts, edges in pieces:
        if not edges:
            continue
        walk = AlternatingWalk(tuple(c.base for c in verts), tuple(edges),
                               tuple(e in m for e in edges),
                               start_copy=verts[0], end_copy=verts[-1])
        walk.check(g, m)
        gn = sum((-g.weight(e) if mt else g.weight(e)) for e, mt in zip(walk.edges, walk.matched))
        out.append(Augmentation(walk, frozenset(verts), _frac(gn), exponent))
    _check_extraction(out, layered.free)
    return out


def _check_extraction(parts: WalkBundle, free: set[CopyVertex]) -> None:
    open_walks = [a for a in parts if a.walk.start_copy != a.walk.end_copy]
    if len(open_walks) > 1:
        raise ExtractionError("more than one walk is not a cycle")
    for a in parts:
        w = a.walk
        if w.repeats_edge():
            raise ExtractionError(f"walk repeats an edge: {w.edges}")
        if w.start_copy == w.end_copy:
            if len(w) % 2 or w.matched[0] == w.matched[-1]:
                raise ExtractionError("cycle is odd or does not alternate at its start")
            continue
        for c, mt in ((w.start_copy, w.matched[0]), (w.end_copy, w.matched[-1])):
            if not mt and c not in free:
                raise ExtractionError(f"endpoint {c} is neither free nor on a matched edge")


# -- conflict resolution (Algorithms 5 and 6) -----------------------------------

def resolve_within_layered(paths: Sequence[LayeredAlternatingPath], eps, rng: np.random.Generator,
                           g: Graph, m: BMatching, layered: WeightedLayeredGraph, *,
                           keep_probability=None, min_gain=None, exponent: int = 0,
                           cluster: MachineCluster | None = None) -> WalkBundle:
    """Sample paths, keep each one's best walk, then drop walks that collide.

    A path is processed with probability ``keep_probability`` (default
    eps^9/2).  Walks are then scanned in order and kept when they share no
    copy and no edge with a walk kept before.  Walks whose gain is below
    ``min_gain`` are discarded.
    """
    p = _frac(eps) ** 9 / 2 if keep_probability is None else _frac(keep_probability)
    chosen: WalkBundle = []
    for path in paths:
        if rng.random() >= p:
            continue
        parts = extract_alternations(path, g, m, layered, exponent)
        best = max(parts, key=lambda a: a.gain)
        if min_gain is not None and best.gain < min_gain:
            continue
        chosen.append(best)
    if cluster is not None and chosen:
        cluster.distributed_sort([(c, j) for j, a in enumerate(chosen) for c in a.footprint],
                                 record_words=3)
    kept: WalkBundle = []
    copies: set[CopyVertex] = set()
    edges: set[int] = set()
    for a in chosen:
        if a.footprint & copies or a.edge_set & edges:
            continue
        kept.append(a)
        copies |= a.footprint
        edges |= a.edge_set
    return kept


def resolve_between_layered(bundles: dict[int, WalkBundle], eps, t: int | None = None
                            ) -> tuple[int, WalkBundle]:
    """Split classes by exponent mod t and keep the residue with most gain.

    Within residue j, a walk of class W is kept when it shares no copy and no
    edge with any walk of a heavier class of the same residue.  Ties go to the
    smallest j.
    """
    if t is None:
        t = class_period(eps)
    totals = []
    chosen: dict[int, WalkBundle] = {}
    for j in range(t):
        members = sorted((i for i in bundles if i % t == j), reverse=True)
        heavier_c: set[CopyVertex] = set()
        heavier_e: set[int] = set()
        keep: WalkBundle = []
        for i in members:
            for a in bundles[i]:
                if not (a.footprint & heavier_c or a.edge_set & heavier_e):
                    keep.append(a)
            for a in bundles[i]:
                heavier_c |= a.footprint
                heavier_e |= a.edge_set
        chosen[j] = keep
        totals.append(sum((a.gain for a in keep), Fraction(0)))
    if not totals:
        return 0, []
    best = max(range(t), key=lambda j: (totals[j], -j))
    return best, chosen[best]


# -- driver --------------------------------------------------------------------

@dataclass
class WeightedConfig:
    """Desk-scale budgets.

    ``threshold_step`` is rounded to a whole multiple of eps^12 and
    ``max_gaps`` caps the number of gaps between layers.  ``window`` is the
    (lo, hi) factor pair for closeness, default (eps^2, 1+eps^2).
    """

    phase_budget: int = 120
    patience: int = 40
    class_repetitions: int = 64
    keep_probability: float = 1.0
    threshold_step: Fraction = Fraction(1, 4)
    max_gaps: int = 2
    window: tuple | None = None
    unweighted_delta: float = 0.5
    inner: UnweightedConfig = field(default_factory=lambda: UnweightedConfig(phase_budget=8,
                                                                             repetitions=1))
    restarts: int = 1


@dataclass
class WeightedResult:
    matching: BMatching
    weights: list
    iterations: int
    trace: list[dict]


def _grid_step(eps: Fraction, target: Fraction) -> Fraction:
    unit = eps ** 12
    return unit * max(1, round(target / unit))


def weight_classes(g: Graph, m: BMatching, eps: Fraction, step: Fraction, window: WeightWindow
                   ) -> WeightClassSet:
    """Exponents whose class can admit at least one edge of the graph."""
    ws = [_frac(g.weight(e)) for e in range(g.m)]
    scale = min(ws)
    base = 1 + eps ** 4
    lo_tau, hi_tau = step, 1 + eps ** 4
    exps = []
    i, W = 0, scale
    top = max(ws)
    while window.lo * lo_tau * W <= top:
        if any(window.lo * lo_tau * W <= w <= window.hi * hi_tau * W for w in ws):
            exps.append(i)
        i += 1
        W *= base
    return WeightClassSet(eps, tuple(exps), scale)


class _ClassIndex:
    """Edges admitted by each grid threshold for one class, for quick screening."""

    def __init__(self, g, m, assign, sides, orientation, free, W, step, top, window):
        self.matched: dict[int, list[tuple[int, int]]] = {}
        self.unmatched: dict[int, list[tuple[int, int]]] = {}
        pairs = []
        for e in sorted(m.edge_ids):
            p, q = assign.copies(g, e)
            if sides[p] != sides[q]:
                h, t_ = (p, q) if sides[p] == H else (q, p)
                pairs.append((g.weight(e), h.base, t_.base))
        loose = [(g.weight(e), u, v) for e, (u, v) in sorted(orientation.items())]
        for s in range(1, top + 1):
            lo, hi = window.bounds(step * s, W)
            self.matched[s] = [(h, t_) for w, h, t_ in pairs if lo <= w <= hi]
            self.unmatched[s] = [(u, v) for w, u, v in loose if lo <= w <= hi]
        self.free_h = {c.base for c in free if sides[c] == H}
        self.free_t = {c.base for c in free if sides[c] == T}

    def reachable(self, ta: Sequence[int], tb: Sequence[int]) -> bool:
        L = len(ta)
        front = self.free_h if ta[0] == 0 else {h for h, _ in self.matched[ta[0]]}
        for i in range(1, L):
            last = i + 1 == L
            if last and ta[-1] == 0:
                targets = self.free_t
            else:
                targets = {t_ for _, t_ in self.matched[ta[i]]}
            hit = {v for u, v in self.unmatched[tb[i - 1]] if u in front and v in targets}
            if not hit:
                return False
            if last:
                return True
            front = {h for h, t_ in self.matched[ta[i]] if t_ in hit}
        return False


def _iteration(g, budgets, m, eps, cfg, family, window, cluster, seed, record):
    rng = derive_rng(seed, TAG_RESOLVE)
    assign = distribute_matched_edges(g, budgets, m, cluster)
    copies = [CopyVertex(v, j) for v in range(g.n) for j in range(1, budgets[v] + 1)]
    sides = bipartite_split(copies, derive_rng(seed, TAG_SIDES))
    orientation = orient_unmatched(g, m, StoredOrientation(g, derive_rng(seed, TAG_ORIENT)))
    free = [CopyVertex(v, j) for v in range(g.n) for j in range(m.degree[v] + 1, budgets[v] + 1)]
    step = _grid_step(eps, _frac(cfg.threshold_step))
    top = math.floor((1 + eps ** 4) / step)
    in_steps = [(tuple(int(x / step) for x in f.tau_a), tuple(int(x / step) for x in f.tau_b))
                for f in family]
    classes = weight_classes(g, m, eps, step, window)
    pick = derive_rng(seed, TAG_TAU)
    bundles: dict[int, WalkBundle] = {}
    built = found = 0
    for i in classes.exponents:
        W = classes.weight(i)
        index = _ClassIndex(g, m, assign, sides, orientation, free, W, step, top, window)
        tau = None
        tries = min(cfg.class_repetitions, len(family))
        for j in pick.choice(len(family), size=tries, replace=False):
            if index.reachable(*in_steps[int(j)]):
                tau = family[int(j)]
                break
        if tau is None:
            continue
        layered = build_weighted_layered(g, budgets, m, assign, sides, orientation, W, tau, window)
        built += 1
        red = alg_layered_matching(layered, cluster, child_seed(seed, i), cfg.unweighted_delta,
                                   cfg.inner)
        paths = layered_paths(layered, red, m, cluster)
        found += len(paths)
        walks = resolve_within_layered(paths, eps, rng, g, m, layered,
                                       keep_probability=cfg.keep_probability,
                                       min_gain=eps ** 12 * W, exponent=i, cluster=cluster)
        for a in walks:
            assert a.gain <= 2 * W, "walk gain exceeds twice its class weight"
        if walks:
            bundles[i] = walks
    j, chosen = resolve_between_layered(bundles, eps)
    before = m.weight(g)
    new = apply_walks(m, [a.walk for a in chosen], g, budgets)
    if new.weight(g) - before != sum((a.gain for a in chosen), Fraction(0)):
        raise GraphError("applied weight change differs from the sum of gains")
    record.append({"classes": len(classes.exponents), "built": built, "paths": found,
                   "kept": len(chosen), "residue": j, "gain": str(new.weight(g) - before)})
    return new


def weighted_one_plus_eps(g: Graph, b, eps, cluster: MachineCluster | None = None, *,
                          seed: int = 0, config: WeightedConfig | None = None,
                          initial: BMatching | None = None, trace=None, details: bool = False):
    """Repeated rounds of layering, path finding and conflict resolution.

    Starts from ``initial`` (default empty).  Each round applies the walks of
    one residue class; the matching stays valid and its weight never drops.
    Stops after ``patience`` rounds without gain or ``phase_budget`` rounds.
    The best of ``restarts`` independent runs is returned.
    """
    cfg = config or WeightedConfig()
    e = _frac(eps)
    if e <= 0:
        raise ValueError("eps must be positive")
    if any(_frac(w) <= 0 for w in g.weights):
        raise GraphError("edge weights must be positive")
    budgets = as_budgets(b, g.n)
    if initial is not None and validate_bmatching(g, budgets, initial.edge_ids):
        raise GraphError("initial matching is not a valid b-matching")
    if cluster is None:
        cluster = MachineCluster.for_input(g.n, g.m, seed)
    step = _grid_step(min(e, Fraction(1)), _frac(cfg.threshold_step))
    family = enumerate_thresholds(min(e, Fraction(1)), grid=step, max_gaps=cfg.max_gaps,
                                  useful_only=True)
    window = WeightWindow(*map(_frac, cfg.window)) if cfg.window else WeightWindow.default(e)
    best: WeightedResult | None = None
    for r in range(max(1, cfg.restarts)):
        run_seed = child_seed(seed, r)
        m = initial if initial is not None else BMatching.empty(g)
        weights = [m.weight(g)]
        record: list[dict] = []
        stall = 0
        it = 0
        if g.m:
            for it in range(1, cfg.phase_budget + 1):
                m = _iteration(g, budgets, m, min(e, Fraction(1)), cfg, family, window, cluster,
                               child_seed(run_seed, it), record)
                if trace is not None:
                    trace(m)
                stall = stall + 1 if m.weight(g) == weights[-1] else 0
                weights.append(m.weight(g))
                if stall >= cfg.patience:
                    break
        res = WeightedResult(m, weights, it, record)
        if best is None or m.weight(g) > best.matching.weight(g):
            best = res
    return best if details else best.matching
