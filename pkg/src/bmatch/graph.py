"""Graphs, budgets, b-matchings and alternating walks.

Edges are stored canonically: every edge is a pair ``u < v`` and edge ids are
positions in the lexicographically sorted edge list, so an id never depends on
input order.  Weights are exact (``int`` or ``Fraction``); an unweighted graph
stores no weight array and every edge weighs 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

Weight = int | Fraction


class GraphError(ValueError):
    """Malformed graph, budget vector or matching."""


class InvalidAugmentation(ValueError):
    """A walk that does not alternate, or whose application breaks a budget."""


def _exact(w) -> Weight:
    if isinstance(w, (int, np.integer)):
        return int(w)
    if isinstance(w, Fraction):
        return w.numerator if w.denominator == 1 else w
    if isinstance(w, float):
        f = Fraction(repr(w))
    else:
        f = Fraction(str(w))
    return f.numerator if f.denominator == 1 else f


class Graph:
    """Simple undirected graph on vertices ``0..n-1`` with exact weights."""

    def __init__(self, n: int, edges: Iterable[tuple], *, weighted: bool | None = None):
        if n < 0:
            raise GraphError("negative vertex count")
        rows = []
        for rec in edges:
            if len(rec) == 2:
                a, b_ = rec
                w = 1
            else:
                a, b_, w = rec
            a, b_ = int(a), int(b_)
            if a == b_:
                raise GraphError(f"self-loop at vertex {a}")
            if not (0 <= a < n and 0 <= b_ < n):
                raise GraphError(f"edge ({a}, {b_}) out of range for n={n}")
            w = _exact(w)
            if w < 0:
                raise GraphError(f"negative weight on edge ({a}, {b_})")
            rows.append((min(a, b_), max(a, b_), w))
        rows.sort(key=lambda r: (r[0], r[1]))
        for i in range(1, len(rows)):
            if rows[i][:2] == rows[i - 1][:2]:
                raise GraphError(f"duplicate edge {rows[i][:2]}")
        if weighted is None:
            weighted = any(r[2] != 1 for r in rows)
        self.n = n
        self.u = np.fromiter((r[0] for r in rows), dtype=np.int32, count=len(rows))
        self.v = np.fromiter((r[1] for r in rows), dtype=np.int32, count=len(rows))
        self._weights: list[Weight] | None = [r[2] for r in rows] if weighted else None

    @classmethod
    def from_arrays(cls, n: int, u: np.ndarray, v: np.ndarray,
                    weights: Sequence[Weight] | None = None) -> "Graph":
        """Build from endpoint arrays that are already canonical and sorted.

        This skips the per-edge Python validation; it still checks ordering and
        uniqueness with vectorised comparisons.
        """
        g = cls.__new__(cls)
        u = np.asarray(u, dtype=np.int32)
        v = np.asarray(v, dtype=np.int32)
        if u.shape != v.shape:
            raise GraphError("endpoint arrays differ in length")
        if u.size:
            if np.any(u >= v) or u.min() < 0 or v.max() >= n:
                raise GraphError("edges must satisfy 0 <= u < v < n")
            if np.any((u[1:] < u[:-1]) | ((u[1:] == u[:-1]) & (v[1:] <= v[:-1]))):
                raise GraphError("edges must be sorted and unique")
        g.n = n
        g.u = u
        g.v = v
        g._weights = None if weights is None else [_exact(w) for w in weights]
        return g

    # -- basic queries -------------------------------------------------
    @property
    def m(self) -> int:
        return int(self.u.size)

    @property
    def weighted(self) -> bool:
        return self._weights is not None

    def weight(self, e: int) -> Weight:
        return 1 if self._weights is None else self._weights[e]

    @property
    def weights(self) -> list[Weight]:
        return [1] * self.m if self._weights is None else list(self._weights)

    @property
    def avg_degree(self) -> Fraction:
        """Average degree ``2m/n`` as an exact rational."""
        return Fraction(2 * self.m, self.n) if self.n else Fraction(0)

    @cached_property
    def degree(self) -> np.ndarray:
        return np.bincount(self.u, minlength=self.n) + np.bincount(self.v, minlength=self.n)

    @cached_property
    def _csr(self) -> tuple[np.ndarray, np.ndarray]:
        ends = np.concatenate([self.u, self.v])
        ids = np.concatenate([np.arange(self.m), np.arange(self.m)])
        ids = ids.astype(np.int64 if self.m >= 2 ** 31 else np.int32)
        order = np.argsort(ends, kind="stable")
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(self.degree, out=indptr[1:])
        return indptr, ids[order]

    def incident(self, x: int) -> np.ndarray:
        """Ids of the edges incident to vertex ``x`` (ascending)."""
        indptr, ids = self._csr
        return ids[indptr[x]:indptr[x + 1]]

    def endpoints(self, e: int) -> tuple[int, int]:
        return int(self.u[e]), int(self.v[e])

    def other(self, e: int, x: int) -> int:
        a, b_ = int(self.u[e]), int(self.v[e])
        if x == a:
            return b_
        if x == b_:
            return a
        raise GraphError(f"vertex {x} is not an endpoint of edge {e}")

    @cached_property
    def _pair_index(self) -> dict[tuple[int, int], int]:
        return {(int(a), int(b_)): i for i, (a, b_) in enumerate(zip(self.u, self.v))}

    def edge_id(self, a: int, b_: int) -> int:
        key = (a, b_) if a < b_ else (b_, a)
        try:
            return self._pair_index[key]
        except KeyError:
            raise GraphError(f"no edge between {a} and {b_}") from None

    def edges(self) -> Iterator[tuple[int, int, Weight]]:
        for e in range(self.m):
            yield int(self.u[e]), int(self.v[e]), self.weight(e)

    def subgraph(self, edge_ids: Sequence[int]) -> "Graph":
        """Same vertex set, restricted to ``edge_ids`` (which must be sorted)."""
        ids = np.asarray(edge_ids, dtype=np.int64)
        w = None if self._weights is None else [self._weights[i] for i in ids]
        return Graph.from_arrays(self.n, self.u[ids], self.v[ids], w)

    def __repr__(self) -> str:
        return f"Graph(n={self.n}, m={self.m}, weighted={self.weighted})"


@dataclass(frozen=True)
class BudgetVector:
    """Per-vertex integer budgets ``b_v >= 1``."""

    b: tuple[int, ...]

    def __post_init__(self):
        for i, x in enumerate(self.b):
            if int(x) != x or x < 1:
                raise GraphError(f"budget of vertex {i} must be a positive integer, got {x}")

    @classmethod
    def constant(cls, n: int, value: int = 1) -> "BudgetVector":
        return cls(tuple([value] * n))

    def __len__(self) -> int:
        return len(self.b)

    def __getitem__(self, v: int) -> int:
        return self.b[v]

    def __iter__(self):
        return iter(self.b)

    def total(self) -> int:
        return sum(self.b)

    def array(self) -> np.ndarray:
        return np.asarray(self.b, dtype=np.int64)


def as_budgets(b, n: int | None = None) -> BudgetVector:
    if isinstance(b, BudgetVector):
        out = b
    else:
        out = BudgetVector(tuple(int(x) for x in b))
    if n is not None and len(out) != n:
        raise GraphError(f"budget vector has {len(out)} entries for {n} vertices")
    return out


class CopyVertex(NamedTuple):
    """The ``index``-th copy (1-based) of vertex ``base``."""

    base: int
    index: int


def decompress(vertices: Iterable[int], b) -> set[CopyVertex]:
    """All copies ``v^1..v^{b_v}`` of the given vertices."""
    out = set()
    for x in vertices:
        for i in range(1, int(b[x]) + 1):
            out.add(CopyVertex(x, i))
    return out


def compress(copies: Iterable[CopyVertex]) -> set[int]:
    return {c.base for c in copies}


@dataclass(frozen=True)
class BMatching:
    """A set of edge ids; validity against a graph is checked on construction."""

    edge_ids: frozenset[int]
    degree: tuple[int, ...] = field(compare=False, repr=False)

    @classmethod
    def build(cls, g: Graph, b, edge_ids: Iterable[int] = ()) -> "BMatching":
        ids = list(edge_ids)
        report = validate_bmatching(g, b, ids)
        if report:
            raise GraphError("; ".join(report))
        s = frozenset(int(e) for e in ids)
        deg = [0] * g.n
        for e in s:
            deg[int(g.u[e])] += 1
            deg[int(g.v[e])] += 1
        return cls(s, tuple(deg))

    @classmethod
    def empty(cls, g: Graph) -> "BMatching":
        return cls(frozenset(), tuple([0] * g.n))

    def __len__(self) -> int:
        return len(self.edge_ids)

    def __contains__(self, e) -> bool:
        return e in self.edge_ids

    def __iter__(self):
        return iter(sorted(self.edge_ids))

    def weight(self, g: Graph) -> Weight:
        return sum((g.weight(e) for e in self.edge_ids), 0)


def validate_bmatching(g: Graph, b, edge_ids: Iterable[int]) -> list[str]:
    """Every problem with ``edge_ids`` as a b-matching of ``g``; empty iff valid."""
    problems = []
    seen = set()
    deg = [0] * g.n
    for e in edge_ids:
        e = int(e)
        if not 0 <= e < g.m:
            problems.append(f"structural: edge id {e} does not exist")
            continue
        if e in seen:
            problems.append(f"duplicate edge id {e}")
            continue
        seen.add(e)
        deg[int(g.u[e])] += 1
        deg[int(g.v[e])] += 1
    if len(b) != g.n:
        problems.append(f"structural: budget vector has {len(b)} entries for {g.n} vertices")
        return problems
    for x in range(g.n):
        if deg[x] > b[x]:
            problems.append(f"budget violated at vertex {x}: degree {deg[x]} > {b[x]}")
    return problems


def free_vertices(g: Graph, b, m: BMatching) -> set[int]:
    return {x for x in range(g.n) if m.degree[x] < b[x]}


@dataclass(frozen=True)
class AlternatingWalk:
    """A walk given by its vertex sequence and the edge ids between them.

    ``matched`` records, per edge, whether it was in the matching the walk was
    built against.  ``start_copy``/``end_copy`` optionally pin the endpoint
    copies (used by conflict resolution).
    """

    vertices: tuple[int, ...]
    edges: tuple[int, ...]
    matched: tuple[bool, ...]
    start_copy: CopyVertex | None = None
    end_copy: CopyVertex | None = None

    def __post_init__(self):
        if self.edges and len(self.vertices) != len(self.edges) + 1:
            raise InvalidAugmentation("walk needs one more vertex than edges")
        if len(self.matched) != len(self.edges):
            raise InvalidAugmentation("one matched flag per edge is required")

    @classmethod
    def from_vertices(cls, g: Graph, m: BMatching, vertices: Sequence[int], **kw) -> "AlternatingWalk":
        ids = tuple(g.edge_id(a, b_) for a, b_ in zip(vertices, vertices[1:]))
        walk = cls(tuple(vertices), ids, tuple(e in m for e in ids), **kw)
        walk.check(g, m)
        return walk

    @classmethod
    def from_edges(cls, g: Graph, m: BMatching, start: int, edge_ids: Sequence[int], **kw) -> "AlternatingWalk":
        verts = [start]
        for e in edge_ids:
            verts.append(g.other(int(e), verts[-1]))
        walk = cls(tuple(verts), tuple(int(e) for e in edge_ids),
                   tuple(int(e) in m for e in edge_ids), **kw)
        walk.check(g, m)
        return walk

    def __len__(self) -> int:
        return len(self.edges)

    @property
    def is_closed(self) -> bool:
        return bool(self.edges) and self.vertices[0] == self.vertices[-1]

    def repeats_edge(self) -> bool:
        return len(set(self.edges)) != len(self.edges)

    def check(self, g: Graph, m: BMatching) -> None:
        """Raise unless consecutive edges connect and membership alternates."""
        for i, e in enumerate(self.edges):
            a, b_ = g.endpoints(e)
            if {a, b_} != {self.vertices[i], self.vertices[i + 1]}:
                raise InvalidAugmentation(f"edge {e} does not join walk vertices {i}, {i + 1}")
            if (e in m) != self.matched[i]:
                raise InvalidAugmentation(f"edge {e} changed matching status since construction")
            if i and self.matched[i] == self.matched[i - 1]:
                raise InvalidAugmentation(f"walk does not alternate at position {i}")


def gain(walk: AlternatingWalk, m: BMatching, g: Graph) -> Weight:
    """Weight of the walk's unmatched edges minus that of its matched edges."""
    walk.check(g, m)
    total: Weight = 0
    for e in set(walk.edges):
        total += -g.weight(e) if e in m else g.weight(e)
    return total


def apply_walk(m: BMatching, walk: AlternatingWalk, g: Graph, b) -> BMatching:
    """Toggle every edge of ``walk``; raises if the result breaks a budget."""
    if not walk.edges:
        return m
    walk.check(g, m)
    ids = set(walk.edges)
    new = (m.edge_ids - ids) | {e for e in ids if e not in m}
    deg = list(m.degree)
    for e in ids:
        delta = -1 if e in m else 1
        deg[int(g.u[e])] += delta
        deg[int(g.v[e])] += delta
    bad = [x for x in range(g.n) if deg[x] > b[x]]
    if bad:
        raise InvalidAugmentation(f"invalid augmentation: budget exceeded at {bad}")
    return BMatching(frozenset(new), tuple(deg))


def apply_walks(m: BMatching, walks: Iterable[AlternatingWalk], g: Graph, b) -> BMatching:
    """Apply pairwise edge-disjoint walks one after another."""
    used: set[int] = set()
    for w in walks:
        ids = set(w.edges)
        if ids & used:
            raise InvalidAugmentation("walks share an edge")
        used |= ids
        m = apply_walk(m, w, g, b)
    return m


# -- text formats ---------------------------------------------------------

def parse_edge_list(text: str) -> Graph:
    lines = [ln for ln in text.splitlines()]
    if not lines:
        raise GraphError("line 1: empty edge-list file")
    head = lines[0].split()
    if len(head) != 2:
        raise GraphError("line 1: expected 'n m'")
    try:
        n, m = int(head[0]), int(head[1])
    except ValueError:
        raise GraphError("line 1: expected integers 'n m'") from None
    rows = []
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if not parts:
            continue
        if len(parts) != 3:
            raise GraphError(f"line {lineno}: expected 'u v w'")
        try:
            rows.append((int(parts[0]), int(parts[1]), Fraction(parts[2])))
        except ValueError:
            raise GraphError(f"line {lineno}: malformed record {ln!r}") from None
    if len(rows) != m:
        raise GraphError(f"header announces {m} edges, found {len(rows)}")
    try:
        return Graph(n, rows)
    except GraphError as exc:
        raise GraphError(f"edge list: {exc}") from None


def parse_budgets(text: str, n: int | None = None) -> BudgetVector:
    entries = {}
    for lineno, ln in enumerate(text.splitlines(), start=1):
        parts = ln.split()
        if not parts:
            continue
        if len(parts) != 2:
            raise GraphError(f"line {lineno}: expected 'v b_v'")
        try:
            entries[int(parts[0])] = int(parts[1])
        except ValueError:
            raise GraphError(f"line {lineno}: malformed budget {ln!r}") from None
    size = len(entries) if n is None else n
    if sorted(entries) != list(range(size)):
        raise GraphError(f"budget file must list vertices 0..{size - 1} exactly once "
                         f"(found {len(entries)} entries)")
    return BudgetVector(tuple(entries[i] for i in range(size)))


def _fmt_weight(w: Weight) -> str:
    """Exact decimal when one exists, otherwise ``p/q`` (also accepted on input)."""
    if not isinstance(w, Fraction) or w.denominator == 1:
        return str(int(w))
    d = w.denominator
    twos = fives = 0
    while d % 2 == 0:
        d //= 2
        twos += 1
    while d % 5 == 0:
        d //= 5
        fives += 1
    if d != 1:
        return f"{w.numerator}/{w.denominator}"
    digits = max(twos, fives)
    scaled = w.numerator * 10 ** digits // w.denominator
    sign = "-" if scaled < 0 else ""
    text = str(abs(scaled)).rjust(digits + 1, "0")
    return f"{sign}{text[:-digits]}.{text[-digits:]}"


def format_edge_list(g: Graph) -> str:
    out = [f"{g.n} {g.m}"]
    out += [f"{a} {b_} {_fmt_weight(w)}" for a, b_, w in g.edges()]
    return "\n".join(out) + "\n"


def format_budgets(b) -> str:
    return "".join(f"{i} {x}\n" for i, x in enumerate(b))
