"""Exact ground truth for small instances, plus independent re-checkers."""

from __future__ import annotations

from fractions import Fraction
from typing import Sequence

from .graph import BMatching, Graph, as_budgets

MAX_ORACLE_EDGES = 24


class OracleRefused(ValueError):
    """Instance too large for exhaustive search."""


def _search(ends: list[tuple[int, int]], weights: list, cap: list[int]) -> tuple:
    """Branch and bound over edges in the given order; returns (value, chosen positions)."""
    m = len(ends)
    # suffix sums of the weights bound what the undecided edges can add
    suffix = [0] * (m + 1)
    for i in range(m - 1, -1, -1):
        suffix[i] = suffix[i + 1] + weights[i]
    best_val = [0]
    best_set: list[list[int]] = [[]]
    chosen: list[int] = []

    def rec(i: int, val) -> None:
        if val > best_val[0]:
            best_val[0] = val
            best_set[0] = list(chosen)
        if i == m or val + suffix[i] <= best_val[0]:
            return
        # a sharper bound: only edges whose ends both have room can still be added
        room = 0
        for j in range(i, m):
            a, c = ends[j]
            if cap[a] and cap[c]:
                room += weights[j]
        if val + room <= best_val[0]:
            return
        a, c = ends[i]
        if cap[a] and cap[c]:
            cap[a] -= 1
            cap[c] -= 1
            chosen.append(i)
            rec(i + 1, val + weights[i])
            chosen.pop()
            cap[a] += 1
            cap[c] += 1
        rec(i + 1, val)

    rec(0, 0)
    return best_val[0], best_set[0]


def exact_max_bmatching(g: Graph, b, weighted: bool = True, *, order: str = "heavy-first",
                        max_edges: int = MAX_ORACLE_EDGES) -> tuple:
    """Optimum (weighted or cardinality) b-matching value and a witness."""
    if g.m > max_edges:
        raise OracleRefused(f"oracle refuses m={g.m} > {max_edges}")
    budgets = as_budgets(b, g.n)
    w = [g.weight(e) if weighted else 1 for e in range(g.m)]
    if order == "heavy-first":
        perm = sorted(range(g.m), key=lambda e: (-w[e], e))
    elif order == "light-first":
        perm = sorted(range(g.m), key=lambda e: (w[e], -e))
    elif order == "index":
        perm = list(range(g.m))
    else:
        raise ValueError(f"unknown search order {order!r}")
    ends = [g.endpoints(e) for e in perm]
    val, pos = _search(ends, [w[e] for e in perm], list(budgets))
    witness = BMatching.build(g, budgets, [perm[i] for i in pos])
    return val, witness


def exact_max_matching_layered(left: Sequence[int], right: Sequence[int],
                               edges: Sequence[tuple[int, int]], *, order: str = "heavy-first",
                               max_edges: int = MAX_ORACLE_EDGES) -> int:
    """Maximum b'-matching between two compressed layers.

    ``left``/``right`` are multiplicities; ``edges`` pairs a left index with a
    right index.
    """
    nl = len(left)
    g = Graph(nl + len(right), [(a, nl + c) for a, c in edges])
    val, _ = exact_max_bmatching(g, list(left) + list(right), weighted=False, order=order,
                                 max_edges=max_edges)
    return val


def recheck_tightness(g: Graph, b: Sequence, r: Sequence | None, x: Sequence, alpha) -> bool:
    """True iff no edge is loose; plain Fraction arithmetic, written independently."""
    alpha = Fraction(alpha)
    sums = [Fraction(0)] * g.n
    for e in range(g.m):
        a, c = g.endpoints(e)
        sums[a] += Fraction(x[e])
        sums[c] += Fraction(x[e])
    for e in range(g.m):
        a, c = g.endpoints(e)
        cap = Fraction(1) if r is None else Fraction(r[e])
        if Fraction(x[e]) < alpha * cap and sums[a] < alpha * Fraction(b[a]) \
                and sums[c] < alpha * Fraction(b[c]):
            return False
    return True
