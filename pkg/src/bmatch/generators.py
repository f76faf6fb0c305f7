"""Seeded graph and budget generators, plus the small named fixtures."""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .graph import BudgetVector, Graph
from .mpc import derive_rng

TAG_GEN = 11
_CHUNK = 1 << 23


def _weights(rng: np.random.Generator, m: int, wmax: int | None):
    if not wmax or wmax <= 1:
        return None
    return rng.integers(1, wmax + 1, size=m).tolist()


def gnp(n: int, p: float, seed: int = 0, wmax: int | None = None) -> Graph:
    """Erdos-Renyi graph: every pair independently with probability ``p``."""
    rng = derive_rng(seed, TAG_GEN, 1)
    us, vs = [], []
    row = 0
    while row < n - 1:
        # gather whole rows until the chunk is full
        end, count = row, 0
        while end < n - 1 and (count == 0 or count + (n - 1 - end) <= _CHUNK):
            count += n - 1 - end
            end += 1
        rows = np.arange(row, end, dtype=np.int64)
        lengths = n - 1 - rows
        hit = np.flatnonzero(rng.random(count) < p)
        starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
        r_idx = np.searchsorted(starts, hit, side="right") - 1
        u = rows[r_idx]
        v = u + 1 + (hit - starts[r_idx])
        us.append(u.astype(np.int32))
        vs.append(v.astype(np.int32))
        row = end
    u = np.concatenate(us) if us else np.zeros(0, dtype=np.int32)
    v = np.concatenate(vs) if vs else np.zeros(0, dtype=np.int32)
    return Graph.from_arrays(n, u, v, _weights(rng, u.size, wmax))


def gnp_avg_degree(n: int, avg_degree: float, seed: int = 0, wmax: int | None = None) -> Graph:
    return gnp(n, min(1.0, avg_degree / max(n - 1, 1)), seed, wmax)


def gnm(n: int, m: int, seed: int = 0, wmax: int | None = None) -> Graph:
    """Uniform graph with exactly ``m`` edges (small instances)."""
    total = n * (n - 1) // 2
    if m > total:
        raise ValueError(f"{m} edges do not fit on {n} vertices")
    rng = derive_rng(seed, TAG_GEN, 2)
    picks = np.sort(rng.choice(total, size=m, replace=False))
    iu, iv = np.triu_indices(n, 1)
    return Graph.from_arrays(n, iu[picks], iv[picks], _weights(rng, m, wmax))


def bipartite(n1: int, n2: int, p: float, seed: int = 0, wmax: int | None = None) -> Graph:
    """Random bipartite graph between ``0..n1-1`` and ``n1..n1+n2-1``."""
    rng = derive_rng(seed, TAG_GEN, 3)
    mask = rng.random((n1, n2)) < p
    a, c = np.nonzero(mask)
    return Graph.from_arrays(n1 + n2, a, c + n1, _weights(rng, a.size, wmax))


def path(n: int, weights=None) -> Graph:
    edges = [(i, i + 1, 1 if weights is None else weights[i]) for i in range(n - 1)]
    return Graph(n, edges)


def star(leaves: int) -> Graph:
    """Centre 0 joined to leaves ``1..leaves``."""
    return Graph(leaves + 1, [(0, i) for i in range(1, leaves + 1)])


def fixture(name: str) -> tuple[Graph, BudgetVector]:
    """F1: one edge.  F2: triangle.  F3: path a-b-c-d.  All with b = 1."""
    name = name.upper()
    if name == "F1":
        g = Graph(2, [(0, 1)])
    elif name == "F2":
        g = Graph(3, [(0, 1), (1, 2), (0, 2)])
    elif name == "F3":
        g = Graph(4, [(0, 1), (1, 2), (2, 3)])
    else:
        raise ValueError(f"unknown fixture {name!r}")
    return g, BudgetVector.constant(g.n, 1)


def budgets(n: int, kind: str = "constant", value: int = 1, seed: int = 0) -> BudgetVector:
    """``constant`` (all ``value``) or ``uniform`` (independent in 1..value)."""
    if kind == "constant":
        return BudgetVector.constant(n, value)
    if kind == "uniform":
        rng = derive_rng(seed, TAG_GEN, 4)
        return BudgetVector(tuple(int(x) for x in rng.integers(1, value + 1, size=n)))
    raise ValueError(f"unknown budget kind {kind!r}")


def random_small_instance(seed: int, n_range=(4, 16), max_edges: int = 24, bmax: int = 3,
                          wmax: int | None = None):
    """Small random instance that the exhaustive oracle can solve."""
    rng = derive_rng(seed, TAG_GEN, 5)
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    total = n * (n - 1) // 2
    m = int(rng.integers(1, min(max_edges, total) + 1))
    g = gnm(n, m, seed, wmax)
    b = BudgetVector(tuple(int(x) for x in rng.integers(1, bmax + 1, size=n)))
    return g, b


__all__ = ["gnp", "gnp_avg_degree", "gnm", "bipartite", "path", "star", "fixture",
           "budgets", "random_small_instance", "Fraction"]
