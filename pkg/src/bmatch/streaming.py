"""Semi-streaming (1+eps)-approximate unweighted b-matching.

Only matched edges and per-path state are resident.  Randomness attached to
unmatched edges (layer label and orientation) comes from a k-wise independent
hash of the edge's endpoints, so every pass sees the same values without
storing them.  Extending paths from one layer to the next is a single greedy
pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .graph import BMatching, Graph, GraphError, as_budgets
from .mpc import child_seed, derive_rng
from .unweighted import layers_for

TAG_STREAM = 31
CHUNK = 4096


class MemoryViolation(RuntimeError):
    """Resident state exceeded the meter's budget."""


# -- k-wise independent hashing ------------------------------------------------

def _is_prime(c: int) -> bool:
    if c < 2:
        return False
    if c % 2 == 0:
        return c == 2
    return all(c % d for d in range(3, math.isqrt(c) + 1, 2))


def next_prime(x: int) -> int:
    """Smallest prime strictly greater than ``x`` (trial division)."""
    c = x + 1
    while not _is_prime(c):
        c += 1
    return c


class KWiseHash:
    """A random polynomial of degree t-1 over the field of the smallest prime above L."""

    def __init__(self, t: int, L: int, seed: int = 0, *, prime: int | None = None,
                 coefficients=None):
        if t < 1:
            raise ValueError("independence t must be at least 1")
        if L < 1:
            raise ValueError("domain size must be positive")
        self.t, self.L = int(t), int(L)
        self.p = next_prime(self.L) if prime is None else int(prime)
        if coefficients is None:
            rng = derive_rng(seed, TAG_STREAM, self.t, self.L)
            coefficients = [int(x) for x in rng.integers(0, self.p, size=self.t)]
        if len(coefficients) != self.t:
            raise ValueError("need exactly t coefficients")
        self.coefficients = tuple(int(c) % self.p for c in coefficients)

    @property
    def seed_words(self) -> int:
        return self.t

    def __call__(self, i: int) -> int:
        if not 0 <= i < self.L:
            raise ValueError(f"point {i} outside the domain [0, {self.L})")
        acc = 0
        for c in reversed(self.coefficients):
            acc = (acc * i + c) % self.p
        return acc

    def many(self, points: np.ndarray) -> np.ndarray:
        """Vectorised evaluation; points must lie in the domain."""
        pts = np.asarray(points, dtype=np.int64)
        if pts.size and (pts.min() < 0 or pts.max() >= self.L):
            raise ValueError("point outside the hash domain")
        if self.p >= 1 << 31:
            return np.array([self(int(x)) for x in pts], dtype=object)
        acc = np.zeros(pts.shape, dtype=np.int64)
        for c in reversed(self.coefficients):
            acc = (acc * pts + c) % self.p
        return acc


def hash_independence(n: int, eps: float, k: int, multiplier: float = 2.0) -> int:
    """t = ceil(multiplier * (log2 n + log2(1/eps)) * k)."""
    return max(1, math.ceil(multiplier * (math.log2(max(n, 2)) + math.log2(1 / eps)) * k))


def edge_point(u, v, n: int, field_no: int):
    """Canonical point for an edge and a randomness field: field*n^2 + min*n + max."""
    a, c = np.minimum(u, v), np.maximum(u, v)
    return field_no * n * n + a * n + c


@dataclass
class EdgeRandomness:
    """Layer labels and orientations for unmatched edges, from two hash fields."""

    n: int
    layers: int
    hash: KWiseHash

    @classmethod
    def create(cls, n: int, layers: int, t: int, seed: int) -> "EdgeRandomness":
        return cls(n, layers, KWiseHash(t, 2 * n * n, seed))

    def many(self, u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(label in 0..layers, tail) per edge; the head is the other end."""
        lab = self.hash.many(edge_point(u, v, self.n, 0)) % (self.layers + 1)
        bit = self.hash.many(edge_point(u, v, self.n, 1)) % 2
        a, c = np.minimum(u, v), np.maximum(u, v)
        return lab.astype(np.int64), np.where(bit == 1, c, a)

    def __call__(self, u: int, v: int) -> tuple[int, int]:
        lab, tail = self.many(np.array([u]), np.array([v]))
        return int(lab[0]), int(tail[0])


def edge_randomness(u: int, v: int, source: EdgeRandomness) -> tuple[int, int]:
    """(layer label, orientation bit) of edge {u, v}; bit 1 means it points min -> max is reversed."""
    lab, tail = source(u, v)
    return lab, int(tail != min(u, v))


# -- streams and memory ---------------------------------------------------------

class EdgeStream:
    """Re-iterable source of edges in a fixed order, counting passes."""

    def __init__(self, n: int, u: np.ndarray, v: np.ndarray):
        self.n = int(n)
        self._u = np.asarray(u, dtype=np.int64)
        self._v = np.asarray(v, dtype=np.int64)
        self.passes = 0

    @classmethod
    def from_graph(cls, g: Graph, order=None) -> "EdgeStream":
        u, v = g.u.astype(np.int64), g.v.astype(np.int64)
        if order is not None:
            order = np.asarray(order)
            u, v = u[order], v[order]
        return cls(g.n, u, v)

    @classmethod
    def from_pairs(cls, n: int, pairs) -> "EdgeStream":
        arr = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
        return cls(n, arr[:, 0], arr[:, 1])

    def chunks(self, size: int = CHUNK) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        self.passes += 1
        for s in range(0, self._u.size, size):
            yield self._u[s:s + size], self._v[s:s + size]

    def idle_pass(self) -> None:
        """A pass in which no reader needs any record."""
        self.passes += 1


class FileEdgeStream(EdgeStream):
    """Edge-list file (header ``n m``, then ``u v w`` lines) read afresh on every pass."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.passes = 0
        with open(self.path) as fh:
            head = fh.readline().split()
        if len(head) != 2:
            raise GraphError("line 1: expected 'n m'")
        try:
            self.n = int(head[0])
        except ValueError:
            raise GraphError("line 1: expected integers 'n m'") from None

    def _records(self):
        with open(self.path) as fh:
            fh.readline()
            for no, line in enumerate(fh, 2):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != 3:
                    raise GraphError(f"line {no}: expected 'u v w'")
                try:
                    yield int(parts[0]), int(parts[1])
                except ValueError:
                    raise GraphError(f"line {no}: malformed record {line.strip()!r}") from None

    def chunks(self, size: int = CHUNK):
        self.passes += 1
        buf = []
        for rec in self._records():
            buf.append(rec)
            if len(buf) == size:
                arr = np.array(buf, dtype=np.int64)
                yield arr[:, 0], arr[:, 1]
                buf = []
        if buf:
            arr = np.array(buf, dtype=np.int64)
            yield arr[:, 0], arr[:, 1]


@dataclass
class MemoryMeter:
    """Words held per named item; the peak of the total is tracked."""

    budget: int | None = None
    items: dict = field(default_factory=dict)
    current: int = 0
    peak: int = 0

    def set(self, key, words: int) -> None:
        self.current += int(words) - self.items.get(key, 0)
        self.items[key] = int(words)
        self.peak = max(self.peak, self.current)
        if self.budget is not None and self.current > self.budget:
            raise MemoryViolation(f"resident {self.current} words exceeds budget {self.budget}")

    def drop(self, key) -> None:
        self.current -= self.items.pop(key, 0)


def memory_budget(total_b: int, eps: float, n: int, c: float) -> int:
    """c * (sum b + 1/eps^2) * log2 n words."""
    return math.ceil(c * (total_b + 1 / eps ** 2) * math.log2(max(n, 2)))


# -- greedy between-layer matching ----------------------------------------------

def greedy_between_layer_matching(pairs, capacity: dict, meter: MemoryMeter | None = None,
                                  key="greedy") -> list[int]:
    """Scan ``(a, c)`` pairs once; take one when both ends have capacity left."""
    cap = dict(capacity)
    taken = []
    for j, (a, c) in enumerate(pairs):
        if cap.get(a, 0) > 0 and cap.get(c, 0) > 0:
            cap[a] -= 1
            cap[c] -= 1
            taken.append(j)
            if meter is not None:
                meter.set(key, 2 * len(taken))
    return taken


# -- the streaming algorithm --------------------------------------------------

@dataclass
class StreamConfig:
    """``patience`` is off by default: a given short augmenting path survives one
    random layering only with small probability, so runs use the full budget."""

    phase_budget: int = 160
    patience: int | None = None
    copies: int | None = None  # default ceil(log2 n)
    hash_multiplier: float = 2.0
    memory_c: float = 8.0
    k_override: int | None = None


@dataclass
class StreamResult:
    pairs: list[tuple[int, int]]
    passes: int
    phases: int
    peak_words: int
    budget: int
    sizes: list[int]

    def to_bmatching(self, g: Graph, b) -> BMatching:
        return BMatching.build(g, b, [g.edge_id(a, c) for a, c in self.pairs])


class _Copy:
    """One independent run: its matching and the paths it is growing."""

    def __init__(self, n: int, budgets: np.ndarray, matched: set):
        self.n = n
        self.b = budgets
        self.matched = set(matched)
        self.deg = np.zeros(n, dtype=np.int64)
        for a, c in self.matched:
            self.deg[a] += 1
            self.deg[c] += 1

    def keys(self) -> np.ndarray:
        return np.array(sorted(a * self.n + c for a, c in self.matched), dtype=np.int64)

    def words(self) -> int:
        return 4 * len(self.matched) + self.n

    def start_layering(self, layers: int, rng: np.random.Generator, rand: EdgeRandomness):
        """Matched edges become arcs, free copies go to an end, paths start in L_0."""
        n = self.n
        self.layers = layers
        self.rand = rand
        used = np.zeros(n, dtype=np.int64)
        self.tails = [dict() for _ in range(layers + 2)]  # layer -> vertex -> [(copy, arc)]
        self.arc_head: dict = {}
        for a, c in sorted(self.matched):
            used[a] += 1
            used[c] += 1
            p, q = (a, int(used[a])), (c, int(used[c]))
            lay = int(rng.integers(1, layers + 1)) if layers else 0
            tail, head = (q, p) if rng.integers(0, 2) else (p, q)
            if layers:
                self.tails[lay].setdefault(tail[0], []).append((tail, (a, c), head))
        self.paths: dict[int, list] = {}
        self.pending: dict[int, list[int]] = {}  # vertex -> path ids ending there
        pid = 0
        for v in range(n):
            for j in range(int(self.deg[v]) + 1, int(self.b[v]) + 1):
                side = int(rng.integers(0, 2))
                if side == 0:
                    self.paths[pid] = [(v, j)]
                    self.pending.setdefault(v, []).append(pid)
                    pid += 1
                else:
                    self.tails[layers + 1].setdefault(v, []).append(((v, j), None, None))
        self.done: list[int] = []

    def state_words(self) -> int:
        path_words = sum(2 * len(p) for p in self.paths.values())
        tail_words = sum(3 * len(x) for lay in self.tails for x in lay.values())
        return self.words() + path_words + tail_words + self.rand.hash.seed_words

    def begin_pass(self, j: int) -> bool:
        """Prepare extension of paths ending at layer ``j``; False if nothing can move."""
        n = self.n
        self.j = j
        self.cap = np.zeros(n, dtype=np.int64)
        for v, ids in self.pending.items():
            self.cap[v] = len(ids)
        self.avail = np.zeros(n, dtype=np.int64)
        for v, lst in self.tails[j + 1].items():
            self.avail[v] = len(lst)
        self.moved: dict[int, list[int]] = {}
        self.key_sorted = self.keys()
        self.active = bool(self.cap.any() and self.avail.any())
        return self.active

    def feed(self, u: np.ndarray, v: np.ndarray) -> None:
        """Greedy over one chunk: take an edge if its tail and head both have room."""
        if not self.active:
            return
        n, cap, avail, keys = self.n, self.cap, self.avail, self.key_sorted
        a, c = np.minimum(u, v), np.maximum(u, v)
        near = ((cap[a] > 0) & (avail[c] > 0)) | ((cap[c] > 0) & (avail[a] > 0))
        if not near.any():
            return
        a, c = a[near], c[near]
        if keys.size:
            k = a * n + c
            pos = np.minimum(np.searchsorted(keys, k), keys.size - 1)
            free = keys[pos] != k
            a, c = a[free], c[free]
        lab, tail = self.rand.many(a, c)
        head = np.where(tail == a, c, a)
        ok = (lab == self.j) & (cap[tail] > 0) & (avail[head] > 0)
        for x, y in zip(tail[ok].tolist(), head[ok].tolist()):
            if cap[x] > 0 and avail[y] > 0:
                cap[x] -= 1
                avail[y] -= 1
                pid = self.pending[x].pop()
                tail_copy, arc, head_copy = self.tails[self.j + 1][y].pop()
                path = self.paths[pid]
                path.append(((x, y), tail_copy))
                if arc is not None:
                    path.append((arc, head_copy))
                    self.moved.setdefault(head_copy[0], []).append(pid)
                else:
                    self.done.append(pid)
        self.active = bool(cap.any() and avail.any())

    def end_pass(self) -> None:
        """Paths that did not move are dropped; there is no backtracking."""
        for ids in self.pending.values():
            for pid in ids:
                del self.paths[pid]
        self.pending = self.moved

    def finish_layering(self) -> int:
        """Apply every completed path; returns how many were applied."""
        for pid in self.done:
            path = self.paths[pid]
            start = path[0][0]
            end = path[-1][1][0]
            for step in path[1:]:
                a, c = sorted(step[0])
                if (a, c) in self.matched:
                    self.matched.remove((a, c))
                else:
                    self.matched.add((a, c))
            self.deg[start] += 1
            self.deg[end] += 1
        count = len(self.done)
        if (self.deg > self.b).any():
            raise GraphError("streaming augmentation broke a budget")
        self.paths, self.pending, self.tails, self.done = {}, {}, [], []
        return count


def greedy_maximal(stream: EdgeStream, budgets: np.ndarray, meter: MemoryMeter) -> set:
    """One pass: take every edge whose ends both have room left."""
    deg = np.zeros(stream.n, dtype=np.int64)
    matched: set = set()
    for u, v in stream.chunks():
        meter.set("buffer", 2 * len(u))
        for a, c in zip(u.tolist(), v.tolist()):
            if a != c and deg[a] < budgets[a] and deg[c] < budgets[c]:
                deg[a] += 1
                deg[c] += 1
                matched.add((min(a, c), max(a, c)))
        meter.set("greedy", 2 * len(matched) + stream.n)
    return matched


def streaming_unweighted(stream: EdgeStream, b, eps: float, *, seed: int = 0,
                         config: StreamConfig | None = None) -> StreamResult:
    """Greedy first pass, then phases of layered path growth, ``copies`` runs in parallel.

    In phase p and for each layer count l = 0..k//2, every copy draws a fresh
    layering and makes exactly l+1 passes, one per layer.  Passes are shared by
    all copies, so the pass count is 1 + phases * sum(l + 1).
    """
    cfg = config or StreamConfig()
    if eps <= 0:
        raise ValueError("eps must be positive")
    n = stream.n
    budgets = as_budgets(b, n).array()
    k = layers_for(eps, cfg.k_override)
    copies = cfg.copies or max(1, math.ceil(math.log2(max(n, 2))))
    t = hash_independence(n, eps, k, cfg.hash_multiplier)
    budget = memory_budget(int(budgets.sum()), eps, n, cfg.memory_c)
    meter = MemoryMeter(budget)
    base = greedy_maximal(stream, budgets, meter)
    meter.drop("greedy")
    meter.drop("buffer")
    runs = [_Copy(n, budgets, base) for _ in range(copies)]
    for r, run in enumerate(runs):
        meter.set(("copy", r), run.words())
    sizes = [len(base)]
    stall = 0
    phases = 0
    for phase in range(1, cfg.phase_budget + 1):
        phases = phase
        before = max(len(run.matched) for run in runs)
        for ell in range(k // 2 + 1):
            for r, run in enumerate(runs):
                rand = EdgeRandomness.create(n, ell, t, child_seed(seed, r, phase, ell))
                run.start_layering(ell, derive_rng(seed, TAG_STREAM, r, phase, ell), rand)
                meter.set(("copy", r), run.state_words())
            for j in range(ell + 1):
                busy = [run.begin_pass(j) for run in runs]
                if any(busy):
                    for u, v in stream.chunks():
                        meter.set("buffer", 2 * len(u))
                        for run in runs:
                            run.feed(u, v)
                    meter.drop("buffer")
                else:
                    stream.idle_pass()
                for r, run in enumerate(runs):
                    run.end_pass()
                    meter.set(("copy", r), run.state_words())
            for r, run in enumerate(runs):
                run.finish_layering()
                meter.set(("copy", r), run.words())
        best_now = max(len(run.matched) for run in runs)
        sizes.append(best_now)
        stall = stall + 1 if best_now == before else 0
        if cfg.patience is not None and stall >= cfg.patience:
            break
    best = max(runs, key=lambda run: len(run.matched))
    return StreamResult(sorted(best.matched), stream.passes, phases, meter.peak, budget, sizes)
