"""In-process simulation of the MPC model.

Machines are state partitions; they only talk at round boundaries.  Each
machine has a word budget ``S`` for resident state and for the messages it
sends or receives in one round.  The O(1)-round primitives (sort, prefix sums,
search-tree lookups) are computed directly and charged a configurable number
of rounds.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterable, Protocol, Sequence

import numpy as np

# stream tags for counter-based RNG derivation
TAG_PARTITION = 1
TAG_THRESHOLD = 2
TAG_ROUNDING = 3
TAG_MACHINE = 4
TAG_LAYER = 5
TAG_RESOLVE = 6

ABSENT = object()


class ModelViolation(RuntimeError):
    """A machine exceeded its local memory or message budget."""


def derive_rng(*key: int) -> np.random.Generator:
    """Generator for a counter-style key such as (seed, machine, round, tag)."""
    return np.random.default_rng(np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in key]))


def child_seed(*key: int) -> int:
    """A 63-bit seed derived from ``key``; used to hand seeds to sub-runs."""
    ss = np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in key])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def local_memory_words(n: int, factor: float = 1.0) -> int:
    """Default near-linear budget ``factor * n * log2(n)^2`` (at least 64 words)."""
    lg = math.log2(max(n, 2))
    return max(64, math.ceil(factor * n * lg * lg))


@dataclass
class RoundLog:
    rounds_executed: int = 0
    iterations: int = 0
    peak_sent: list[int] = field(default_factory=list)
    peak_received: list[int] = field(default_factory=list)
    peak_resident: list[int] = field(default_factory=list)
    events: list[tuple[str, int]] = field(default_factory=list)

    def _grow(self, machines: int) -> None:
        for arr in (self.peak_sent, self.peak_received, self.peak_resident):
            if len(arr) < machines:
                arr.extend([0] * (machines - len(arr)))

    def max_resident(self) -> int:
        return max(self.peak_resident, default=0)

    def max_traffic(self) -> int:
        return max(self.peak_sent + self.peak_received, default=0)

    def to_dict(self) -> dict:
        return {
            "rounds": self.rounds_executed,
            "iterations": self.iterations,
            "peak_resident_words": self.max_resident(),
            "peak_message_words": self.max_traffic(),
        }


class MachineCluster:
    """Machines with a shared per-machine word budget and a round log."""

    def __init__(self, machine_count: int, local_memory_words: int, seed: int = 0, *,
                 sort_round_cost: int = 1, prefix_round_cost: int = 1,
                 search_round_cost: int = 1, threads: int = 1):
        if machine_count < 1 or local_memory_words < 1:
            raise ValueError("machine count and local memory must be positive")
        self.machine_count = int(machine_count)
        self.local_memory_words = int(local_memory_words)
        self.seed = int(seed)
        self.sort_round_cost = sort_round_cost
        self.prefix_round_cost = prefix_round_cost
        self.search_round_cost = search_round_cost
        self.threads = max(1, int(threads))
        self.log = RoundLog()
        self.log._grow(self.machine_count)

    @classmethod
    def for_input(cls, n: int, m: int, seed: int = 0, *, local_mem_factor: float = 1.0,
                  machines: int | None = None, **kw) -> "MachineCluster":
        """Cluster whose total memory covers twice the input size."""
        s = local_memory_words(n, local_mem_factor)
        need = max(1, math.ceil(2 * (n + m) / s))
        return cls(max(need, machines or 1), s, seed, **kw)

    @property
    def global_memory(self) -> int:
        return self.machine_count * self.local_memory_words

    def fork(self, seed: int) -> "MachineCluster":
        """Fresh cluster with identical parameters and a new seed and log."""
        return MachineCluster(self.machine_count, self.local_memory_words, seed,
                              sort_round_cost=self.sort_round_cost,
                              prefix_round_cost=self.prefix_round_cost,
                              search_round_cost=self.search_round_cost,
                              threads=self.threads)

    def absorb(self, other: "MachineCluster") -> None:
        """Fold another cluster's log into ours (sub-runs on the same hardware)."""
        self.log.rounds_executed += other.log.rounds_executed
        self.log._grow(max(self.machine_count, other.machine_count))
        for mine, theirs in ((self.log.peak_sent, other.log.peak_sent),
                             (self.log.peak_received, other.log.peak_received),
                             (self.log.peak_resident, other.log.peak_resident)):
            for i, val in enumerate(theirs):
                mine[i] = max(mine[i], val)

    def rng(self, *key: int) -> np.random.Generator:
        return derive_rng(self.seed, *key)

    # -- accounting ------------------------------------------------------
    def charge_rounds(self, count: int, label: str = "") -> None:
        self.log.rounds_executed += int(count)
        if label:
            self.log.events.append((label, int(count)))

    def _check(self, words: int, what: str, machine: int) -> None:
        if words > self.local_memory_words:
            raise ModelViolation(f"machine {machine}: {what} of {words} words exceeds "
                                 f"local memory {self.local_memory_words}")

    def charge_resident(self, machine: int, words: int) -> None:
        self._check(words, "resident state", machine)
        self.log.peak_resident[machine] = max(self.log.peak_resident[machine], int(words))

    def charge_traffic(self, machine: int, sent: int, received: int) -> None:
        self._check(sent, "outgoing messages", machine)
        self._check(received, "incoming messages", machine)
        self.log.peak_sent[machine] = max(self.log.peak_sent[machine], int(sent))
        self.log.peak_received[machine] = max(self.log.peak_received[machine], int(received))

    def charge_spread(self, words: int, label: str = "") -> None:
        """Charge ``words`` of state spread evenly over all machines."""
        per = math.ceil(words / self.machine_count)
        for i in range(self.machine_count):
            self.charge_resident(i, per)

    def check_record(self, words: int) -> None:
        if words > self.local_memory_words:
            raise ModelViolation(f"record of {words} words exceeds local memory "
                                 f"{self.local_memory_words}")

    # -- primitives ------------------------------------------------------
    def distributed_sort(self, records: Sequence, key: Callable[[Any], Any] | None = None,
                         record_words: int = 1) -> list:
        """Stable sort; charged ``sort_round_cost`` rounds."""
        self.check_record(record_words)
        out = sorted(records, key=key) if key is not None else sorted(records)
        self.charge_spread(len(out) * record_words)
        self.charge_rounds(self.sort_round_cost, "sort")
        return out

    def sort_array(self, keys: np.ndarray) -> np.ndarray:
        """Stable argsort of an array of keys; charged like ``distributed_sort``."""
        self.charge_spread(int(keys.size))
        self.charge_rounds(self.sort_round_cost, "sort")
        return np.argsort(keys, kind="stable")

    def prefix_sum(self, values: Sequence[int] | np.ndarray) -> np.ndarray:
        """Exclusive prefix sums; charged ``prefix_round_cost`` rounds."""
        arr = np.asarray(values, dtype=np.int64)
        out = np.zeros(arr.size, dtype=np.int64)
        if arr.size > 1:
            np.cumsum(arr[:-1], out=out[1:])
        self.charge_spread(int(arr.size))
        self.charge_rounds(self.prefix_round_cost, "prefix")
        return out

    def search_tree_broadcast(self, specials: Iterable[tuple[Hashable, Any]],
                              queries: Iterable[Hashable]) -> list:
        """Answer each query key with its special record's payload, else ``ABSENT``."""
        table: dict = {}
        for k, payload in specials:
            if k in table:
                raise ValueError(f"duplicate special key {k!r}")
            table[k] = payload
        out = [table.get(q, ABSENT) for q in queries]
        self.charge_spread(len(table) + len(out))
        self.charge_rounds(self.search_round_cost, "search")
        return out


@dataclass
class VertexPartition:
    groups: int
    assignment: np.ndarray  # group index per vertex
    local_edges: list[np.ndarray]  # edge ids with both endpoints in the group
    group_vertices: list[np.ndarray]

    def machine_of_group(self, g: int, machine_count: int) -> int:
        return g % machine_count

    def local_mask(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.assignment[u] == self.assignment[v]


def partition_vertices(g, groups: int, cluster: MachineCluster, rng: np.random.Generator,
                       edge_mask: np.ndarray | None = None) -> VertexPartition:
    """Assign every vertex to one of ``groups`` uniformly and materialise G[V_i].

    Group ``i`` lives on machine ``i mod machine_count``; its vertices and
    induced edges are charged to that machine.
    """
    if groups < 1:
        raise ValueError("need at least one group")
    assignment = rng.integers(0, groups, size=g.n).astype(np.int32) if groups > 1 \
        else np.zeros(g.n, dtype=np.int32)
    u, v = g.u, g.v
    local = assignment[u] == assignment[v]
    if edge_mask is not None:
        local &= edge_mask
    ids = np.flatnonzero(local)
    grp = assignment[u[ids]]
    order = np.argsort(grp, kind="stable")
    ids, grp = ids[order], grp[order]
    bounds = np.searchsorted(grp, np.arange(groups + 1))
    local_edges = [ids[bounds[i]:bounds[i + 1]] for i in range(groups)]
    vorder = np.argsort(assignment, kind="stable")
    vb = np.searchsorted(assignment[vorder], np.arange(groups + 1))
    group_vertices = [vorder[vb[i]:vb[i + 1]] for i in range(groups)]
    load = np.zeros(cluster.machine_count, dtype=np.int64)
    for i in range(groups):
        load[i % cluster.machine_count] += group_vertices[i].size + 2 * local_edges[i].size
    for mach in range(cluster.machine_count):
        cluster.charge_resident(mach, int(load[mach]))
    return VertexPartition(groups, assignment, local_edges, group_vertices)


class MachineProgram(Protocol):
    def setup(self, machine: int, rng: np.random.Generator) -> Any: ...

    def step(self, machine: int, round_no: int, state: Any, inbox: list,
             rng: np.random.Generator) -> tuple[Any, dict[int, list], bool]: ...


def _words(msgs: list) -> int:
    total = 0
    for msg in msgs:
        total += int(msg.size) if isinstance(msg, np.ndarray) else 1
    return total


def run_machine_rounds(cluster: MachineCluster, program: MachineProgram,
                       max_rounds: int = 1_000) -> list:
    """Run a synchronous program; returns the final per-machine states.

    ``step`` returns ``(state, outbox, finished)`` where ``outbox`` maps
    destination machine to a list of messages (arrays count their size in
    words, anything else one word).  A round is counted whenever a step
    exchanges messages; the run ends when every machine is finished and no
    message is in flight.  Host threads only change scheduling, never results.
    """
    mc = cluster.machine_count
    states = [program.setup(i, cluster.rng(i, 0, TAG_MACHINE)) for i in range(mc)]
    inboxes: list[list] = [[] for _ in range(mc)]
    done = [False] * mc
    pool = ThreadPoolExecutor(cluster.threads) if cluster.threads > 1 else None
    try:
        for rnd in range(1, max_rounds + 1):
            def work(i: int):
                return program.step(i, rnd, states[i], inboxes[i], cluster.rng(i, rnd, TAG_MACHINE))
            results = list(pool.map(work, range(mc))) if pool else [work(i) for i in range(mc)]
            new_inbox: list[list] = [[] for _ in range(mc)]
            any_msg = False
            sent = [0] * mc
            for i, (state, outbox, finished) in enumerate(results):
                states[i] = state
                done[i] = finished
                for dest in sorted(outbox):
                    msgs = outbox[dest]
                    if not msgs:
                        continue
                    any_msg = True
                    sent[i] += _words(msgs)
                    new_inbox[dest].extend(msgs)
            if any_msg:
                for i in range(mc):
                    cluster.charge_traffic(i, sent[i], _words(new_inbox[i]))
                cluster.charge_rounds(1)
            inboxes = new_inbox
            if all(done) and not any_msg:
                return states
        raise RuntimeError(f"program did not finish within {max_rounds} rounds")
    finally:
        if pool:
            pool.shutdown()
