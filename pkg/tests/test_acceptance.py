"""Acceptance criteria 1-12.

Each test records a verdict; the terminal summary prints one PASS/FAIL line per
criterion.  Thresholds marked "pilot" were frozen after a seeded pilot run and
are listed with their tolerances next to the assertion.
"""

import itertools
import math
import statistics
import time
from fractions import Fraction

import numpy as np
import pytest

from bmatch import generators
from bmatch.cli import main
from bmatch.fractional import (LPInstance, NonConvergence, ThresholdSchedule,
                               constant_approx_bmatching, dual_certificate, full_mpc, loose_sets,
                               one_round_mpc, round_to_integral, sequential, to_grid,
                               vertex_sums)
from bmatch.graph import apply_walks, validate_bmatching
from bmatch.mpc import MachineCluster, derive_rng
from bmatch.oracle import exact_max_bmatching, exact_max_matching_layered, recheck_tightness
from bmatch.streaming import (EdgeRandomness, EdgeStream, KWiseHash, StreamConfig,
                              greedy_between_layer_matching, streaming_unweighted)
from bmatch.unweighted import unweighted_one_plus_eps
from bmatch.weighted import (class_period, extract_alternations,
                             resolve_between_layered, resolve_within_layered,
                             weighted_one_plus_eps)
from conftest import binomial_ok
from layered_fixtures import (check_extraction_properties, random_layered_path,
                              two_paths_sharing_a_copy)

ALPHA = Fraction(1, 20)
HALF = Fraction(1, 2)

VERDICTS: dict[int, list[tuple[str, bool, str]]] = {}


def verdict(criterion: int, part: str, ok: bool, detail: str) -> bool:
    VERDICTS.setdefault(criterion, []).append((part, bool(ok), detail))
    print(f"criterion {criterion} [{part}]: {'PASS' if ok else 'FAIL'} ({detail})")
    return ok


def summary_lines() -> list[str]:
    lines = []
    for c in sorted(VERDICTS):
        parts = VERDICTS[c]
        status = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{p}: {d}" + ("" if ok else " [FAIL]") for p, ok, d in parts)
        lines.append(f"criterion {c:2d}: {status}  {detail}")
    return lines


def unit(g, b=None):
    return LPInstance.unit_caps(g, [1] * g.n if b is None else b)


# -- 1 to 3: fractional LP ----------------------------------------------------------

@pytest.fixture(scope="module")
def tight_runs():
    """50 seeded full_mpc runs on gnp(2000, avg degree 50)."""
    start = time.perf_counter()
    runs, failures = [], 0
    for seed in range(50):
        g = generators.gnp_avg_degree(2000, 50, seed)
        inst = unit(g)
        try:
            sol = full_mpc(inst, MachineCluster.for_input(g.n, g.m, seed))
        except NonConvergence:
            failures += 1
            continue
        runs.append((inst, sol))
    return runs, failures, time.perf_counter() - start


def test_criterion_01_tightness(tight_runs):
    runs, failures, elapsed = tight_runs
    tight = sum(loose_sets(inst, sol.x, ALPHA).tight
                and recheck_tightness(inst.graph, [int(v) for v in inst.b // 10**12], None,
                                      sol.values(), ALPHA)
                and sol.is_feasible(inst) for inst, sol in runs)
    ok = tight == len(runs) and failures < 5 and elapsed < 120
    verdict(1, "tightness", ok, f"{tight}/{len(runs)} tight and feasible, "
                                f"{failures}/50 non-convergent, {elapsed:.1f}s")
    assert ok


def decay_instances():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        kind = seed % 4
        if kind == 0:
            g = generators.gnp(int(rng.integers(50, 400)), float(rng.uniform(0.01, 0.3)), seed)
        elif kind == 1:
            g = generators.bipartite(int(rng.integers(20, 200)), int(rng.integers(20, 200)),
                                     float(rng.uniform(0.02, 0.3)), seed)
        elif kind == 2:
            g = generators.star(int(rng.integers(5, 500)))
        else:
            g = generators.path(int(rng.integers(5, 500)))
        b = [int(x) for x in rng.integers(1, 5, size=g.n)]
        yield seed, g, b


def test_criterion_02_decay_law():
    worst, checked = 0.0, 0
    for seed, g, b in decay_instances():
        x = sequential(unit(g, b), 12, seed=seed).x
        loose = len(loose_sets(unit(g, b), x, Fraction(1, 5)).loose_edges())
        assert loose * 2 ** 12 <= 5 * g.m, f"seed {seed}: {loose} loose of {g.m}"
        worst = max(worst, loose / max(g.m, 1))
        checked += 1
    verdict(2, "decay", True, f"{checked} graphs, max loose fraction {worst:.4f} "
                              f"<= 5/4096 exactly")


def test_criterion_03_dual_certificate(tight_runs):
    runs, _, _ = tight_runs
    certified = 0
    for inst, sol in runs:
        cert = dual_certificate(inst, sol.x, ALPHA)
        g = inst.graph
        assert all(cert.y[g.u[e]] or cert.y[g.v[e]] or cert.z[e] for e in range(g.m))
        assert cert.primal >= ALPHA / 3 * cert.value
        certified += 1
    for seed in range(50):
        g, b = generators.random_small_instance(seed)
        inst = unit(g, b)
        sol = full_mpc(inst, MachineCluster.for_input(g.n, g.m, seed))
        cert = dual_certificate(inst, sol.x, ALPHA)
        opt, _ = exact_max_bmatching(g, b, weighted=False)
        assert cert.primal >= ALPHA / 3 * cert.value and opt <= cert.value
        certified += 1
    verdict(3, "certificate", True, f"{certified} tight outputs certified, exact arithmetic")


# -- 4 and 5: round compression ----------------------------------------------------------

def test_criterion_04_round_compression():
    a, b = 1, 1  # pilot: every run took one iteration
    medians, over_budget = {}, 0
    for dbar in (16, 256, 4096):
        iters = []
        for seed in range(3 if dbar < 4096 else 1):
            g = generators.gnp_avg_degree(10**4, dbar, seed)
            cl = MachineCluster.for_input(g.n, g.m, seed)
            sol = full_mpc(unit(g), cl)
            iters.append(sol.iterations)
            over_budget += cl.log.max_resident() > cl.local_memory_words
            del g
        medians[dbar] = statistics.median(iters)
    lls = {d: math.log2(math.log2(d)) for d in medians}
    order = sorted(medians)
    monotone = all(medians[x] <= medians[y] for x, y in zip(order, order[1:]))
    bounded = all(medians[d] <= a * lls[d] + b for d in medians)
    ok = monotone and bounded and over_budget == 0
    verdict(4, "compression", ok, f"median iterations {medians}, bound loglog+1, "
                                  f"{over_budget} runs over memory")
    assert ok


def test_criterion_05_coupling():
    bound = 0.05  # pilot: max 0.0198 over 30 seeds at T=5; N^-0.1 is about 0.80 at N=9
    fractions = []
    for seed in range(30):
        g = generators.gnp_avg_degree(5000, 70, seed)
        inst = unit(g)
        sched = ThresholdSchedule(seed)
        xs = sequential(inst, 5, sched, early_exit=False).x
        xt = one_round_mpc(inst, MachineCluster.for_input(g.n, g.m, seed), sched,
                           rounds=5).unfiltered
        diff = np.abs(vertex_sums(g, xs) - vertex_sums(g, xt))
        fractions.append(float((10 * diff > inst.b).mean()))
    ok = max(fractions) <= bound
    verdict(5, "coupling", ok, f"max fraction {max(fractions):.4f} <= {bound}, "
                               f"mean {np.mean(fractions):.4f}")
    assert ok


# -- 6: constant approximation ----------------------------------------------------------------

@pytest.fixture(scope="module")
def const_ratios():
    ratios = []
    for seed in range(200):
        g, b = generators.random_small_instance(seed)
        opt, _ = exact_max_bmatching(g, b, weighted=False)
        ratios.append(Fraction(len(constant_approx_bmatching(g, b, seed=seed)), opt))
    return ratios


def test_criterion_06_median_ratio_and_rounding(const_ratios):
    med = statistics.median(const_ratios)
    g, _ = generators.fixture("F2")
    x = to_grid([Fraction(2, 5)] * 3)
    rng = derive_rng(2024)
    trials = 10**5
    hits = sum(len(round_to_integral(unit(g), x, rng)) for _ in range(trials))
    ok_med, ok_round = med >= Fraction(1, 6), binomial_ok(hits, trials, 0.243)
    verdict(6, "median ratio", ok_med, f"median {float(med):.3f} >= 1/6")
    verdict(6, "F2 rounding", ok_round, f"{hits / trials:.4f} vs 0.243 within 3 sigma")
    assert ok_med and ok_round


@pytest.mark.xfail(strict=True, reason="each repetition can round to the empty matching; "
                                       "with R = ceil(log n) some runs return nothing")
def test_criterion_06_every_run_above_one_percent(const_ratios):
    above = sum(r >= Fraction(1, 100) for r in const_ratios)
    ok = above == len(const_ratios)
    verdict(6, "all >= OPT/100", ok, f"{above}/{len(const_ratios)} runs")
    assert ok


# -- 7: unweighted ---------------------------------------------------------------------------

def test_criterion_07_unweighted():
    start = time.perf_counter()
    good = invalid = bad_runs = 0
    for seed in range(100):
        g, b = generators.random_small_instance(seed, n_range=(4, 16), bmax=3)
        sizes = []

        def watch(m):
            nonlocal invalid
            invalid += bool(validate_bmatching(g, b, m.edge_ids))
            sizes.append(len(m))

        res = unweighted_one_plus_eps(g, b, 0.5, seed=seed, trace=watch, details=True)
        drops = sum(y < x for x, y in zip(sizes, sizes[1:]))
        reps = max(1, math.ceil(math.log2(g.n)))
        bad_runs += res.sizes != sorted(res.sizes) or drops > reps - 1
        opt, _ = exact_max_bmatching(g, b, weighted=False)
        good += 3 * len(res.matching) >= 2 * opt
    elapsed = time.perf_counter() - start
    ok = good >= 95 and invalid == 0 and bad_runs == 0 and elapsed < 600
    verdict(7, "unweighted", ok, f"{good}/100 at OPT/1.5, {invalid} invalid intermediates, "
                                 f"{bad_runs} non-monotone, {elapsed:.0f}s")
    assert ok


# -- 8 and 9: extraction and conflict resolution -----------------------------------------------

def test_criterion_08_extraction():
    rng = np.random.default_rng(8)
    done = violations = 0
    start = time.perf_counter()
    while done < 10**5:
        fx = random_layered_path(rng)
        if fx is None:
            continue
        g, _, m, lay, path = fx
        try:
            check_extraction_properties(g, m, lay, path, extract_alternations(path, g, m, lay))
        except AssertionError:
            violations += 1
        done += 1
    ok = violations == 0
    verdict(8, "extraction", ok, f"{violations} violations in {done} fixtures, "
                                 f"{time.perf_counter() - start:.0f}s")
    assert ok


def test_criterion_09_resolution():
    g, m, lay, paths = two_paths_sharing_a_copy()

    class Coins:
        def __init__(self, coins):
            self.coins = list(coins)

        def random(self):
            return self.coins.pop(0)

    outcomes = 0
    for order in itertools.permutations(paths):
        for coins in itertools.product([0.0, 0.99], repeat=2):
            out = resolve_within_layered(list(order), 1, Coins(coins), g, m, lay)
            kept = [c for a in out for c in a.footprint]
            assert len(kept) == len(set(kept))
            outcomes += 1
    t = class_period(HALF)
    # exponents 3 and 3 + t share a residue, so the heavier one wins the conflict
    light, heavy = [resolve_within_layered([p], 1, Coins([0.0]), g, m, lay, exponent=i)
                    for p, i in zip(paths, (3, 3 + t))]
    j, kept = resolve_between_layered({3: light, 3 + t: heavy}, HALF)
    assert t == 229 and j == 3 and kept == heavy

    rng = np.random.default_rng(9)
    applied = 0
    while applied < 2000:
        fx = random_layered_path(rng)
        if fx is None:
            continue
        fg, fb, fm, flay, fpath = fx
        walks = resolve_within_layered([fpath], 1, derive_rng(applied), fg, fm, flay,
                                       keep_probability=1)
        new = apply_walks(fm, [a.walk for a in walks], fg, fb)
        assert not validate_bmatching(fg, fb, new.edge_ids)
        assert new.weight(fg) - fm.weight(fg) == sum(a.gain for a in walks)
        applied += 1
    verdict(9, "resolution", True, f"{outcomes} coin outcomes disjoint, t={t}, "
                                   f"{applied} bundles applied exactly")


# -- 10: weighted ----------------------------------------------------------------------------

def test_criterion_10_weighted():
    start = time.perf_counter()
    good = bad_steps = 0
    for seed in range(60):
        g, b = generators.random_small_instance(seed, n_range=(4, 12), bmax=2, wmax=16)
        seen = []

        def watch(m):
            nonlocal bad_steps
            bad_steps += bool(validate_bmatching(g, b, m.edge_ids))
            seen.append(m.weight(g))

        res = weighted_one_plus_eps(g, b, HALF, seed=seed, trace=watch, details=True)
        deltas = [y - x for x, y in zip(res.weights, res.weights[1:])]
        bad_steps += deltas != [Fraction(r["gain"]) for r in res.trace]
        bad_steps += any(d < 0 for d in deltas)
        opt, _ = exact_max_bmatching(g, b, weighted=True)
        good += 3 * res.matching.weight(g) >= 2 * opt
    elapsed = time.perf_counter() - start
    ok = good >= 54 and bad_steps == 0 and elapsed < 1200
    verdict(10, "weighted", ok, f"{good}/60 at OPT/1.5, {bad_steps} bad steps, {elapsed:.0f}s")
    assert ok


# -- 11: streaming --------------------------------------------------------------------------

def test_criterion_11_streaming():
    n, runs = 10**4, []
    for seed in range(3):
        g = generators.gnp_avg_degree(n, 200, seed)  # m close to 10^6
        rng = np.random.default_rng(seed)
        b = np.ones(n, dtype=np.int64)
        b[rng.choice(n, n // 2, replace=False)] = 2  # sum b = 1.5 * 10^4
        res = streaming_unweighted(EdgeStream.from_graph(g), b.tolist(), 0.5, seed=seed,
                                   config=StreamConfig(phase_budget=2, memory_c=8))
        m = res.to_bmatching(g, b.tolist())
        assert not validate_bmatching(g, b.tolist(), m.edge_ids)
        runs.append((g.m, res.peak_words, res.budget))
        del g
    memory_ok = all(peak <= budget for _, peak, budget in runs)

    rand = EdgeRandomness.create(500, 3, 8, seed=1)
    u, v = (x.astype(np.int64) for x in np.triu_indices(500, 1))
    first = rand.many(u, v)
    stable = all((a == c).all() for a, c in zip(first, rand.many(u, v)))

    greedy_ok = 0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        left = [int(x) for x in rng.integers(1, 3, size=int(rng.integers(1, 6)))]
        right = [int(x) for x in rng.integers(1, 3, size=int(rng.integers(1, 6)))]
        pairs = [(a, c) for a in range(len(left)) for c in range(len(right))
                 if rng.random() < 0.5][:24]
        cap = {("L", a): k for a, k in enumerate(left)} | {("R", c): k for c, k in enumerate(right)}
        taken = greedy_between_layer_matching([(("L", a), ("R", c)) for a, c in pairs], cap)
        greedy_ok += 2 * len(taken) >= exact_max_matching_layered(left, right, pairs)

    p, uniform = 7, True
    for i, j in itertools.combinations(range(6), 2):
        seen = {}
        for coeffs in itertools.product(range(p), repeat=2):
            h = KWiseHash(2, 6, coefficients=coeffs)
            seen[(h(i), h(j))] = seen.get((h(i), h(j)), 0) + 1
        uniform &= len(seen) == p * p and set(seen.values()) == {1}

    ok = memory_ok and stable and greedy_ok == 200 and uniform
    verdict(11, "streaming", ok,
            f"peak/budget {[f'{pk}/{bg}' for _, pk, bg in runs]} at m={[m for m, _, _ in runs]}, "
            f"stable={stable}, greedy {greedy_ok}/200, pairwise uniform={uniform}")
    assert ok


# -- 12: determinism -----------------------------------------------------------------------

def test_criterion_12_determinism(tmp_path, capsys):
    prefix = str(tmp_path / "g")
    assert main(["generate", "gnp", "--n", "3000", "--p", "0.01", "--seed", "5", "--budgets",
                 "uniform", "--bmax", "3", "--out", prefix]) == 0
    small = str(tmp_path / "s")
    assert main(["generate", "gnp", "--n", "9", "--p", "0.4", "--wmax", "16", "--seed", "3",
                 "--budgets", "uniform", "--bmax", "2", "--out", small]) == 0
    capsys.readouterr()
    commands = {
        "frac": ["run", "frac", prefix + ".edges", "--budgets", prefix + ".budgets"],
        "const": ["run", "const", prefix + ".edges", "--budgets", prefix + ".budgets"],
        "unweighted": ["run", "unweighted", small + ".edges", "--budgets", small + ".budgets"],
        "weighted": ["run", "weighted", small + ".edges", "--budgets", small + ".budgets",
                     "--phase-budget", "4"],
        "stream": ["run", "stream", prefix + ".edges", "--budgets", prefix + ".budgets",
                   "--phase-budget", "2"],
        "oracle": ["run", "oracle", small + ".edges", "--budgets", small + ".budgets"],
        "bench": ["bench", "unweighted-small", "--seeds", "3"],
    }
    same = {}
    for name, argv in commands.items():
        outs = []
        for threads in (1, 8):
            out = tmp_path / f"{name}-{threads}.out"
            main(argv + ["--seed", "11", "--threads", str(threads), "--out", str(out)]
                 if name != "bench" else argv + ["--threads", str(threads), "--out", str(out)])
            outs.append(out.read_bytes())
        capsys.readouterr()
        same[name] = outs[0] == outs[1] and len(outs[0]) > 0
    gen = []
    for k in range(2):
        out = str(tmp_path / f"gen{k}")
        main(["generate", "gnp", "--n", "500", "--p", "0.05", "--seed", "2", "--out", out])
        gen.append(open(out + ".edges", "rb").read() + open(out + ".budgets", "rb").read())
    same["generate"] = gen[0] == gen[1]
    capsys.readouterr()

    # the compressed branch fans machine rounds out to host threads
    g = generators.gnp_avg_degree(2000, 20, 4)
    xs = [full_mpc(unit(g), MachineCluster(12, 3 * g.n, 3, threads=t), compressed_override=3).x
          for t in (1, 8)]
    same["compressed"] = xs[0].tolist() == xs[1].tolist()
    ok = all(same.values())
    verdict(12, "determinism", ok, ", ".join(f"{k}={'same' if v else 'DIFF'}"
                                             for k, v in same.items()))
    assert ok
