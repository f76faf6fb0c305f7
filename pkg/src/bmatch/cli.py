"""Command line: generate inputs, run one algorithm, or sweep seeds into a CSV."""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import statistics
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import generators
from .fractional import (LPInstance, NonConvergence, ThresholdSchedule,
                         constant_approx_bmatching, dual_certificate, from_grid, full_mpc,
                         loose_sets, sequential)
from .graph import (BudgetVector, Graph, GraphError, format_budgets, format_edge_list,
                    parse_budgets, parse_edge_list, validate_bmatching)
from .mpc import TAG_THRESHOLD, MachineCluster, child_seed
from .oracle import MAX_ORACLE_EDGES, exact_max_bmatching
from .streaming import EdgeStream, StreamConfig, streaming_unweighted
from .unweighted import UnweightedConfig, unweighted_one_plus_eps
from .weighted import WeightedConfig, class_period, weighted_one_plus_eps

SCHEMA = "bmatch-report/1"
ALGORITHMS = ("frac", "const", "unweighted", "weighted", "stream", "oracle")
SUITES = {
    "empty": None,
    "const-small": "const",
    "unweighted-small": "unweighted",
    "weighted-small": "weighted",
    "stream-small": "stream",
}


def default_seed() -> int:
    raw = os.environ.get("BMATCH_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"BMATCH_SEED must be an integer, got {raw!r}")


def _num(x) -> str | int:
    """Exact numbers in reports: ints stay ints, fractions become strings."""
    x = Fraction(x)
    return int(x) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


# -- inputs ----------------------------------------------------------------

def load_input(source: str, budgets: str | None) -> tuple[Graph, BudgetVector]:
    """``source`` is an edge-list path or ``fixture-F1|F2|F3``; budgets default to 1."""
    if source.lower().startswith("fixture-"):
        g, b = generators.fixture(source.split("-", 1)[1])
    else:
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise GraphError(f"cannot read {source}: {exc.strerror}") from None
        g = parse_edge_list(text)
        b = BudgetVector.constant(g.n, 1)
    if budgets:
        try:
            b = parse_budgets(Path(budgets).read_text())
        except OSError as exc:
            raise GraphError(f"cannot read {budgets}: {exc.strerror}") from None
        if len(b) != g.n:
            raise GraphError(f"dimension mismatch: {len(b)} budgets for {g.n} vertices")
    return g, b


def generate(kind: str, params: dict, seed: int) -> Graph:
    p = params
    if kind == "gnp":
        return generators.gnp(int(p["n"]), float(p["p"]), seed, p.get("wmax"))
    if kind == "bipartite":
        return generators.bipartite(int(p["n1"]), int(p["n2"]), float(p["p"]), seed, p.get("wmax"))
    if kind == "path":
        return generators.path(int(p["n"]))
    if kind == "star":
        return generators.star(int(p["leaves"]))
    if kind == "fixture":
        return generators.fixture(p["name"])[0]
    raise ValueError(f"unknown generator {kind!r}")


# -- single runs -------------------------------------------------------------

def run_report(algo: str, g: Graph, b: BudgetVector, *, eps: float = 0.5, seed: int = 0,
               threads: int = 1, with_oracle: bool = False, timing: bool = False,
               options: dict | None = None) -> dict:
    """Run one algorithm and return the report dictionary."""
    if algo not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algo!r}")
    opts = dict(options or {})
    want_trace = bool(opts.pop("trace", False))
    want_history = bool(opts.pop("trace_history", False))
    start = time.perf_counter()
    cluster = MachineCluster.for_input(g.n, g.m, seed, threads=threads)
    report: dict = {
        "schema": SCHEMA,
        "algorithm": algo,
        "input": {"n": g.n, "m": g.m, "avg_degree": _num(g.avg_degree), "sum_b": b.total()},
        "eps": eps,
        "seed": seed,
    }
    matching = None
    result: dict = {}
    valid = True
    if algo == "frac":
        inst = LPInstance.unit_caps(g, b)
        try:
            sol = full_mpc(inst, cluster, seed=seed)
        except NonConvergence as exc:
            result = {"converged": False, "error": str(exc)}
            valid = False
        else:
            total = sol.total()
            tight = loose_sets(inst, sol.x, Fraction(1, 20)).tight
            cert = dual_certificate(inst, sol.x, Fraction(1, 20)) if tight else None
            result = {"converged": True, "tight": tight, "feasible": sol.is_feasible(inst),
                      "sum_x": float(total), "sum_x_exact": _num(total),
                      "iterations": sol.iterations, "branches": sol.branches,
                      "dual_value": _num(cert.value) if cert else None}
            if want_history:
                result["history"] = _history(inst, seed)
            valid = tight and sol.is_feasible(inst)
    elif algo == "const":
        matching = constant_approx_bmatching(g, b, cluster, seed=seed)
    elif algo == "unweighted":
        cfg = UnweightedConfig(**{k: v for k, v in opts.items() if v is not None})
        res = unweighted_one_plus_eps(g, b, eps, cluster, seed=seed, config=cfg, details=True)
        matching = res.matching
        result["phases"] = res.phases
        result["certified_ratio"] = res.certified
    elif algo == "weighted":
        if eps < 0.3:
            print("warning: eps below 0.3 makes the weighted engine very slow", file=sys.stderr)
        cfg = WeightedConfig(**{k: v for k, v in opts.items() if v is not None})
        res = weighted_one_plus_eps(g, b, eps, cluster, seed=seed, config=cfg, details=True)
        matching = res.matching
        result["iterations"] = res.iterations
        result["class_period"] = class_period(min(Fraction(repr(eps)), Fraction(1)))
        if want_trace:
            result["trace"] = res.trace
    elif algo == "stream":
        cfg = StreamConfig(**{k: v for k, v in opts.items() if v is not None})
        res = streaming_unweighted(EdgeStream.from_graph(g), b, eps, seed=seed, config=cfg)
        matching = res.to_bmatching(g, b)
        result.update({"passes": res.passes, "phases": res.phases,
                       "peak_words": res.peak_words, "memory_budget": res.budget})
        valid = res.peak_words <= res.budget
    elif algo == "oracle":
        value, matching = exact_max_bmatching(g, b, weighted=g.weighted)
        result["optimum"] = _num(value)
    if matching is not None:
        problems = validate_bmatching(g, b, matching.edge_ids)
        valid = valid and not problems
        result.update({"size": len(matching), "weight": _num(matching.weight(g)),
                       "edges": sorted(matching.edge_ids)})
        if problems:
            result["problems"] = problems
    report["result"] = result
    report["valid"] = valid
    report["rounds"] = cluster.log.to_dict()
    if with_oracle and matching is not None and g.m <= MAX_ORACLE_EDGES:
        opt, _ = exact_max_bmatching(g, b, weighted=g.weighted)
        got = matching.weight(g) if g.weighted else len(matching)
        report["oracle"] = {"optimum": _num(opt),
                            "ratio": float(Fraction(got) / opt) if opt else 1.0}
    if timing:
        report["wall_time"] = round(time.perf_counter() - start, 6)
    return report


def _history(inst: LPInstance, seed: int) -> dict:
    """Sequential trace with the first iteration's schedule: x per round and active vertices."""
    T = math.ceil(100 * math.log2(max(inst.graph.n, 2)))
    sol = sequential(inst, T, ThresholdSchedule(child_seed(seed, 1, TAG_THRESHOLD)), trace=True)
    return {"x": [[_num(from_grid(k)) for k in xs] for xs in sol.history],
            "active": [np.flatnonzero(a).tolist() for a in sol.active_history]}


def dump(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


# -- sweeps ------------------------------------------------------------------

CSV_FIELDS = ["suite", "seed", "algorithm", "n", "m", "sum_b", "value", "optimum", "ratio",
              "valid", "rounds"]


def bench_rows(suite: str, seeds: int, eps: float = 0.5, threads: int = 1) -> list[dict]:
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    algo = SUITES[suite]
    rows = []
    if algo is None:
        return rows
    for s in range(seeds):
        wmax = 16 if algo == "weighted" else None
        bmax = 2 if algo == "weighted" else 3
        nmax = 12 if algo == "weighted" else 16
        g, b = generators.random_small_instance(s, n_range=(4, nmax), bmax=bmax, wmax=wmax)
        rep = run_report(algo, g, b, eps=eps, seed=s, threads=threads, with_oracle=True)
        res = rep["result"]
        value = res.get("weight") if g.weighted else res.get("size")
        orc = rep.get("oracle", {})
        rows.append({"suite": suite, "seed": s, "algorithm": algo, "n": g.n, "m": g.m,
                     "sum_b": b.total(), "value": value, "optimum": orc.get("optimum"),
                     "ratio": orc.get("ratio"), "valid": rep["valid"],
                     "rounds": rep["rounds"]["rounds"]})
    return rows


def write_csv(rows: list[dict], fh) -> None:
    w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)


def summarize(rows: list[dict]) -> dict:
    ratios = [r["ratio"] for r in rows if r["ratio"] is not None]
    return {"runs": len(rows),
            "valid_rate": sum(r["valid"] for r in rows) / len(rows) if rows else None,
            "median_ratio": statistics.median(ratios) if ratios else None,
            "ratio_at_least_2_3": sum(x >= 2 / 3 for x in ratios) / len(ratios) if ratios else None}


# -- argument parsing -----------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bmatch", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a graph file and a budget file")
    gen.add_argument("kind", choices=["gnp", "bipartite", "path", "star", "fixture"])
    gen.add_argument("--n", type=int)
    gen.add_argument("--n1", type=int)
    gen.add_argument("--n2", type=int)
    gen.add_argument("--p", type=float)
    gen.add_argument("--leaves", type=int)
    gen.add_argument("--name", choices=["F1", "F2", "F3"])
    gen.add_argument("--wmax", type=int)
    gen.add_argument("--budgets", default="constant",
                     help="constant, uniform, or a budget file to copy")
    gen.add_argument("--bmax", type=int, default=1, help="constant value or uniform maximum")
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--out", required=True, help="output prefix: PREFIX.edges, PREFIX.budgets")

    run = sub.add_parser("run", help="run one algorithm and print a JSON report")
    run.add_argument("algorithm", choices=ALGORITHMS)
    run.add_argument("graph", help="edge-list file or fixture-F1|F2|F3")
    run.add_argument("--budgets")
    run.add_argument("--eps", type=float, default=0.5)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--threads", type=int, default=1)
    run.add_argument("--with-oracle", action="store_true")
    run.add_argument("--timing", action="store_true", help="include wall time (not reproducible)")
    run.add_argument("--out", help="write the report here instead of stdout")
    run.add_argument("--phase-budget", type=int)
    run.add_argument("--class-repetitions", type=int)
    run.add_argument("--weight-window", type=str, help="lo,hi factors, e.g. 1/4,5/4")
    run.add_argument("--copies", type=int, help="parallel copies for the streaming run")
    run.add_argument("--k-override", type=int, help="layer count for the unweighted engine")
    run.add_argument("--repetitions", type=int, help="independent restarts (unweighted)")
    run.add_argument("--trace", action="store_true", help="per-iteration trace (weighted)")
    run.add_argument("--trace-history", action="store_true",
                     help="per-round x values and active sets of the first iteration (frac)")

    bench = sub.add_parser("bench", help="sweep seeds of a suite into a CSV")
    bench.add_argument("suite", choices=list(SUITES))
    bench.add_argument("--seeds", type=int, default=10)
    bench.add_argument("--eps", type=float, default=0.5)
    bench.add_argument("--threads", type=int, default=1)
    bench.add_argument("--out", required=True)
    return ap


def _run_options(args) -> dict:
    opts: dict = {}
    if args.algorithm in ("unweighted", "weighted", "stream"):
        opts["phase_budget"] = args.phase_budget
    if args.algorithm == "unweighted":
        opts["k_override"] = args.k_override
        opts["repetitions"] = args.repetitions
    if args.algorithm == "frac":
        opts["trace_history"] = args.trace_history
    if args.algorithm == "weighted":
        opts["class_repetitions"] = args.class_repetitions
        if args.weight_window:
            lo, hi = (Fraction(x) for x in args.weight_window.split(","))
            opts["window"] = (lo, hi)
        opts["trace"] = args.trace
    if args.algorithm == "stream":
        opts["copies"] = args.copies
    return opts


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    seed = default_seed() if getattr(args, "seed", None) is None else args.seed
    try:
        if args.command == "generate":
            return _generate(args, seed)
        if args.command == "run":
            g, b = load_input(args.graph, args.budgets)
            rep = run_report(args.algorithm, g, b, eps=args.eps, seed=seed,
                             threads=args.threads, with_oracle=args.with_oracle,
                             timing=args.timing, options=_run_options(args))
            text = dump(rep)
            if args.out:
                Path(args.out).write_text(text)
            else:
                sys.stdout.write(text)
            return 0 if rep["valid"] else 1
        if args.command == "bench":
            rows = bench_rows(args.suite, args.seeds, args.eps, args.threads)
            with open(args.out, "w", newline="") as fh:
                write_csv(rows, fh)
            sys.stdout.write(json.dumps(summarize(rows), sort_keys=True) + "\n")
            return 0 if all(r["valid"] for r in rows) else 1
    except (GraphError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


def _generate(args, seed: int) -> int:
    params = {k: getattr(args, k) for k in ("n", "n1", "n2", "p", "leaves", "name", "wmax")
              if getattr(args, k) is not None}
    g = generate(args.kind, params, seed)
    if args.budgets == "constant":
        b = generators.budgets(g.n, "constant", args.bmax)
    elif args.budgets == "uniform":
        b = generators.budgets(g.n, "uniform", args.bmax, seed)
    else:
        b = parse_budgets(Path(args.budgets).read_text())
        if len(b) != g.n:
            raise GraphError(f"dimension mismatch: {len(b)} budgets for {g.n} vertices")
    Path(f"{args.out}.edges").write_text(format_edge_list(g))
    Path(f"{args.out}.budgets").write_text(format_budgets(b))
    sys.stdout.write(json.dumps({"n": g.n, "m": g.m, "edges": f"{args.out}.edges",
                                 "budgets": f"{args.out}.budgets"}, sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
