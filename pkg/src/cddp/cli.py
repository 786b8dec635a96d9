"""Command-line entry point: ``cddp <command> ...``.

Exit codes: 0 feasible, 2 best plan infeasible, 3 search or model too large,
1 usage or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as dt
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

from . import exact, ga_solver
from .arc_metrics import cached_metric_matrix
from .instance import (GeneratorConfig, InstanceFormatError, generate_instance,
                       generate_tiny_instance, illustrative_instance, instance_to_json,
                       load_generator_config, load_instance, save_instance, valid_settings)
from .solution import check_feasibility, load_plan, save_plan

log = logging.getLogger("cddp")

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_TOO_LARGE = 0, 1, 2, 3
OUTPUT_ENV = "CDDP_OUTPUT_DIR"
BENCH_HEADER = ["setting", "n_customers", "seed", "case", "h_max", "o_max", "singular_source",
                "algorithm", "feasible", "objective_m", "max_handovers", "max_outage_s",
                "distance_increase", "wall_time_s", "generations", "error"]
THRESHOLD_CASES = {"default": None, "(20,20)": (1.2, 1.2), "(20,10)": (1.2, 1.1),
                   "(10,20)": (1.1, 1.2), "(10,10)": (1.1, 1.1)}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def instance_hash(instance) -> str:
    return hashlib.sha256(instance_to_json(instance).encode()).hexdigest()[:16]


def run_dir(instance, out=None) -> Path:
    if out:
        path = Path(out)
    else:
        root = Path(os.environ.get(OUTPUT_ENV, "runs"))
        stamp = dt.datetime.now().strftime("%Y%m%dT%H%M%S")
        path = root / f"{instance_hash(instance)}-{stamp}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _with_cli_thresholds(instance, args):
    h = instance.h_max if args.hmax is None else args.hmax
    o = instance.o_max if args.omax is None else args.omax
    return instance.with_thresholds(h, o)


def _gap(value, bound):
    if bound is None or bound <= 0 or not math.isfinite(value):
        return None
    return (value - bound) / bound


def _write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


# commands

def cmd_gen(args):
    if args.illustrative:
        instance = illustrative_instance(n_drones=args.drones or 1)
    elif args.config:
        instance = generate_instance(load_generator_config(args.config))
    elif args.customers < 1:
        raise UsageError("--customers must be >= 1")
    else:
        instance = generate_instance(
            GeneratorConfig(setting=args.setting, n_customers=args.customers, seed=args.seed))
    out = Path(args.out) if args.out else run_dir(instance) / "instance.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_instance(instance, out)
    counts = {k: len(instance.ids_of(k)) for k in ("depot", "customer", "charging_station", "waypoint")}
    print(f"wrote {out}")
    print(f"{instance.name}: {instance.n_flyable} flyable nodes ({counts['depot']} depots, "
          f"{counts['customer']} customers, {counts['charging_station']} charging stations, "
          f"{counts['waypoint']} waypoints), {len(instance.comm)} base stations, "
          f"{instance.n_drones} drones")
    return EXIT_OK


def _ga_config(args):
    data = {}
    if args.config:
        data = json.loads(Path(args.config).read_text())
        known = {f.name for f in dataclasses.fields(ga_solver.GAConfig)}
        unknown = set(data) - known
        if unknown:
            raise UsageError(f"unknown GA config keys: {', '.join(sorted(unknown))}")
    overrides = {"seed": args.seed, "max_generations": args.generations,
                 "population_size": args.population, "time_limit_s": args.time_limit,
                 "objective": args.objective}
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ga_solver.GAConfig(**data)


def _report(instance, algorithm, objective_kind, value, evaluation, wall, generations, bound):
    return {
        "instance": instance.name,
        "instance_hash": instance_hash(instance),
        "algorithm": algorithm,
        "objective": objective_kind,
        "objective_value": value,
        "feasible": evaluation.feasible if evaluation else False,
        "total_distance_m": evaluation.total_distance_m if evaluation else None,
        "trips": evaluation.to_dict()["trips"] if evaluation else [],
        "violations": evaluation.to_dict()["violations"] if evaluation else [],
        "wall_time_s": wall,
        "generations": generations,
        "bound": bound,
        "gap": _gap(value, bound) if value is not None else None,
    }


def solve_instance(instance, args, matrix):
    """(plan, report, ga_result or None) for one solve request."""
    started = time.perf_counter()
    if args.algo == "exact":
        bounds = exact.EnumerationBounds(max_interior_nodes_per_trip=args.max_interior,
                                         max_trips_per_drone=args.max_trips, budget=args.budget)
        res = exact.enumerate_optimal(instance, bounds, args.objective or "total_distance", matrix)
        wall = time.perf_counter() - started
        value = res.value if res.feasible else None
        report = _report(instance, "exact", res.objective_kind, value, res.evaluation, wall,
                         None, args.bound)
        report["nodes_expanded"] = res.nodes_expanded
        return res.plan, report, None
    config = _ga_config(args)
    res = ga_solver.run(instance, config, matrix)
    wall = time.perf_counter() - started
    value = ga_solver.objective_value(res.evaluation, config.objective)
    report = _report(instance, "ga", config.objective, value, res.evaluation, wall,
                     res.generations, args.bound)
    report["feasible"] = res.feasible
    return res.plan, report, res


def cmd_solve(args):
    from .plotting import plot_trace

    instance = _with_cli_thresholds(load_instance(args.instance), args)
    out = run_dir(instance, args.out)
    matrix = cached_metric_matrix(instance, args.cache_dir or out.parent / "cache")
    plan, report, ga = solve_instance(instance, args, matrix)
    if plan is None:
        _write_json(out / "report.json", report)
        print(f"no feasible plan exists within the enumeration bounds; report in {out}")
        return EXIT_INFEASIBLE
    save_plan(plan, out / "plan.json")
    _write_json(out / "report.json", report)
    if ga is not None:
        with open(out / "trace.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["generation", "best_fitness"])
            writer.writerows(enumerate(ga.trace))
        plot_trace(ga.trace, out / "trace.png")
    status = "feasible" if report["feasible"] else "INFEASIBLE (least-violating plan)"
    print(f"{report['algorithm']}: {status}, {report['objective']} = {report['objective_value']}")
    print(f"wrote {out / 'plan.json'} and {out / 'report.json'}")
    return EXIT_OK if report["feasible"] else EXIT_INFEASIBLE


def cmd_evaluate(args):
    instance = _with_cli_thresholds(load_instance(args.instance), args)
    plan = load_plan(args.plan)
    result = check_feasibility(plan, instance, cached_metric_matrix(instance, args.cache_dir))
    print(json.dumps(result.to_dict(), indent=1, sort_keys=True))
    return EXIT_OK if result.feasible else EXIT_INFEASIBLE


def cmd_export_mps(args):
    instance = _with_cli_thresholds(load_instance(args.instance), args)
    cfg = exact.MipExport(max_columns=args.max_columns)
    text = exact.export_mps(instance, cfg, cached_metric_matrix(instance, args.cache_dir))
    out = Path(args.out) if args.out else run_dir(instance) / "model.mps"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_verify(args):
    instance = _with_cli_thresholds(load_instance(args.instance), args)
    report = exact.verify_against_mps(instance, args.solution, args.bound,
                                      cached_metric_matrix(instance, args.cache_dir))
    print(json.dumps(report.to_dict(), indent=1, sort_keys=True))
    return EXIT_OK if report.evaluation.feasible else EXIT_INFEASIBLE


def cmd_plot(args):
    from .plotting import plot_route_map

    instance = load_instance(args.instance)
    plan = load_plan(args.plan) if args.plan else None
    plot_route_map(instance, plan, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _singular_optima(instance, matrix, args):
    """Min-max handover and outage optima, exact when tractable, else GA."""
    optima = {}
    source = "exact"
    for kind in ("minmax_handover", "minmax_outage"):
        try:
            res = exact.enumerate_optimal(instance, exact.EnumerationBounds(budget=args.budget), kind, matrix)
            if not res.feasible:
                raise RuntimeError("no feasible plan for the singular objective")
            optima[kind] = res.value
        except exact.SearchTooLarge:
            source = "ga"
            cfg = ga_solver.GAConfig(seed=args.ga_seed, objective=kind, max_generations=args.generations)
            res = ga_solver.run(instance, cfg, matrix)
            if not res.feasible:
                raise RuntimeError("GA found no feasible plan for the singular objective")
            optima[kind] = ga_solver.objective_value(res.evaluation, kind)
    return optima["minmax_handover"], optima["minmax_outage"], source


def _bench_solve(instance, matrix, args):
    try:
        res = exact.enumerate_optimal(instance, exact.EnumerationBounds(budget=args.budget),
                                      metric_matrix=matrix)
        value = res.value if res.feasible else None
        return "exact", res.feasible, value, res.evaluation, None
    except exact.SearchTooLarge:
        cfg = ga_solver.GAConfig(seed=args.ga_seed, max_generations=args.generations)
        res = ga_solver.run(instance, cfg, matrix)
        value = res.evaluation.total_distance_m if res.feasible else None
        return "ga", res.feasible, value, res.evaluation, res.generations


def cmd_bench(args):
    from .plotting import plot_bench_summary

    settings = [s.strip() for s in args.settings.split(",") if s.strip()]
    bad = [s for s in settings if s not in valid_settings()]
    if bad:
        raise UsageError(f"invalid setting codes {bad}; valid: {', '.join(valid_settings())}")
    sizes = [int(v) for v in args.sizes.split(",")]
    seeds = [int(v) for v in args.seeds.split(",")]
    cases = [c.strip() for c in args.cases.split(";")]
    unknown = [c for c in cases if c not in THRESHOLD_CASES]
    if unknown:
        raise UsageError(f"unknown threshold cases {unknown}; valid: {'; '.join(THRESHOLD_CASES)}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cache = args.cache_dir or out.parent / "cache"

    rows = []
    for setting in settings:
        for n in sizes:
            for seed in seeds:
                base_row = {"setting": setting, "n_customers": n, "seed": seed}
                try:
                    if args.tiny:
                        instance = generate_tiny_instance(seed, n_customers=n, setting=setting)
                    else:
                        instance = generate_instance(GeneratorConfig(setting=setting, n_customers=n, seed=seed))
                    matrix = cached_metric_matrix(instance, cache)
                    h_star, o_star, source = (None, None, "")
                    if any(THRESHOLD_CASES[c] for c in cases):
                        h_star, o_star, source = _singular_optima(instance, matrix, args)
                except Exception as exc:  # recorded per row, the run continues
                    log.warning("%s n=%d seed=%d failed: %s", setting, n, seed, exc)
                    rows += [dict(base_row, case=c, error=str(exc)) for c in cases]
                    continue
                reference = None
                for case in cases:
                    factors = THRESHOLD_CASES[case]
                    h_max, o_max = (math.inf, math.inf) if factors is None else \
                        (factors[0] * h_star, factors[1] * o_star)
                    row = dict(base_row, case=case, h_max=h_max, o_max=o_max, singular_source=source)
                    started = time.perf_counter()
                    try:
                        algo, feasible, value, evaluation, gens = _bench_solve(
                            instance.with_thresholds(h_max, o_max), matrix, args)
                        if case == "default" and value is not None:
                            reference = value
                        row.update(algorithm=algo, feasible=feasible, objective_m=value,
                                   max_handovers=evaluation.max_handovers if evaluation else None,
                                   max_outage_s=evaluation.max_outage_s if evaluation else None,
                                   generations=gens,
                                   distance_increase=_gap(value, reference) if value is not None else None)
                    except Exception as exc:
                        log.warning("%s n=%d seed=%d case %s failed: %s", setting, n, seed, case, exc)
                        row["error"] = str(exc)
                    row["wall_time_s"] = round(time.perf_counter() - started, 3)
                    rows.append(row)
    rows = [{k: ("" if row.get(k) is None else row.get(k, "")) for k in BENCH_HEADER} for row in rows]
    with open(out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=BENCH_HEADER)
        writer.writeheader()
        writer.writerows(rows)
    plot_bench_summary(rows, out.with_suffix(".png"))
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_OK


# parser

def _add_thresholds(p):
    p.add_argument("--hmax", type=float, help="per-trip handover limit")
    p.add_argument("--omax", type=float, help="per-trip expected outage limit (s)")


def build_parser() -> Parser:
    parser = Parser(prog="cddp", description="Communication-aware drone delivery toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("gen", help="generate a benchmark instance")
    p.add_argument("--setting", choices=valid_settings(), default="UUL")
    p.add_argument("--customers", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="generator config JSON (overrides the flags)")
    p.add_argument("--illustrative", action="store_true",
                   help="write the 1 km two-customer example instead")
    p.add_argument("--drones", type=int, help="drone count for --illustrative")
    p.add_argument("--out", help="instance file (default: a new run directory)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("solve", help="solve an instance with the GA or exhaustive search")
    p.add_argument("instance")
    p.add_argument("--algo", choices=("ga", "exact"), default="ga")
    p.add_argument("--objective", choices=ga_solver.OBJECTIVES)
    _add_thresholds(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--population", type=int)
    p.add_argument("--time-limit", type=float)
    p.add_argument("--config", help="GA config JSON with GAConfig field names")
    p.add_argument("--max-interior", type=int, default=3)
    p.add_argument("--max-trips", type=int)
    p.add_argument("--budget", type=int, default=5_000_000)
    p.add_argument("--bound", type=float, help="lower bound for the reported gap")
    p.add_argument("--out", help="output directory (default: a new run directory)")
    p.add_argument("--cache-dir")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("evaluate", help="check a plan against an instance")
    p.add_argument("instance")
    p.add_argument("plan")
    _add_thresholds(p)
    p.add_argument("--cache-dir")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-mps", help="write the MIP model in free MPS")
    p.add_argument("instance")
    _add_thresholds(p)
    p.add_argument("--max-columns", type=int, default=500_000)
    p.add_argument("--out")
    p.add_argument("--cache-dir")
    p.set_defaults(func=cmd_export_mps)

    p = sub.add_parser("verify", help="check an external MIP solution file")
    p.add_argument("instance")
    p.add_argument("solution")
    _add_thresholds(p)
    p.add_argument("--bound", type=float)
    p.add_argument("--cache-dir")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("plot", help="render an SVG route map")
    p.add_argument("instance")
    p.add_argument("plan", nargs="?")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("bench", help="run a grid of instances and threshold cases")
    p.add_argument("--settings", default="UUL")
    p.add_argument("--sizes", default="2")
    p.add_argument("--seeds", default="0")
    p.add_argument("--cases", default=";".join(THRESHOLD_CASES),
                   help="semicolon-separated, e.g. 'default;(20,10)'")
    p.add_argument("--tiny", action="store_true", help="use small 2 km instances")
    p.add_argument("--generations", type=int)
    p.add_argument("--ga-seed", type=int, default=0)
    p.add_argument("--budget", type=int, default=2_000_000)
    p.add_argument("--out", default="bench.csv")
    p.add_argument("--cache-dir")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (exact.SearchTooLarge, exact.ModelTooLarge) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TOO_LARGE
    except (OSError, InstanceFormatError, exact.MappingError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
