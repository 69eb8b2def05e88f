"""Command-line entry points.

Subcommands:
  macro       solve the macro tier on one random scenario
  smallcell   macro tier + small-cell tier on one random scenario
  experiment  run a Monte-Carlo sweep and write CSVs
  oracle      run solver-vs-enumeration cross-checks on small instances
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from .model import generate_scenario, realize_gains, load_scenario
from .macro import solve_proposed, bisect_ith, brute_force_max_interference
from .smallcell import (solve_convex_relaxation, solve_minlp_exact,
                        grid_search_oracle, objective_value, check_feasible)
from .distributed import run_algorithm2
from .harness import (preset_config, load_experiment_config, run_experiment,
                      write_csv, metric_admitted, metric_channel_usage,
                      PRESETS)


def _make_scenario(args):
    if args.config:
        return load_scenario(args.config)
    return generate_scenario(
        n_mues=args.mues, n_subchannels=args.channels,
        rate_mue=args.rate_mue, rate_sue=args.rate_sue,
        rng=np.random.default_rng(args.seed))


def _solve_macro(args, gains, scenario):
    if args.method == "proposed":
        return solve_proposed(gains, scenario)
    alloc, i_th = bisect_ith(gains, scenario)
    print(f"balanced interference threshold: {i_th:.6e} W")
    return alloc


def _add_scenario_args(p):
    p.add_argument("--config", help="scenario JSON file (overrides the size flags)")
    p.add_argument("--mues", type=int, default=4)
    p.add_argument("--channels", type=int, default=6)
    p.add_argument("--rate-mue", type=float, default=4.0)
    p.add_argument("--rate-sue", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--method", choices=("proposed", "traditional"),
                   default="proposed", help="macro-tier scheme")


def cmd_macro(args) -> int:
    scenario = _make_scenario(args)
    gains = realize_gains(scenario, np.random.default_rng(args.seed + 1))
    alloc = _solve_macro(args, gains, scenario)
    print(f"macro tier ({alloc.method}): {scenario.M} MUEs on {scenario.N} "
          f"sub-channels, total power {alloc.total_power():.4f} W")
    for m in range(scenario.M):
        chans = np.flatnonzero(alloc.gamma[m])
        for n in chans:
            print(f"  MUE {m}: channel {n}, power {alloc.power[m, n]:.4f} W, "
                  f"tolerable interference {alloc.tolerable[m, n]:.4e} W")
    if args.csv:
        alloc.to_csv(args.csv)
        print(f"wrote {args.csv}")
    return 0


def cmd_smallcell(args) -> int:
    scenario = _make_scenario(args)
    gains = realize_gains(scenario, np.random.default_rng(args.seed + 1))
    macro = _solve_macro(args, gains, scenario)
    t0 = time.perf_counter()
    if args.solver == "exact":
        alloc = solve_minlp_exact(macro, gains, scenario)
    elif args.solver == "convex":
        alloc, _ = solve_convex_relaxation(macro, gains, scenario)
    else:
        res = run_algorithm2(macro, gains, scenario, gap_tol=args.gap_tol,
                             l_max=args.l_max)
        alloc = res.alloc
        print(f"distributed: {res.iterations} iterations, "
              f"converged={res.converged}, upper bound {res.state.best_upper:.6f}")
        if args.trace:
            res.write_trace(args.trace)
            print(f"wrote {args.trace}")
    dt = time.perf_counter() - t0
    report = check_feasible(alloc, macro, gains, scenario)
    print(f"small-cell tier ({alloc.mode}): solved in {dt * 1e3:.1f} ms, "
          f"feasible={report.ok}")
    print(f"  admitted: {metric_admitted(alloc, scenario):.1f}% of "
          f"{scenario.F} SUEs")
    print(f"  channel usage: {metric_channel_usage(alloc, scenario):.1f}%")
    print(f"  objective: {objective_value(alloc, scenario.epsilon):.6f}")
    if args.csv:
        alloc.to_csv(args.csv)
        print(f"wrote {args.csv}")
    return 0


def cmd_experiment(args) -> int:
    if args.config:
        config = load_experiment_config(args.config)
    else:
        overrides = {}
        if args.realizations is not None:
            overrides["realizations"] = args.realizations
        if args.seed is not None:
            overrides["base_seed"] = args.seed
        if args.gap_tol is not None:
            overrides["gap_tol"] = args.gap_tol
        if args.l_max is not None:
            overrides["l_max"] = args.l_max
        overrides["macro_method"] = args.method
        overrides["solver"] = args.solver
        config = preset_config(args.preset, **overrides)
    t0 = time.perf_counter()
    result = run_experiment(config)
    dt = time.perf_counter() - t0
    path = write_csv(result, args.out)
    n_fail = len(result.failures)
    print(f"{config.name}: {len(config.values)} sweep points x "
          f"{config.realizations} realizations in {dt:.1f} s "
          f"({n_fail} failed)")
    for value, label, metric, mean, stderr, n in result.summary:
        if metric == "admitted_pct":
            print(f"  {config.sweep}={value}: admitted "
                  f"{mean:.1f}% +- {stderr:.1f} (n={n})")
    print(f"wrote {path}")
    return 0


def cmd_oracle(args) -> int:
    rng = np.random.default_rng(args.seed)
    failures = 0
    if args.kind == "assignment":
        for trial in range(args.trials):
            scenario = generate_scenario(
                n_mues=3, n_subchannels=5, rate_mue=3.0, rate_sue=5.0,
                rng=rng)
            gains = realize_gains(scenario, rng)
            alloc = solve_proposed(gains, scenario)
            best, _ = brute_force_max_interference(gains, scenario)
            got = float(alloc.finite_tolerable().sum())
            ok = abs(got - best) <= 1e-9 * max(1.0, abs(best))
            failures += not ok
            print(f"trial {trial}: assignment {got:.6e} vs enumeration "
                  f"{best:.6e} {'PASS' if ok else 'FAIL'}")
    else:
        for trial in range(args.trials):
            scenario = generate_scenario(
                n_mues=2, n_subchannels=3, rate_mue=2.0, rate_sue=3.0,
                rng=rng, sues_per_cell=2)
            gains = realize_gains(scenario, rng)
            macro = solve_proposed(gains, scenario)
            alloc = solve_minlp_exact(macro, gains, scenario)
            got = objective_value(alloc, scenario.epsilon)
            ora = grid_search_oracle(macro, gains, scenario)
            ok = got >= ora["objective"] - 1e-3
            failures += not ok
            print(f"trial {trial}: exact {got:.6f} vs grid {ora['objective']:.6f} "
                  f"(admitted {alloc.total_admitted():.0f} vs "
                  f"{ora['admitted']}) {'PASS' if ok else 'FAIL'}")
    print(f"{args.trials - failures}/{args.trials} passed")
    return 1 if failures else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hetnet-ra",
        description="Two-tier OFDMA resource allocation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("macro", help="solve the macro tier once")
    _add_scenario_args(p)
    p.add_argument("--csv", help="write the allocation table here")
    p.set_defaults(func=cmd_macro)

    p = sub.add_parser("smallcell", help="solve both tiers once")
    _add_scenario_args(p)
    p.add_argument("--solver", choices=("exact", "convex", "distributed"),
                   default="convex")
    p.add_argument("--gap-tol", type=float, default=1e-2)
    p.add_argument("--l-max", type=int, default=200)
    p.add_argument("--trace", help="write the distributed iteration trace here")
    p.add_argument("--csv", help="write the allocation table here")
    p.set_defaults(func=cmd_smallcell)

    p = sub.add_parser("experiment", help="run a Monte-Carlo sweep")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--preset", choices=sorted(PRESETS))
    group.add_argument("--config", help="experiment JSON file")
    p.add_argument("--out", default="experiment.csv")
    p.add_argument("--method", choices=("proposed", "traditional"),
                   default="proposed")
    p.add_argument("--solver", choices=("exact", "convex", "distributed"),
                   default="convex")
    p.add_argument("--realizations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--gap-tol", type=float)
    p.add_argument("--l-max", type=int)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("oracle", help="cross-check solvers against enumeration")
    p.add_argument("kind", choices=("assignment", "minlp"))
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_oracle)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
