"""Command-line driver: ``hetmap <subcommand> [flags]``.

Exit codes: 0 success, 2 configuration error, 3 accuracy constraint not met,
4 internal contract violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError, ContractError
from .metrics import lep_score
from .noise import NoiseConfig
from .pipeline import (RunConfig, assign_sorted, bruteforce, equal_distribution, lep_rows, prepare, read_strategies,
                       run_equal_distribution, run_homogeneous_baselines, run_pipeline, search_only, write_json,
                       write_lep, write_remap_trace)
from .remap import RemapConfig, remap
from .search import Allocation, SearchConfig, make_feasible, validate
from .workload import TierId, load_workload, search_space_size, uniform_workload

EXIT_OK, EXIT_CONFIG, EXIT_UNMET, EXIT_CONTRACT = 0, 2, 3, 4

log = logging.getLogger("hetmap")


def _common(p: argparse.ArgumentParser, workload: str = "toy_mlp") -> None:
    p.add_argument("--workload", default=workload, help="descriptor path or bundled name (default: %(default)s)")
    p.add_argument("--tiers", default="tiers_default", help="tier spec JSON path or bundled name")
    p.add_argument("--support", type=Path, help="JSON object op_kind -> list of tier ids (overrides the default)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, help="output directory for CSV/JSON artifacts")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _search_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--population", type=int, default=40)
    p.add_argument("--generations", type=int, default=50)
    p.add_argument("--crossover-rate", type=float, default=0.9)
    p.add_argument("--mutation-rate", type=float, default=0.5)
    p.add_argument("--mutation-step", type=int, default=None)
    p.add_argument("--threads", type=int, default=1, help="cap on concurrent accuracy evaluations")
    p.add_argument("--tri-objective", action="store_true",
                   help="NSGA-II over latency, energy and accuracy degradation instead of two stages")


def _accuracy_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tau", type=float, default=None, help="degradation bound (0.02 accuracy, 1.0 perplexity)")
    p.add_argument("--delta", type=int, default=1, help="rows moved per remap shift")
    p.add_argument("--max-iters", type=int, default=10_000)
    p.add_argument("--scope", choices=("layer", "global"), default="layer")
    p.add_argument("--metric", choices=("accuracy", "perplexity"), default="accuracy")
    p.add_argument("--probes", type=int, default=256)
    p.add_argument("--sigma", type=float, default=None, help="photonic relative input noise")
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--read-voltage", type=float, default=None)
    p.add_argument("--g-max", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hetmap", description="Row-level DNN mapping over SRAM/ReRAM/photonic tiers.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spacesize", help="log10 size of the per-row and per-count mapping spaces")
    _common(p, workload="pythia70m")
    p.add_argument("--uniform", nargs=2, type=int, metavar=("LAYERS", "ROWS"),
                   help="use LAYERS identical layers of ROWS rows instead of a descriptor")
    p.add_argument("--n-tiers", type=int, default=3)

    p = sub.add_parser("search", help="Stage 1 only: latency/energy Pareto front")
    _common(p)
    _search_flags(p)
    _accuracy_flags(p)

    p = sub.add_parser("remap", help="Stage 2 only: remap a given allocation until the accuracy bound holds")
    _common(p)
    _accuracy_flags(p)
    p.add_argument("--alloc", default=None,
                   help="allocation JSON (list of per-layer counts) or a tier name for a homogeneous start "
                        "(default: the noisiest tier)")

    p = sub.add_parser("pipeline", help="Stage 1 + accuracy screen + Stage 2")
    _common(p)
    _search_flags(p)
    _accuracy_flags(p)

    p = sub.add_parser("evaluate", help="latency, energy and accuracy of one allocation")
    _common(p)
    _accuracy_flags(p)
    p.add_argument("--alloc", default="equal", help="allocation JSON, a tier name, or 'equal'")

    p = sub.add_parser("bruteforce", help="exact Pareto front by enumeration (small workloads only)")
    _common(p, workload="toy_pareto")

    p = sub.add_parser("report", help="LEP scores for a strategy table")
    _common(p)
    _accuracy_flags(p)
    p.add_argument("--input", type=Path,
                   help="CSV with strategy,latency_s,energy_j,quality columns; default: homogeneous and equal "
                        "baselines of --workload")
    return ap


def _run_config(args) -> RunConfig:
    support = None
    if getattr(args, "support", None):
        try:
            support = json.loads(Path(args.support).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read support matrix {args.support}: {exc}") from None
    metric = getattr(args, "metric", "accuracy")
    tau = getattr(args, "tau", None)
    if tau is None:
        tau = 1.0 if metric == "perplexity" else 0.02
    try:
        return _build_run_config(args, support, metric, tau)
    except ContractError as exc:
        raise ConfigError(str(exc)) from None


def _build_run_config(args, support, metric: str, tau: float) -> RunConfig:
    noise = NoiseConfig()
    overrides = {k: v for k, v in (("photonic_sigma", getattr(args, "sigma", None)),
                                   ("temperature_k", getattr(args, "temperature", None)),
                                   ("read_voltage_v", getattr(args, "read_voltage", None)),
                                   ("g_max_s", getattr(args, "g_max", None))) if v is not None}
    noise = replace(noise, seed=args.seed, **overrides)
    search = SearchConfig(population=getattr(args, "population", 40), generations=getattr(args, "generations", 50),
                          crossover_rate=getattr(args, "crossover_rate", 0.9),
                          mutation_rate=getattr(args, "mutation_rate", 0.5),
                          mutation_step=getattr(args, "mutation_step", None), seed=args.seed)
    rm = RemapConfig(tau=tau, delta=getattr(args, "delta", 1), max_iters=getattr(args, "max_iters", 10_000),
                     seed=args.seed, scope=getattr(args, "scope", "layer"))
    return RunConfig(workload=str(args.workload), tiers=str(args.tiers), seed=args.seed,
                     out=str(args.out) if args.out else None, search=search, remap=rm, noise=noise, metric=metric,
                     probes=getattr(args, "probes", 256), threads=getattr(args, "threads", 1),
                     tri_objective=getattr(args, "tri_objective", False), support=support)


def _parse_alloc(spec: str, setup) -> Allocation:
    names = {t.value.lower(): t for t in TierId}
    if spec.lower() == "equal":
        return equal_distribution(setup.workload, setup.support)
    if spec.lower() in names:
        col = list(setup.support.tiers).index(names[spec.lower()])
        raw = [[layer.rows if i == col else 0 for i in range(len(setup.support.tiers))] for layer in setup.workload]
        # layers the tier cannot run fall back to an even split over the rest
        return make_feasible(raw, setup.workload, setup.support)
    try:
        raw = json.loads(Path(spec).read_text()) if Path(spec).exists() else json.loads(spec)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--alloc: not a tier name, 'equal', or JSON counts ({exc.msg})") from None
    if isinstance(raw, dict):
        raw = raw.get("counts")
    alloc = Allocation(tuple(tuple(r) for r in raw))
    try:
        validate(alloc, setup.workload, setup.support)
    except ContractError as exc:
        raise ConfigError(f"--alloc: {exc}") from None
    return alloc


def cmd_spacesize(args) -> int:
    if args.uniform:
        workload = uniform_workload(*args.uniform)
    else:
        workload = load_workload(args.workload)
    if args.n_tiers < 1:
        raise ConfigError("--n-tiers must be >= 1")
    per_row = search_space_size(workload, args.n_tiers, "per_row")
    per_count = search_space_size(workload, args.n_tiers, "per_count")
    print(f"workload {workload.name}: {len(workload)} layers, {workload.total_rows} rows, {args.n_tiers} tiers")
    print(f"per_row   log10 = {per_row:.2f}")
    print(f"per_count log10 = {per_count:.2f}")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        write_json(args.out / "spacesize.json", {"workload": workload.name, "n_tiers": args.n_tiers,
                                                 "per_row_log10": per_row, "per_count_log10": per_count})
    return EXIT_OK


def cmd_search(args) -> int:
    cfg = _run_config(args)
    if cfg.tri_objective:
        raise ConfigError("--tri-objective needs accuracy evaluation; use the pipeline subcommand")
    front = search_only(cfg)
    print(f"{len(front.members)} front members")
    for alloc, obj in front.members:
        print(f"  {obj[0]:.6g} s  {obj[1]:.6g} J  {alloc.digest()}")
    return EXIT_OK


def cmd_bruteforce(args) -> int:
    front = bruteforce(_run_config(args))
    print(f"exact front: {len(front.members)} members")
    for alloc, obj in front.members:
        print(f"  {obj[0]:.6g} s  {obj[1]:.6g} J  {alloc.digest()}")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    summary = run_pipeline(_run_config(args))
    f = summary["final"]
    print(f"fidelity order: {' > '.join(summary['fidelity_order'])}")
    print(f"start {summary['start']['digest']}  ->  final {f['digest']}")
    print(f"final latency {f['latency_s']:.6g} s, energy {f['energy_j']:.6g} J, accuracy {f['accuracy']:.4f}, "
          f"degradation {f['degradation']:.4f}, met={summary['met']} after {summary['remap_iterations']} shifts")
    for s in summary["strategies"]:
        print(f"  {s['name']:<20} {s['latency_s']:.4g} s  {s['energy_j']:.4g} J  quality {s['quality']:.4f}"
              f"{'' if s['valid'] else '  (invalid)'}")
    return EXIT_OK if summary["met"] else EXIT_UNMET


def cmd_remap(args) -> int:
    cfg = _run_config(args)
    setup = prepare(cfg)
    start = _parse_alloc(args.alloc, setup) if args.alloc else _parse_alloc(setup.order[-1].value, setup)
    rr = remap(start, setup.workload, setup.evaluator, setup.profile, setup.order, cfg.remap)
    print(f"start {start.digest()}  ->  final {rr.final.digest()}  after {rr.iterations} shifts, "
          f"degradation {setup.evaluator.degradation(rr.result):.4f}, met={rr.met}")
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        write_remap_trace(out / "remap_trace.csv", rr.trace)
        obj = setup.cost.objectives(rr.final)
        write_json(out / "summary.json", {"start": start.digest(), "final": rr.final.digest(),
                                          "counts": [list(r) for r in rr.final.counts], "met": rr.met,
                                          "iterations": rr.iterations, "latency_s": obj[0], "energy_j": obj[1],
                                          "accuracy": rr.result.accuracy,
                                          "degradation": setup.evaluator.degradation(rr.result),
                                          "fidelity_order": setup.order, "config": cfg.to_dict()})
    return EXIT_OK if rr.met else EXIT_UNMET


def cmd_evaluate(args) -> int:
    cfg = _run_config(args)
    setup = prepare(cfg)
    alloc = _parse_alloc(args.alloc, setup)
    lat, en = setup.cost.objectives(alloc)
    result = setup.evaluator.evaluate(assign_sorted(setup, alloc))
    deg = setup.evaluator.degradation(result)
    print(f"allocation {alloc.digest()}")
    print(f"latency {lat:.6g} s  energy {en:.6g} J  accuracy {result.accuracy:.4f}  perplexity "
          f"{result.perplexity:.4f}  degradation {deg:.4f}  (acc0 {result.acc0:.4f})")
    if cfg.out:
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        write_json(Path(cfg.out) / "evaluate.json", {"digest": alloc.digest(), "latency_s": lat, "energy_j": en,
                                                     "accuracy": result.accuracy, "perplexity": result.perplexity,
                                                     "degradation": deg, "config": cfg.to_dict()})
    return EXIT_OK


def cmd_report(args) -> int:
    if args.input:
        strategies = read_strategies(args.input)
        valid = [s for s in strategies if s.valid]
        scores = dict(zip([s.name for s in valid], lep_score(valid)))
        rows = [{"strategy": s.name, "latency_s": s.latency_s, "energy_j": s.energy_j, "quality": s.quality,
                 "valid": s.valid, "lep": scores.get(s.name)} for s in strategies]
    else:
        cfg = _run_config(args)
        setup = prepare(cfg)
        rows = lep_rows(run_homogeneous_baselines(setup) + [run_equal_distribution(setup)])
    for r in rows:
        lep = "   n/a" if r["lep"] is None else f"{r['lep']:.3f}"
        print(f"{r['strategy']:<22} {r['latency_s']:.4g}  {r['energy_j']:.4g}  {r['quality']:.4f}  LEP {lep}")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        write_lep(args.out / "lep.csv", rows)
    return EXIT_OK


COMMANDS = {"spacesize": cmd_spacesize, "search": cmd_search, "remap": cmd_remap, "pipeline": cmd_pipeline,
            "evaluate": cmd_evaluate, "bruteforce": cmd_bruteforce, "report": cmd_report}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"hetmap: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ContractError as exc:
        print(f"hetmap: contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
