"""Two-stage mapping flow: Pareto search, accuracy screen, row remap, reporting."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng as rngmod
from .errors import ConfigError
from .metrics import StrategyResult, lep_score
from .noise import NoiseConfig
from .remap import RemapConfig, RowAssignment, remap, sensitivity_sorted_assignment
from .search import (Allocation, CostModel, FrontArchive, ObjectiveVector, SearchConfig, evolve,
                     exhaustive_front, make_feasible, non_dominated_sort, select_best_accuracy)
from .surrogate import (DATA_DIR, AccuracyEvaluator, SurrogateModel, default_perturb_std, load_dataset,
                        row_sensitivity, tier_fidelity_order)
from .tiers import TierSpec, load_tiers, order_tiers
from .workload import TierId, TierSupportMatrix, Workload, load_workload

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    workload: str = "toy_mlp"
    tiers: str = "tiers_default"
    seed: int = 0
    out: str | None = None
    search: SearchConfig = field(default_factory=SearchConfig)
    remap: RemapConfig = field(default_factory=RemapConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    metric: str = "accuracy"
    probes: int = 256
    validation_seeds: int = 5
    threads: int = 1
    tri_objective: bool = False
    support: dict | None = None
    checkpoint: str = "checkpoint"
    dataset: str = "test"

    def to_dict(self) -> dict:
        """Resolved configuration; the output directory is left out so artifacts do not depend on it."""
        d = asdict(self)
        del d["out"]
        d["support"] = self.support_matrix().to_dict()
        return d

    def support_matrix(self) -> TierSupportMatrix:
        return TierSupportMatrix.from_dict(self.support) if self.support else TierSupportMatrix.default()


@dataclass
class Setup:
    """Everything a run needs, resolved once from a RunConfig."""

    cfg: RunConfig
    workload: Workload
    tiers: list[TierSpec]
    support: TierSupportMatrix
    cost: CostModel
    evaluator: AccuracyEvaluator | None = None
    order: list[TierId] | None = None
    profile: object = None


def prepare(cfg: RunConfig, accuracy: bool = True) -> Setup:
    support = cfg.support_matrix()
    workload = load_workload(cfg.workload, support)
    tiers = order_tiers(load_tiers(cfg.tiers), support.tiers)
    setup = Setup(cfg, workload, tiers, support, CostModel(workload, tiers, support))
    if not accuracy:
        return setup
    ckpt = Path(cfg.checkpoint)
    model = SurrogateModel.load(ckpt if ckpt.with_suffix(".json").exists() else DATA_DIR / ckpt)
    shapes = [(layer.rows, layer.cols) for layer in workload]
    if shapes != [w.shape for w in model.weights]:
        raise ConfigError(f"workload {workload.name!r} does not match the surrogate model shapes "
                          f"{[w.shape for w in model.weights]}; accuracy evaluation needs the toy_mlp descriptor")
    x, y = load_dataset(cfg.dataset)
    setup.evaluator = AccuracyEvaluator(model, x, y, tiers, support, cfg.noise,
                                        seed=rngmod.child_seed(cfg.seed, "evaluate"), metric=cfg.metric)
    energy = {t.tier_id: _homogeneous_objectives(setup, t.tier_id)[1] for t in tiers}
    setup.order = tier_fidelity_order(model, x, y, tiers, cfg.noise, seed=rngmod.child_seed(cfg.seed, "fidelity"),
                                      energy=energy)
    std = default_perturb_std(model, order_tiers(tiers, setup.order)[-1])
    setup.profile = row_sensitivity(model, x, y, cfg.probes, std, rngmod.stream(cfg.seed, "sensitivity"))
    return setup


def _homogeneous_objectives(setup: Setup, tier: TierId) -> ObjectiveVector:
    # priced with a permissive matrix so unsupported baselines still get numbers
    permissive = TierSupportMatrix.permissive(setup.support.tiers)
    cost = CostModel(setup.workload, setup.tiers, permissive)
    return cost.objectives(_homogeneous_alloc(setup, tier))


def _homogeneous_alloc(setup: Setup, tier: TierId) -> Allocation:
    col = list(setup.support.tiers).index(TierId(tier))
    return Allocation(tuple(tuple(layer.rows if i == col else 0 for i in range(len(setup.support.tiers)))
                            for layer in setup.workload))


def _strategy(setup: Setup, name: str, obj, assignment: RowAssignment | None, valid: bool = True):
    """StrategyResult plus the evaluated accuracy and degradation (None without a model)."""
    ev = setup.evaluator
    if ev is None or assignment is None:
        return StrategyResult(name, obj[0], obj[1], 0.0, valid), None
    result = ev.evaluate(assignment)
    return StrategyResult(name, obj[0], obj[1], ev.quality(result), valid), result


def run_homogeneous_baselines(setup: Setup) -> list[dict]:
    """All-one-tier mappings; a tier that cannot run some op is flagged invalid."""
    out = []
    for tier in setup.support.tiers:
        valid = all(setup.support.allows(layer.op_kind, tier) for layer in setup.workload)
        obj = _homogeneous_objectives(setup, tier)
        assignment = None
        if setup.evaluator is not None:
            col = list(setup.support.tiers).index(tier)
            assignment = RowAssignment(tuple(np.full(layer.rows, col) for layer in setup.workload), setup.support.tiers)
        strat, result = _strategy(setup, f"100% {tier.value}", obj, assignment, valid)
        out.append(_record(setup, strat, _homogeneous_alloc(setup, tier), result))
    return out


def equal_distribution(workload: Workload, support: TierSupportMatrix) -> Allocation:
    """Rows split as evenly as possible over each layer's supported tiers."""
    raw = [[1 if ok else 0 for ok in support.mask(layer)] for layer in workload]
    return make_feasible(raw, workload, support)


def run_equal_distribution(setup: Setup) -> dict:
    alloc = equal_distribution(setup.workload, setup.support)
    strat, result = _strategy(setup, "Equal Distribution", setup.cost.objectives(alloc), assign_sorted(setup, alloc))
    return _record(setup, strat, alloc, result)


def assign_sorted(setup: Setup, alloc: Allocation) -> RowAssignment | None:
    if setup.evaluator is None:
        return None
    return sensitivity_sorted_assignment(alloc, setup.profile, setup.order, setup.support)


def _record(setup: Setup, strat: StrategyResult, alloc: Allocation, result) -> dict:
    rec = {"strategy": strat, "allocation": alloc, "result": result}
    if result is not None:
        rec["degradation"] = setup.evaluator.degradation(result)
        rec["met"] = rec["degradation"] <= setup.cfg.remap.tau
    return rec


def _tri_objective_fn(setup: Setup):
    ev = setup.evaluator

    def fn(alloc: Allocation, generation: int, index: int) -> tuple[float, float, float]:
        lat, en = setup.cost.objectives(alloc)
        return lat, en, ev.degradation(ev.evaluate(assign_sorted(setup, alloc)))
    return fn


def run_search(setup: Setup) -> FrontArchive:
    cfg = replace(setup.cfg.search, seed=rngmod.child_seed(setup.cfg.seed, "search"))
    fn = _tri_objective_fn(setup) if setup.cfg.tri_objective else None
    return evolve(setup.workload, setup.tiers, setup.support, cfg, objective_fn=fn, threads=setup.cfg.threads)


def _validate_seeds(setup: Setup, assignment: RowAssignment) -> list[float]:
    ev = setup.evaluator
    return [ev.degradation(ev.evaluate(assignment, seed=rngmod.child_seed(setup.cfg.seed, "validate", k)))
            for k in range(setup.cfg.validation_seeds)]


def run_pipeline(cfg: RunConfig) -> dict:
    """Stage 1 search, accuracy screen, Stage 2 remap when needed; writes artifacts to ``cfg.out``.

    Returns the summary dictionary (also written as summary.json).
    """
    t0 = time.perf_counter()
    setup = prepare(cfg)
    ev = setup.evaluator
    front = run_search(setup)
    log.info("stage 1: %d front members in %.2f s", len(front.members), time.perf_counter() - t0)

    screened = []
    for alloc, obj in front.members:
        result = ev.evaluate(assign_sorted(setup, alloc))
        screened.append((alloc, obj, result))

    remap_trace: list[dict] = []
    if cfg.tri_objective:
        feasible = [(o[0], o[1], a.counts, a, r) for a, o, r in screened if ev.degradation(r) <= cfg.remap.tau]
        if feasible:
            *_, start, result = min(feasible)
        else:
            start, _, result = min(screened, key=lambda t: (ev.degradation(t[2]), tuple(t[1]), t[0].counts))
        final, assignment = start, assign_sorted(setup, start)
        met = ev.degradation(result) <= cfg.remap.tau
        iterations = 0
    else:
        start, assignment, met, result = select_best_accuracy(front, ev, setup.profile, setup.order, cfg.remap.tau)
        final, iterations = start, 0
        if not met:
            rr = remap(start, setup.workload, ev, setup.profile, setup.order, cfg.remap)
            final, assignment, met, result, remap_trace, iterations = (rr.final, rr.assignment, rr.met, rr.result,
                                                                       rr.trace, rr.iterations)
    log.info("pipeline done in %.2f s (%d accuracy evaluations)", time.perf_counter() - t0, ev.calls)

    start_obj = setup.cost.objectives(start)
    final_obj = setup.cost.objectives(final)
    gaps = _validate_seeds(setup, assignment)
    baselines = run_homogeneous_baselines(setup)
    equal = run_equal_distribution(setup)
    po, po_result = _strategy(setup, "PO", start_obj, assign_sorted(setup, start))
    final_name = "Tri-objective" if cfg.tri_objective else "PO+RR"
    strategies = baselines + [equal, _record(setup, po, start, po_result),
                              {"strategy": StrategyResult(final_name, final_obj[0], final_obj[1], ev.quality(result)),
                               "allocation": final, "result": result, "degradation": ev.degradation(result),
                               "met": met}]
    lep = lep_rows(strategies)

    satisfying = [s["strategy"].latency_s for s in baselines if s["strategy"].valid and s.get("met")]
    summary = {
        "workload": setup.workload.name,
        "mode": "tri-objective" if cfg.tri_objective else "two-stage",
        "fidelity_order": [t.value for t in setup.order],
        "acc0": ev.acc0,
        "baseline_perplexity": ev.baseline.perplexity,
        "front_size": len(front.members),
        "start": _alloc_summary(start, start_obj),
        "final": {**_alloc_summary(final, final_obj), "accuracy": result.accuracy, "perplexity": result.perplexity,
                  "degradation": ev.degradation(result)},
        "met": met,
        "remap_iterations": iterations,
        "validation": {"degradations": gaps, "met_count": sum(g <= cfg.remap.tau for g in gaps),
                       "majority_met": sum(g <= cfg.remap.tau for g in gaps) * 2 > len(gaps)},
        "best_satisfying_homogeneous_latency_s": min(satisfying) if satisfying else None,
        "strategies": [_strategy_summary(s) for s in strategies],
        "seeds": {"root": cfg.seed, "search": rngmod.child_seed(cfg.seed, "search"),
                  "evaluate": ev.seed, "sensitivity_stream": "sensitivity",
                  "validate": [rngmod.child_seed(cfg.seed, "validate", k) for k in range(cfg.validation_seeds)]},
        "sensitivity": {"probes": setup.profile.num_probes, "perturb_std": list(setup.profile.perturb_std)},
        "tiers": [t.to_dict() for t in setup.tiers],
        "config": cfg.to_dict(),
    }
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        write_front(out / "front.csv", [(a, o, ev.quality(r) if cfg.metric == "perplexity" else r.accuracy)
                                        for a, o, r in screened], metric=cfg.metric)
        write_trace(out / "trace.csv", front.generation_log)
        write_remap_trace(out / "remap_trace.csv", remap_trace)
        write_lep(out / "lep.csv", lep)
        write_json(out / "summary.json", summary)
    return summary


def _alloc_summary(alloc: Allocation, obj) -> dict:
    return {"counts": [list(r) for r in alloc.counts], "digest": alloc.digest(),
            "latency_s": obj[0], "energy_j": obj[1]}


def _strategy_summary(rec: dict) -> dict:
    s = rec["strategy"]
    d = {"name": s.name, "latency_s": s.latency_s, "energy_j": s.energy_j, "quality": s.quality, "valid": s.valid,
         "digest": rec["allocation"].digest()}
    if rec.get("result") is not None:
        d.update(accuracy=rec["result"].accuracy, degradation=rec["degradation"], met=rec["met"])
    return d


def lep_rows(records: Sequence[dict]) -> list[dict]:
    valid = [r["strategy"] for r in records if r["strategy"].valid]
    scores = dict(zip([s.name for s in valid], lep_score(valid))) if len(valid) >= 2 else {}
    return [{"strategy": r["strategy"].name, "latency_s": r["strategy"].latency_s,
             "energy_j": r["strategy"].energy_j, "quality": r["strategy"].quality,
             "valid": r["strategy"].valid, "lep": scores.get(r["strategy"].name)} for r in records]


# -- artifact writers ------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_front(path: Path, members: Sequence[tuple], metric: str = "accuracy") -> None:
    """members: (allocation, objectives) or (allocation, objectives, accuracy-or-quality)."""
    rows = []
    for m in members:
        alloc, obj = m[0], m[1]
        rows.append([alloc.digest(), float(obj[0]), float(obj[1]), m[2] if len(m) > 2 else None])
    _write_csv(path, ["digest", "latency_s", "energy_j", "perplexity" if metric == "perplexity" else "accuracy"], rows)


def write_trace(path: Path, log_rows: Sequence[dict]) -> None:
    _write_csv(path, ["generation", "best_latency_s", "best_energy_j", "hypervolume"],
               [[r["generation"], r["best_latency_s"], r["best_energy_j"], r["hypervolume"]] for r in log_rows])


REMAP_COLUMNS = ["iteration", "layer", "from_tier", "to_tier", "delta_rows", "accuracy", "gap"]


def write_remap_trace(path: Path, trace: Sequence[dict]) -> None:
    _write_csv(path, REMAP_COLUMNS, [[r[c] for c in REMAP_COLUMNS] for r in trace])


def write_lep(path: Path, rows: Sequence[dict]) -> None:
    cols = ["strategy", "latency_s", "energy_j", "quality", "valid", "lep"]
    _write_csv(path, cols, [[r[c] for c in cols] for r in rows])


def write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(_jsonable(data), indent=1, sort_keys=True) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, TierId):
        return obj.value
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def read_strategies(path: Path) -> list[StrategyResult]:
    """Strategies from a CSV with name/strategy, latency_s, energy_j, quality[, valid] columns."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    out = []
    for i, r in enumerate(rows, start=2):
        try:
            out.append(StrategyResult(r.get("strategy") or r["name"], float(r["latency_s"]), float(r["energy_j"]),
                                      float(r["quality"]), r.get("valid", "true").lower() != "false"))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"{path}:{i}: bad strategy row ({exc})") from None
    return out


def bruteforce(cfg: RunConfig) -> FrontArchive:
    setup = prepare(cfg, accuracy=False)
    front = exhaustive_front(setup.workload, setup.tiers, setup.support)
    if cfg.out:
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        write_front(Path(cfg.out) / "front.csv", front.members)
    return front


def search_only(cfg: RunConfig) -> FrontArchive:
    """Cost-only Stage 1 on any workload."""
    setup = prepare(cfg, accuracy=False)
    front = run_search(setup)
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        write_front(out / "front.csv", front.members)
        write_trace(out / "trace.csv", front.generation_log)
    return front


def front_points(front: FrontArchive) -> list[tuple[float, float]]:
    pts = [tuple(o[:2]) for o in front.points]
    return [pts[i] for i in sorted(non_dominated_sort(pts)[0])] if pts else []
