"""Stage 1: NSGA-II over per-layer row-count allocations.

The genome is an ``L x n`` integer matrix: ``counts[l][i]`` rows of layer ``l``
go to tier ``i`` (columns follow ``support.tiers``). Each layer's counts sum
to its row count and unsupported (layer, tier) cells stay zero. Accuracy is
not part of the loop; the returned front is screened for accuracy afterwards.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from . import rng as rngmod
from .errors import ContractError
from .metrics import hypervolume
from .tiers import TierSpec, order_tiers, share_cost
from .workload import TierSupportMatrix, Workload

log = logging.getLogger(__name__)

Counts = tuple[tuple[int, ...], ...]


@dataclass(frozen=True, order=True)
class Allocation:
    counts: Counts

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(tuple(int(c) for c in row) for row in self.counts))

    @classmethod
    def from_array(cls, arr) -> "Allocation":
        return cls(tuple(map(tuple, np.asarray(arr, dtype=np.int64).tolist())))

    @property
    def array(self) -> np.ndarray:
        return np.array(self.counts, dtype=np.int64)

    @property
    def n_layers(self) -> int:
        return len(self.counts)

    def tier_totals(self) -> list[int]:
        return [sum(col) for col in zip(*self.counts)]

    def digest(self) -> str:
        return "|".join("-".join(str(c) for c in row) for row in self.counts)


class ObjectiveVector(NamedTuple):
    latency_s: float
    energy_j: float


def validate(alloc: Allocation, workload: Workload, support: TierSupportMatrix) -> None:
    """Raise ContractError unless ``alloc`` satisfies both allocation invariants."""
    n = len(support.tiers)
    if alloc.n_layers != len(workload):
        raise ContractError(f"allocation has {alloc.n_layers} layers, workload has {len(workload)}")
    for l, (row, layer) in enumerate(zip(alloc.counts, workload)):
        if len(row) != n:
            raise ContractError(f"layer {l}: expected {n} tier counts, got {len(row)}")
        if any(c < 0 for c in row):
            raise ContractError(f"layer {l}: negative count in {row}")
        if sum(row) != layer.rows:
            raise ContractError(f"layer {l} ({layer.name}): counts {row} sum to {sum(row)}, expected {layer.rows}")
        for c, ok, tier in zip(row, support.mask(layer), support.tiers):
            if c and not ok:
                raise ContractError(f"layer {l} ({layer.name}): {c} rows on {tier.value}, which does not support "
                                    f"{layer.op_kind.value}")


class CostModel:
    """Memoised per-share costs for one (workload, tiers, support) triple."""

    def __init__(self, workload: Workload, tiers: Sequence[TierSpec], support: TierSupportMatrix):
        self.workload = workload
        self.support = support
        self.tiers = order_tiers(tiers, support.tiers)
        self._share = lru_cache(maxsize=None)(self._share_uncached)

    def _share_uncached(self, layer_idx: int, tier_idx: int, rows: int):
        c = share_cost(self.tiers[tier_idx], self.workload.layers[layer_idx], rows, self.support)
        return c.latency_s, c.energy_j

    def share(self, layer_idx: int, tier_idx: int, rows: int) -> tuple[float, float]:
        return self._share(layer_idx, tier_idx, rows)

    def layer(self, layer_idx: int, row_counts: Sequence[int]) -> tuple[float, float]:
        lat, energy = 0.0, 0.0
        for i, r in enumerate(row_counts):
            s_lat, s_e = self._share(layer_idx, i, int(r))
            lat = max(lat, s_lat)
            energy += s_e
        return lat, energy

    def objectives(self, alloc: Allocation) -> ObjectiveVector:
        lat, energy = 0.0, 0.0
        for l, row in enumerate(alloc.counts):
            l_lat, l_e = self.layer(l, row)
            lat += l_lat
            energy += l_e
        return ObjectiveVector(lat, energy)


def objectives(alloc: Allocation, workload: Workload, tiers: Sequence[TierSpec],
               support: TierSupportMatrix | None = None) -> ObjectiveVector:
    """Latency is the sum over layers of the slowest tier share; energy sums everything."""
    support = support or TierSupportMatrix.default()
    validate(alloc, workload, support)
    return CostModel(workload, tiers, support).objectives(alloc)


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    better = False
    for x, y in zip(a, b):
        if x > y:
            return False
        if x < y:
            better = True
    return better


def non_dominated_sort(points: Sequence[Sequence[float]]) -> list[list[int]]:
    """Partition point indices into successive non-dominated fronts."""
    n = len(points)
    if n == 0:
        raise ContractError("non_dominated_sort needs at least one point")
    pts = np.asarray(points, dtype=float)
    le = np.all(pts[:, None, :] <= pts[None, :, :], axis=2)
    lt = np.any(pts[:, None, :] < pts[None, :, :], axis=2)
    dom = le & lt  # dom[p, q]: p dominates q
    dominated_count = dom.sum(axis=0)
    fronts = []
    current = [i for i in range(n) if dominated_count[i] == 0]
    while current:
        fronts.append(current)
        nxt = []
        for p in current:
            for q in np.flatnonzero(dom[p]):
                dominated_count[q] -= 1
                if dominated_count[q] == 0:
                    nxt.append(int(q))
        current = sorted(nxt)
    return fronts


def crowding_distance(front: Sequence[Sequence[float]]) -> list[float]:
    n = len(front)
    if n == 0:
        raise ContractError("crowding_distance needs a non-empty front")
    pts = np.asarray(front, dtype=float)
    dist = np.zeros(n)
    for m in range(pts.shape[1]):
        order = np.argsort(pts[:, m], kind="stable")
        vals = pts[order, m]
        dist[order[0]] = dist[order[-1]] = math.inf
        span = vals[-1] - vals[0]
        if span == 0 or n < 3:
            continue
        dist[order[1:-1]] += (vals[2:] - vals[:-2]) / span
    return dist.tolist()


def _largest_remainder(weights: Sequence[int], total: int) -> list[int]:
    """Split ``total`` proportionally to integer ``weights`` (sum > 0).

    Leftover units go to the largest remainders; ties favour the lower index.
    """
    s = sum(weights)
    base = [w * total // s for w in weights]
    rems = [w * total % s for w in weights]
    left = total - sum(base)
    for i in sorted(range(len(weights)), key=lambda i: (-rems[i], i))[:left]:
        base[i] += 1
    return base


def make_feasible(raw, workload: Workload, support: TierSupportMatrix) -> Allocation:
    """Repair an arbitrary non-negative integer matrix into a valid allocation.

    Unsupported cells are zeroed, then each layer is rescaled to its row count by
    largest-remainder rounding. A layer with no mass left on supported tiers is
    split evenly across them.
    """
    raw = np.asarray(raw, dtype=np.int64)
    if raw.shape != (len(workload), len(support.tiers)):
        raise ContractError(f"raw matrix shape {raw.shape} != {(len(workload), len(support.tiers))}")
    if (raw < 0).any():
        raise ContractError("raw counts must be non-negative")
    rows = []
    for layer, r in zip(workload, raw.tolist()):
        mask = support.mask(layer)
        if not any(mask):
            raise ContractError(f"layer {layer.name!r} has no supporting tier")
        w = [c if ok else 0 for c, ok in zip(r, mask)]
        if sum(w) == 0:
            w = [1 if ok else 0 for ok in mask]
        rows.append(tuple(_largest_remainder(w, layer.rows)))
    return Allocation(tuple(rows))


def crossover(parent_a: Allocation, parent_b: Allocation, p_co: float, rng: np.random.Generator,
              workload: Workload | None = None, support: TierSupportMatrix | None = None
              ) -> tuple[Allocation, Allocation]:
    """Uniform layer-wise exchange, applied with probability ``p_co``."""
    if parent_a.n_layers != parent_b.n_layers:
        raise ContractError("parents come from different workloads")
    if rng.random() >= p_co:
        return parent_a, parent_b
    swap = rng.random(parent_a.n_layers) < 0.5
    a = [rb if s else ra for ra, rb, s in zip(parent_a.counts, parent_b.counts, swap)]
    b = [ra if s else rb for ra, rb, s in zip(parent_a.counts, parent_b.counts, swap)]
    child_a, child_b = Allocation(tuple(a)), Allocation(tuple(b))
    if workload is not None and support is not None:
        child_a = make_feasible(child_a.array, workload, support)
        child_b = make_feasible(child_b.array, workload, support)
    return child_a, child_b


def mutate(alloc: Allocation, p_mu: float, mutation_step: int | None, rng: np.random.Generator,
           workload: Workload, support: TierSupportMatrix) -> Allocation:
    """Per layer, with probability ``p_mu``, move 1..mutation_step rows between supported tiers.

    ``mutation_step=None`` lets a move take anything up to the layer's row count.
    """
    if mutation_step is not None and mutation_step < 1:
        raise ContractError(f"mutation_step must be >= 1, got {mutation_step}")
    rows = [list(r) for r in alloc.counts]
    changed = False
    for l, layer in enumerate(workload):
        if rng.random() >= p_mu:
            continue
        mask = support.mask(layer)
        donors = [i for i, c in enumerate(rows[l]) if c > 0 and mask[i]]
        allowed = [i for i, ok in enumerate(mask) if ok]
        if not donors or len(allowed) < 2:
            continue
        src = donors[rng.integers(len(donors))]
        targets = [i for i in allowed if i != src]
        dst = targets[rng.integers(len(targets))]
        step = layer.rows if mutation_step is None else mutation_step
        k = min(int(rng.integers(1, step + 1)), rows[l][src])
        rows[l][src] -= k
        rows[l][dst] += k
        changed = True
    return Allocation(tuple(map(tuple, rows))) if changed else alloc


@dataclass(frozen=True)
class SearchConfig:
    population: int = 40
    generations: int = 50
    crossover_rate: float = 0.9
    mutation_rate: float = 0.5
    seed: int = 0
    mutation_step: int | None = None
    debug_validate: bool = False

    def __post_init__(self):
        if self.population < 4 or self.population % 2:
            raise ContractError(f"population must be even and >= 4, got {self.population}")
        if self.generations < 1:
            raise ContractError(f"generations must be >= 1, got {self.generations}")
        for name in ("crossover_rate", "mutation_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ContractError(f"{name} must be in [0, 1], got {v}")
        if self.mutation_step is not None and self.mutation_step < 1:
            raise ContractError(f"mutation_step must be >= 1, got {self.mutation_step}")


@dataclass
class FrontArchive:
    members: list[tuple[Allocation, tuple[float, ...]]]
    generation_log: list[dict] = field(default_factory=list)

    @property
    def allocations(self) -> list[Allocation]:
        return [a for a, _ in self.members]

    @property
    def points(self) -> list[tuple[float, ...]]:
        return [o for _, o in self.members]


def random_composition(total: int, allowed: Sequence[int], n: int, rng: np.random.Generator) -> list[int]:
    """Uniform draw among all ways to split ``total`` rows over the ``allowed`` tiers."""
    k = len(allowed)
    cuts = np.sort(rng.choice(total + k - 1, size=k - 1, replace=False)) if k > 1 else np.array([], dtype=int)
    bounds = np.concatenate(([-1], cuts, [total + k - 1]))
    parts = np.diff(bounds) - 1
    out = [0] * n
    for i, p in zip(allowed, parts):
        out[i] = int(p)
    return out


def initial_population(workload: Workload, support: TierSupportMatrix, size: int,
                       rng: np.random.Generator) -> list[Allocation]:
    """A third uniform-random, a third homogeneous per layer, the rest Dirichlet splits."""
    n = len(support.tiers)
    pop = []
    n_uniform = size // 3
    n_homog = size // 3
    for k in range(size):
        rows = []
        for layer in workload:
            allowed = [i for i, ok in enumerate(support.mask(layer)) if ok]
            if k < n_uniform:
                rows.append(random_composition(layer.rows, allowed, n, rng))
            elif k < n_uniform + n_homog:
                r = [0] * n
                r[allowed[rng.integers(len(allowed))]] = layer.rows
                rows.append(r)
            else:
                w = rng.dirichlet(np.ones(len(allowed)))
                weights = [0] * n
                for i, wi in zip(allowed, w):
                    weights[i] = int(round(wi * 1_000_000))
                if sum(weights) == 0:
                    weights[allowed[0]] = 1
                rows.append(_largest_remainder(weights, layer.rows))
        pop.append(Allocation(tuple(map(tuple, rows))))
    return pop


def _ranks_and_crowding(points: Sequence[Sequence[float]]) -> tuple[list[int], list[float]]:
    fronts = non_dominated_sort(points)
    rank = [0] * len(points)
    crowd = [0.0] * len(points)
    for r, front in enumerate(fronts):
        cd = crowding_distance([points[i] for i in front])
        for i, d in zip(front, cd):
            rank[i] = r
            crowd[i] = d
    return rank, crowd


def _tournament(pop: list[Allocation], rank: list[int], crowd: list[float], rng: np.random.Generator) -> Allocation:
    i, j = (int(x) for x in rng.integers(len(pop), size=2))
    key_i = (rank[i], -crowd[i], pop[i].counts)
    key_j = (rank[j], -crowd[j], pop[j].counts)
    return pop[i] if key_i <= key_j else pop[j]


def _environmental_selection(pop: list[Allocation], objs: list[tuple], size: int) -> list[int]:
    fronts = non_dominated_sort(objs)
    chosen: list[int] = []
    for front in fronts:
        if len(chosen) + len(front) <= size:
            chosen.extend(front)
            continue
        cd = crowding_distance([objs[i] for i in front])
        ranked = sorted(zip(front, cd), key=lambda t: (-t[1], pop[t[0]].counts))
        chosen.extend(i for i, _ in ranked[: size - len(chosen)])
        break
    return chosen


def _dedupe(pop: list[Allocation], objs: list[tuple]) -> tuple[list[Allocation], list[tuple]]:
    seen = set()
    uniq, dups = [], []
    for a, o in zip(pop, objs):
        (dups if a in seen else uniq).append((a, o))
        seen.add(a)
    merged = uniq + dups
    return [a for a, _ in merged], [o for _, o in merged]


def _trace_entry(generation: int, objs: list[tuple], ref: Sequence[float]) -> dict:
    first = [objs[i] for i in non_dominated_sort(objs)[0]]
    inside = [p[:2] for p in first if p[0] <= ref[0] and p[1] <= ref[1] and (p[0] < ref[0] or p[1] < ref[1])]
    return {
        "generation": generation,
        "best_latency_s": min(o[0] for o in objs),
        "best_energy_j": min(o[1] for o in objs),
        "hypervolume": hypervolume(inside, ref) if inside else 0.0,
    }


def evolve(workload: Workload, tiers: Sequence[TierSpec], support: TierSupportMatrix, cfg: SearchConfig,
           objective_fn: Callable[[Allocation, int, int], tuple[float, ...]] | None = None,
           threads: int = 1, stop: Callable[[list[tuple]], bool] | None = None) -> FrontArchive:
    """Run NSGA-II and return the final first front plus a per-generation trace.

    ``objective_fn(alloc, generation, index)`` replaces the latency/energy
    objectives (the tri-objective comparison mode uses it). ``stop`` is checked
    on the population's objectives after each generation.
    """
    cost = CostModel(workload, tiers, support)
    rng = rngmod.stream(cfg.seed, "evolve")

    def evaluate(batch: list[Allocation], gen: int) -> list[tuple]:
        if objective_fn is None:
            return [tuple(cost.objectives(a)) for a in batch]
        jobs = [(a, gen, k) for k, a in enumerate(batch)]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                return list(ex.map(lambda j: tuple(objective_fn(*j)), jobs))
        return [tuple(objective_fn(*j)) for j in jobs]

    def check(batch: Iterable[Allocation]):
        if cfg.debug_validate:
            for a in batch:
                validate(a, workload, support)

    pop = initial_population(workload, support, cfg.population, rng)
    check(pop)
    objs = evaluate(pop, 0)
    ref = tuple(1.1 * max(o[m] for o in objs) for m in range(2))
    trace = [_trace_entry(0, objs, ref)]

    for gen in range(1, cfg.generations + 1):
        rank, crowd = _ranks_and_crowding(objs)
        parents = [_tournament(pop, rank, crowd, rng) for _ in range(cfg.population)]
        offspring = []
        for a, b in zip(parents[0::2], parents[1::2]):
            ca, cb = crossover(a, b, cfg.crossover_rate, rng, workload, support)
            for child in (ca, cb):
                child = mutate(child, cfg.mutation_rate, cfg.mutation_step, rng, workload, support)
                offspring.append(make_feasible(child.array, workload, support))
        check(offspring)
        off_objs = evaluate(offspring, gen)
        merged, merged_objs = _dedupe(pop + offspring, objs + off_objs)
        keep = _environmental_selection(merged, merged_objs, cfg.population)
        pop = [merged[i] for i in keep]
        objs = [merged_objs[i] for i in keep]
        trace.append(_trace_entry(gen, objs, ref))
        log.debug("gen %d: %s", gen, trace[-1])
        if stop is not None and stop(objs):
            break

    first = non_dominated_sort(objs)[0]
    seen = set()
    members = []
    for i in sorted(first, key=lambda i: (objs[i], pop[i].counts)):
        if pop[i] in seen:
            continue
        seen.add(pop[i])
        o = objs[i]
        members.append((pop[i], ObjectiveVector(*o) if len(o) == 2 else o))
    return FrontArchive(members, trace)


def layer_compositions(layer_rows: int, mask: Sequence[bool]) -> list[tuple[int, ...]]:
    n = len(mask)
    allowed = [i for i, ok in enumerate(mask) if ok]
    out = []
    for cuts in itertools.combinations(range(layer_rows + len(allowed) - 1), len(allowed) - 1):
        bounds = (-1, *cuts, layer_rows + len(allowed) - 1)
        row = [0] * n
        for i, (lo, hi) in zip(allowed, zip(bounds, bounds[1:])):
            row[i] = hi - lo - 1
        out.append(tuple(row))
    return out


def exhaustive_front(workload: Workload, tiers: Sequence[TierSpec], support: TierSupportMatrix,
                     limit: int = 2_000_000) -> FrontArchive:
    """Exact Pareto front by enumerating every allocation."""
    cost = CostModel(workload, tiers, support)
    per_layer = [layer_compositions(layer.rows, support.mask(layer)) for layer in workload]
    size = math.prod(len(p) for p in per_layer)
    if size > limit:
        raise ContractError(f"{size} allocations exceed the enumeration limit {limit}")
    lat = np.zeros(1)
    en = np.zeros(1)
    for l, comps in enumerate(per_layer):
        lc = np.array([cost.layer(l, c) for c in comps])
        lat = (lat[:, None] + lc[None, :, 0]).ravel()
        en = (en[:, None] + lc[None, :, 1]).ravel()
    # sweep for the non-dominated set: sort by (latency, energy)
    order = np.lexsort((en, lat))
    members = []
    best_e = math.inf
    last = None
    shape = [len(p) for p in per_layer]
    for flat in order:
        point = (float(lat[flat]), float(en[flat]))
        if point[1] < best_e or (last is not None and point == last):
            best_e = min(best_e, point[1])
            idx = np.unravel_index(flat, shape)
            alloc = Allocation(tuple(per_layer[l][int(k)] for l, k in enumerate(idx)))
            members.append((alloc, ObjectiveVector(*point)))
            last = point
    return FrontArchive(members)


def select_best_accuracy(front: FrontArchive, evaluator, sensitivity, fidelity_order, tau: float):
    """Screen a front for accuracy.

    Every member gets the sensitivity-sorted row assignment and is evaluated
    under the same noise seed. Returns ``(allocation, assignment, met, result)``
    for the member with the best quality; ties go to lower latency, then lower
    energy. ``met`` tells whether that member's degradation is within ``tau``.
    """
    from .remap import sensitivity_sorted_assignment

    if not front.members:
        raise ContractError("select_best_accuracy needs a non-empty front")
    best = None
    for alloc, obj in front.members:
        assignment = sensitivity_sorted_assignment(alloc, sensitivity, fidelity_order, evaluator.support)
        result = evaluator.evaluate(assignment)
        key = (evaluator.degradation(result), tuple(obj), alloc.counts)
        if best is None or key < best[0]:
            best = (key, alloc, assignment, result)
    _, alloc, assignment, result = best
    return alloc, assignment, evaluator.degradation(result) <= tau, result
