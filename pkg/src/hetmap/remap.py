"""Stage 2: sensitivity-sorted row assignment and accuracy-driven row remap."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError
from .search import Allocation, validate
from .workload import TierId, TierSupportMatrix, Workload

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RowAssignment:
    """Explicit row -> tier mapping; ``layers[l][r]`` indexes ``tiers``."""

    layers: tuple[np.ndarray, ...]
    tiers: tuple[TierId, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(np.asarray(a, dtype=np.int64) for a in self.layers))
        object.__setattr__(self, "tiers", tuple(TierId(t) for t in self.tiers))

    def histogram(self) -> Allocation:
        n = len(self.tiers)
        return Allocation(tuple(tuple(np.bincount(a, minlength=n).tolist()) for a in self.layers))

    @classmethod
    def homogeneous(cls, workload: Workload, tier: TierId, tiers: Sequence[TierId]) -> "RowAssignment":
        idx = list(tiers).index(TierId(tier))
        return cls(tuple(np.full(layer.rows, idx, dtype=np.int64) for layer in workload), tuple(tiers))


@dataclass(frozen=True)
class RemapConfig:
    tau: float = 0.02
    delta: int = 1
    max_iters: int = 10_000
    seed: int = 0
    scope: str = "layer"  # "layer" (per-layer shifts) or "global" (worst tier model-wide)

    def __post_init__(self):
        if self.tau < 0:
            raise ContractError(f"tau must be >= 0, got {self.tau}")
        if self.delta < 1:
            raise ContractError(f"delta must be >= 1, got {self.delta}")
        if self.max_iters < 0:
            raise ContractError(f"max_iters must be >= 0, got {self.max_iters}")
        if self.scope not in ("layer", "global"):
            raise ContractError(f"scope must be 'layer' or 'global', got {self.scope!r}")


def _order_positions(order: Sequence[TierId], tiers: Sequence[TierId]) -> list[int]:
    """Column index of each tier of ``order`` (best first)."""
    order = [TierId(t) for t in order]
    if sorted(order) != sorted(TierId(t) for t in tiers):
        raise ContractError(f"fidelity order {[t.value for t in order]} does not cover tiers "
                            f"{[TierId(t).value for t in tiers]}")
    cols = [TierId(t) for t in tiers]
    return [cols.index(t) for t in order]


def sensitivity_sorted_assignment(alloc: Allocation, profile, order: Sequence[TierId],
                                  support: TierSupportMatrix) -> RowAssignment:
    """Most sensitive rows go to the best tier, the next ones to the next tier, ...

    Rows are ranked by descending sensitivity; equal sensitivities keep row-index
    order, so uniform profiles fill tiers in ascending row order.
    """
    cols = _order_positions(order, support.tiers)
    sens = profile.s if hasattr(profile, "s") else profile
    if len(sens) != alloc.n_layers:
        raise ContractError(f"profile covers {len(sens)} layers, allocation has {alloc.n_layers}")
    layers = []
    for l, (row, s) in enumerate(zip(alloc.counts, sens)):
        s = np.asarray(s, dtype=float)
        if s.shape != (sum(row),):
            raise ContractError(f"layer {l}: profile has {s.shape[0]} rows, allocation has {sum(row)}")
        ranked = np.argsort(-s, kind="stable")
        out = np.empty(len(s), dtype=np.int64)
        pos = 0
        for c in cols:
            out[ranked[pos:pos + row[c]]] = c
            pos += row[c]
        layers.append(out)
    return RowAssignment(tuple(layers), support.tiers)


@dataclass
class RemapResult:
    final: Allocation
    assignment: RowAssignment
    met: bool
    trace: list[dict] = field(default_factory=list)
    result: object = None
    iterations: int = 0


def _legal_shift(row: Sequence[int], mask: Sequence[bool], cols: Sequence[int], layer_rows: int):
    """(worst column, best column) for one layer, or None when nothing can move up."""
    worst = next((c for c in reversed(cols) if row[c] > 0), None)
    best = next((c for c in cols if mask[c] and row[c] < layer_rows), None)
    if worst is None or best is None or cols.index(best) >= cols.index(worst):
        return None
    return worst, best


def remap(start: Allocation, workload: Workload, evaluator, profile, order: Sequence[TierId],
          cfg: RemapConfig) -> RemapResult:
    """Shift rows from noisy tiers to clean tiers until the degradation is within tau.

    Each iteration picks one layer: the one whose worst used tier sits latest in
    ``order``, ties broken by the largest summed sensitivity of the rows on that
    tier, then by layer index. ``min(rows on worst tier, delta)`` rows of that
    layer move from its worst used tier to the best tier with headroom, and the
    row assignment is rebuilt sensitivity-sorted from the new counts.
    """
    support = evaluator.support
    validate(start, workload, support)
    cols = _order_positions(order, support.tiers)
    sens = profile.s if hasattr(profile, "s") else profile
    counts = [list(r) for r in start.counts]

    def assign():
        return sensitivity_sorted_assignment(Allocation(tuple(map(tuple, counts))), sens, order, support)

    assignment = assign()
    result = evaluator.evaluate(assignment)
    gap = evaluator.degradation(result)
    trace = [{"iteration": 0, "layer": "", "from_tier": "", "to_tier": "", "delta_rows": 0,
              "accuracy": result.accuracy, "gap": gap}]
    it = 0
    while gap > cfg.tau and it < cfg.max_iters:
        choice = None
        candidates = []
        if cfg.scope == "global":
            # worst tier that still has rows anywhere, then the layer holding the most sensitive rows on it
            for c in reversed(cols):
                for l, layer in enumerate(workload):
                    shift = _legal_shift(counts[l], support.mask(layer), cols, layer.rows)
                    if shift and shift[0] == c:
                        candidates.append((l, shift))
                if candidates:
                    break
        else:
            for l, layer in enumerate(workload):
                shift = _legal_shift(counts[l], support.mask(layer), cols, layer.rows)
                if shift:
                    candidates.append((l, shift))
        best_key = None
        for l, (worst, best) in candidates:
            on_worst = assignment.layers[l] == worst
            key = (-cols.index(worst), -float(np.sum(np.asarray(sens[l])[on_worst])), l)
            if best_key is None or key < best_key:
                best_key, choice = key, (l, worst, best)
        if choice is None:
            break
        l, worst, best = choice
        moved = min(counts[l][worst], cfg.delta)
        counts[l][worst] -= moved
        counts[l][best] += moved
        it += 1
        assignment = assign()
        result = evaluator.evaluate(assignment)
        gap = evaluator.degradation(result)
        trace.append({
            "iteration": it,
            "layer": workload.layers[l].name,
            "from_tier": support.tiers[worst].value,
            "to_tier": support.tiers[best].value,
            "delta_rows": moved,
            "accuracy": result.accuracy,
            "gap": gap,
        })
        log.debug("remap it %d: %s", it, trace[-1])
    final = Allocation(tuple(map(tuple, counts)))
    return RemapResult(final, assignment, gap <= cfg.tau, trace, result, it)


def iteration_bound(workload: Workload, delta: int, max_iters: int) -> int:
    return min(max_iters, math.ceil(workload.total_rows / delta))
