"""Composite LEP score and the 2-D hypervolume indicator."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .errors import ContractError


@dataclass(frozen=True)
class StrategyResult:
    """One mapping strategy's row in a comparison table.

    ``quality`` is lower-is-better: perplexity, or 1 - accuracy.
    """

    name: str
    latency_s: float
    energy_j: float
    quality: float
    valid: bool = True

    def __post_init__(self):
        for attr in ("latency_s", "energy_j", "quality"):
            value = getattr(self, attr)
            if not math.isfinite(value) or value < 0:
                raise ContractError(f"{self.name}: {attr} must be finite and >= 0, got {value}")


def lep_score(results: Sequence[StrategyResult]) -> list[float]:
    """Sum over latency, energy and quality of min-max normalised values.

    Normalisation runs across the supplied strategies, so scores are only
    comparable within one call. A metric with zero spread contributes 0.
    """
    if len(results) < 2:
        raise ContractError("lep_score needs at least two strategies")
    scores = [0.0] * len(results)
    for attr in ("latency_s", "energy_j", "quality"):
        values = [getattr(r, attr) for r in results]
        lo, hi = min(values), max(values)
        if hi == lo:
            continue
        for i, v in enumerate(values):
            scores[i] += (v - lo) / (hi - lo)
    return scores


def hypervolume(front: Sequence[Sequence[float]], ref_point: Sequence[float]) -> float:
    """Area dominated by ``front`` and bounded by ``ref_point`` (minimisation)."""
    rx, ry = float(ref_point[0]), float(ref_point[1])
    pts = []
    for p in front:
        x, y = float(p[0]), float(p[1])
        if not (x <= rx and y <= ry and (x < rx or y < ry)):
            raise ContractError(f"point ({x}, {y}) does not dominate reference ({rx}, {ry})")
        pts.append((x, y))
    pts.sort()
    area = 0.0
    best_y = ry
    for x, y in pts:
        if y < best_y:
            area += (rx - x) * (best_y - y)
            best_y = y
    return area
