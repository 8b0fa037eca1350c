"""Closed-form latency/energy models for the three compute tiers.

Per-share model, for ``r`` rows of a layer with ``c`` columns and ``v`` input
vectors placed on one tier:

    tiles_needed = ceil(r / xbar_rows) * ceil(c / xbar_cols)
    serial       = ceil(tiles_needed / (crossbars_per_tile * tiles))
    bit_passes   = input_bits on PIM tiers, 1 on photonic
    compute_s    = v * bit_passes * serial / clock_hz
    comm_s       = (v*c*input_bits + v*r*adc_bits) / 8 / tsv_bandwidth
    program_s    = r * c / xbar_cols * program_latency_s   (reprogrammed shares only)
    latency      = compute_s + comm_s + program_s

    compute_j = v*r*c*e_mac  (+ v*r*bit_passes*e_adc on PIM tiers)
    comm_j    = bytes * e_per_byte
    program_j = r * c * e_write                                (reprogrammed shares only)
    static_j  = static_power * latency

A share is reprogrammed every inference when the layer is weight-dynamic or
when the tier does not keep weights resident (photonic cores hold no weights;
they are loaded from the global buffer each time).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, ContractError
from .workload import LayerSpec, TierId, TierSupportMatrix, resolve_bundled


@dataclass(frozen=True)
class TierSpec:
    tier_id: TierId
    clock_hz: float
    xbar_rows: int
    xbar_cols: int
    crossbars_per_tile: int
    tiles: int
    weight_bits: int
    input_bits: int
    adc_per_tile: int
    adc_bits: int
    program_latency_s: float
    e_mac_j: float
    e_adc_j: float
    e_write_j: float
    static_power_w: float
    tsv_bandwidth_bytes_per_s: float
    e_per_byte_j: float
    weights_resident: bool = True

    def __post_init__(self):
        object.__setattr__(self, "tier_id", TierId(self.tier_id))
        for f in fields(self):
            if f.name in ("tier_id", "weights_resident"):
                continue
            value = getattr(self, f.name)
            if not isinstance(value, (int, float)) or isinstance(value, bool) or not value > 0 or not math.isfinite(value):
                raise ContractError(f"tier {self.tier_id.value}: {f.name} must be a finite positive number, got {value!r}")
        if not 1 <= self.weight_bits <= 8:
            raise ContractError(f"tier {self.tier_id.value}: weight_bits must be in [1, 8], got {self.weight_bits}")
        if not 1 <= self.input_bits <= 8:
            raise ContractError(f"tier {self.tier_id.value}: input_bits must be in [1, 8], got {self.input_bits}")

    @property
    def is_photonic(self) -> bool:
        return self.tier_id is TierId.PHOTONIC

    @property
    def bit_passes(self) -> int:
        return 1 if self.is_photonic else self.input_bits

    @property
    def crossbars(self) -> int:
        return self.crossbars_per_tile * self.tiles

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tier_id"] = self.tier_id.value
        return d


@dataclass(frozen=True)
class CostBreakdown:
    compute_s: float = 0.0
    comm_s: float = 0.0
    program_s: float = 0.0
    compute_j: float = 0.0
    comm_j: float = 0.0
    program_j: float = 0.0
    static_j: float = 0.0

    @property
    def latency_s(self) -> float:
        return self.compute_s + self.comm_s + self.program_s

    @property
    def energy_j(self) -> float:
        return self.compute_j + self.comm_j + self.program_j + self.static_j


def reprograms(tier: TierSpec, layer: LayerSpec) -> bool:
    return layer.weight_dynamic or not tier.weights_resident


def share_cost(tier: TierSpec, layer: LayerSpec, rows_assigned: int,
               support: TierSupportMatrix | None = None) -> CostBreakdown:
    """Full cost breakdown of placing ``rows_assigned`` rows of ``layer`` on ``tier``."""
    if isinstance(rows_assigned, bool) or int(rows_assigned) != rows_assigned:
        raise ContractError(f"rows_assigned must be an integer, got {rows_assigned!r}")
    r = int(rows_assigned)
    if not 0 <= r <= layer.rows:
        raise ContractError(f"rows_assigned={r} outside [0, {layer.rows}] for layer {layer.name!r}")
    if r == 0:
        return CostBreakdown()
    support = support or TierSupportMatrix.default()
    if not support.allows(layer.op_kind, tier.tier_id):
        raise ContractError(f"tier {tier.tier_id.value} does not support {layer.op_kind.value} (layer {layer.name!r})")

    c, v = layer.cols, layer.input_vectors
    tiles_needed = math.ceil(r / tier.xbar_rows) * math.ceil(c / tier.xbar_cols)
    serial = math.ceil(tiles_needed / tier.crossbars)
    compute_s = v * tier.bit_passes * serial / tier.clock_hz

    n_bytes = (v * c * tier.input_bits + v * r * tier.adc_bits) / 8
    comm_s = n_bytes / tier.tsv_bandwidth_bytes_per_s

    if reprograms(tier, layer):
        program_s = r * c / tier.xbar_cols * tier.program_latency_s
        program_j = r * c * tier.e_write_j
    else:
        program_s = program_j = 0.0

    compute_j = v * r * c * tier.e_mac_j
    if not tier.is_photonic:
        compute_j += v * r * tier.bit_passes * tier.e_adc_j
    latency = compute_s + comm_s + program_s
    return CostBreakdown(
        compute_s=compute_s,
        comm_s=comm_s,
        program_s=program_s,
        compute_j=compute_j,
        comm_j=n_bytes * tier.e_per_byte_j,
        program_j=program_j,
        static_j=tier.static_power_w * latency,
    )


def tier_latency(tier: TierSpec, layer: LayerSpec, rows_assigned: int,
                 support: TierSupportMatrix | None = None) -> float:
    return share_cost(tier, layer, rows_assigned, support).latency_s


def tier_energy(tier: TierSpec, layer: LayerSpec, rows_assigned: int,
                support: TierSupportMatrix | None = None) -> float:
    return share_cost(tier, layer, rows_assigned, support).energy_j


DEFAULT_TIERS_FILE = "tiers_default"


def parse_tiers(data: object, source: str = "<tiers>") -> list[TierSpec]:
    if isinstance(data, dict):
        data = data.get("tiers")
    if not isinstance(data, list) or not data:
        raise ConfigError(f"{source}: expected a non-empty array of tier objects")
    names = {f.name for f in fields(TierSpec)}
    tiers = []
    for i, raw in enumerate(data):
        if not isinstance(raw, dict):
            raise ConfigError(f"{source}: tiers[{i}] is not an object")
        unknown = set(raw) - names
        if unknown:
            raise ConfigError(f"{source}: tiers[{i}]: unknown field(s) {', '.join(sorted(unknown))}")
        missing = names - set(raw) - {"weights_resident"}
        if missing:
            raise ConfigError(f"{source}: tiers[{i}]: missing field(s) {', '.join(sorted(missing))}")
        try:
            tiers.append(TierSpec(**raw))
        except (ContractError, ValueError) as exc:
            raise ConfigError(f"{source}: tiers[{i}]: {exc}") from None
    ids = [t.tier_id for t in tiers]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"{source}: duplicate tier ids")
    return tiers


def load_tiers(path: str | Path = DEFAULT_TIERS_FILE) -> list[TierSpec]:
    path = resolve_bundled(path, "tiers")
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read tiers file {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return parse_tiers(data, str(path))


def default_tiers() -> list[TierSpec]:
    """SRAM, ReRAM and photonic tiers, in that order, from the bundled defaults."""
    return load_tiers(DEFAULT_TIERS_FILE)


def tiers_by_id(tiers: Iterable[TierSpec]) -> dict[TierId, TierSpec]:
    return {t.tier_id: t for t in tiers}


def order_tiers(tiers: Sequence[TierSpec], order: Sequence[TierId]) -> list[TierSpec]:
    """Reorder ``tiers`` to follow ``order`` (the allocation column order)."""
    by_id = tiers_by_id(tiers)
    try:
        return [by_id[TierId(t)] for t in order]
    except KeyError as exc:
        raise ConfigError(f"no tier spec for {exc.args[0]}") from None


def override(tier: TierSpec, **changes) -> TierSpec:
    return replace(tier, **changes)
