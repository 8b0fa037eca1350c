"""Shape-only DNN workload descriptors and mapping-space statistics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .errors import ConfigError, ContractError


class OpKind(str, Enum):
    LINEAR = "linear"
    CONV2D = "conv2d"
    ATTENTION_PROJ = "attention_proj"
    DYNAMIC_MATMUL = "dynamic_matmul"


class TierId(str, Enum):
    SRAM = "SRAM"
    RERAM = "ReRAM"
    PHOTONIC = "Photonic"


TIER_ORDER: tuple[TierId, ...] = (TierId.SRAM, TierId.RERAM, TierId.PHOTONIC)


@dataclass(frozen=True)
class LayerSpec:
    """One matrix multiply of the workload.

    ``rows`` is the number of weight-matrix rows (output neurons), the unit that
    gets partitioned across tiers. ``input_vectors`` is how many input columns
    one inference pushes through the layer (tokens x batch, or conv output
    positions).
    """

    name: str
    op_kind: OpKind
    rows: int
    cols: int
    input_vectors: int = 1
    weight_dynamic: bool = False

    def __post_init__(self):
        object.__setattr__(self, "op_kind", OpKind(self.op_kind))
        for attr in ("rows", "cols", "input_vectors"):
            value = getattr(self, attr)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ContractError(f"layer {self.name!r}: {attr} must be a positive integer, got {value!r}")
        if self.op_kind is OpKind.DYNAMIC_MATMUL and not self.weight_dynamic:
            raise ContractError(f"layer {self.name!r}: dynamic_matmul requires weight_dynamic=true")

    @property
    def macs(self) -> int:
        return self.rows * self.cols * self.input_vectors


@dataclass(frozen=True)
class Workload:
    name: str
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ContractError(f"workload {self.name!r} has no layers")

    def __len__(self) -> int:
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    @property
    def rows(self) -> list[int]:
        return [layer.rows for layer in self.layers]

    @property
    def total_rows(self) -> int:
        return sum(self.rows)


@dataclass(frozen=True)
class TierSupportMatrix:
    """Which tiers may receive rows of which op kind.

    ``tiers`` fixes the column order used by allocations everywhere else.
    """

    supports: Mapping[tuple[OpKind, TierId], bool]
    tiers: tuple[TierId, ...] = TIER_ORDER
    _lookup: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        lookup = {(OpKind(op), TierId(t)): bool(v) for (op, t), v in dict(self.supports).items()}
        object.__setattr__(self, "tiers", tuple(TierId(t) for t in self.tiers))
        object.__setattr__(self, "_lookup", lookup)

    @classmethod
    def default(cls, tiers: Iterable[TierId] = TIER_ORDER) -> "TierSupportMatrix":
        # ReRAM cells wear out under per-inference rewrites, so weight-dynamic
        # matmuls stay off ReRAM.
        tiers = tuple(TierId(t) for t in tiers)
        table = {}
        for op in OpKind:
            for tier in tiers:
                table[(op, tier)] = not (op is OpKind.DYNAMIC_MATMUL and tier is TierId.RERAM)
        return cls(table, tiers)

    @classmethod
    def permissive(cls, tiers: Iterable[TierId] = TIER_ORDER) -> "TierSupportMatrix":
        tiers = tuple(TierId(t) for t in tiers)
        return cls({(op, t): True for op in OpKind for t in tiers}, tiers)

    @classmethod
    def from_dict(cls, data: Mapping[str, Iterable[str]], tiers: Iterable[TierId] = TIER_ORDER) -> "TierSupportMatrix":
        """Build from ``{op_kind: [tier, ...]}``; op kinds not listed keep the default."""
        base = cls.default(tiers)
        table = dict(base._lookup)
        for op, allowed in data.items():
            try:
                op = OpKind(op)
                allowed = {TierId(t) for t in allowed}
            except ValueError as exc:
                raise ConfigError(f"support matrix: {exc}") from None
            for tier in base.tiers:
                table[(op, tier)] = tier in allowed
        return cls(table, base.tiers)

    def allows(self, op_kind: OpKind, tier: TierId) -> bool:
        return self._lookup.get((OpKind(op_kind), TierId(tier)), False)

    def mask(self, layer: LayerSpec) -> list[bool]:
        return [self.allows(layer.op_kind, t) for t in self.tiers]

    def to_dict(self) -> dict[str, list[str]]:
        return {op.value: [t.value for t in self.tiers if self.allows(op, t)] for op in OpKind}


def supported_tiers(layer: LayerSpec, matrix: TierSupportMatrix) -> set[TierId]:
    tiers = {t for t in matrix.tiers if matrix.allows(layer.op_kind, t)}
    if not tiers:
        raise ContractError(f"layer {layer.name!r}: op_kind {layer.op_kind.value} is not supported by any tier")
    return tiers


def check_mappable(workload: Workload, matrix: TierSupportMatrix) -> None:
    for layer in workload:
        if not any(matrix.mask(layer)):
            raise ConfigError(f"unmappable op_kind {layer.op_kind.value!r} in layer {layer.name!r}")


_LAYER_FIELDS = {
    "name": str,
    "op_kind": str,
    "rows": int,
    "cols": int,
    "input_vectors": int,
    "weight_dynamic": bool,
}


def parse_workload(data: object, source: str = "<descriptor>",
                   support: TierSupportMatrix | None = None) -> Workload:
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be an object")
    if "layers" not in data or not isinstance(data["layers"], list):
        raise ConfigError(f"{source}: missing 'layers' array")
    layers = []
    for i, raw in enumerate(data["layers"]):
        where = f"{source}: layers[{i}]"
        if not isinstance(raw, dict):
            raise ConfigError(f"{where}: expected an object")
        missing = [k for k in ("name", "op_kind", "rows", "cols") if k not in raw]
        if missing:
            raise ConfigError(f"{where}: missing field(s) {', '.join(missing)}")
        for key, typ in _LAYER_FIELDS.items():
            if key not in raw:
                continue
            value = raw[key]
            ok = isinstance(value, typ) and not (typ is int and isinstance(value, bool))
            if not ok:
                raise ConfigError(f"{where}.{key}: expected {typ.__name__}, got {value!r}")
        try:
            op = OpKind(raw["op_kind"])
        except ValueError:
            raise ConfigError(f"{where}.op_kind: unknown op kind {raw['op_kind']!r}") from None
        try:
            layers.append(LayerSpec(
                name=raw["name"],
                op_kind=op,
                rows=raw["rows"],
                cols=raw["cols"],
                input_vectors=raw.get("input_vectors", 1),
                weight_dynamic=raw.get("weight_dynamic", op is OpKind.DYNAMIC_MATMUL),
            ))
        except ContractError as exc:
            raise ConfigError(f"{where}: {exc}") from None
    if not layers:
        raise ConfigError(f"{source}: 'layers' is empty")
    workload = Workload(name=str(data.get("name", Path(source).stem)), layers=tuple(layers))
    check_mappable(workload, support or TierSupportMatrix.default())
    return workload


def load_workload(path: str | Path, support: TierSupportMatrix | None = None) -> Workload:
    """Load a JSON workload descriptor.

    ``path`` may also name a bundled descriptor (``pythia70m``, ``toy_mlp``, ...).
    """
    path = resolve_bundled(path, "workloads")
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read workload {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return parse_workload(data, str(path), support)


def resolve_bundled(path: str | Path, subdir: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    name = p.name if p.suffix == ".json" else f"{p.name}.json"
    bundled = resources.files("hetmap") / "data" / subdir / name
    if bundled.is_file():
        return Path(str(bundled))
    return p


def uniform_workload(n_layers: int, rows: int, cols: int = 1, name: str = "uniform") -> Workload:
    return Workload(name, tuple(LayerSpec(f"L{i}", OpKind.LINEAR, rows, cols) for i in range(n_layers)))


def search_space_size(workload: Workload, n_tiers: int, mode: str = "per_count") -> float:
    """log10 of the number of distinct mappings.

    ``per_row`` counts every row-to-tier assignment (n^R per layer);
    ``per_count`` counts only per-layer tier histograms, C(R+n-1, n-1) per layer.
    """
    if n_tiers < 1:
        raise ContractError(f"n_tiers must be >= 1, got {n_tiers}")
    if mode == "per_row":
        return sum(layer.rows for layer in workload) * math.log10(n_tiers)
    if mode == "per_count":
        if n_tiers == 1:
            return 0.0
        total = 0.0
        for layer in workload:
            # math.log10 is exact enough on arbitrarily large ints
            total += math.log10(math.comb(layer.rows + n_tiers - 1, n_tiers - 1))
        return total
    raise ContractError(f"unknown mode {mode!r}; expected 'per_row' or 'per_count'")
