"""Row-level mapping of DNN layers onto heterogeneous SRAM / ReRAM / photonic tiers."""

from .errors import ConfigError, ContractError, HetmapError
from .metrics import StrategyResult, hypervolume, lep_score
from .noise import NoiseConfig, QuantSpec, quantize
from .remap import RemapConfig, RowAssignment, remap, sensitivity_sorted_assignment
from .search import Allocation, FrontArchive, ObjectiveVector, SearchConfig, evolve, exhaustive_front, objectives
from .tiers import CostBreakdown, TierSpec, default_tiers, load_tiers, tier_energy, tier_latency
from .workload import LayerSpec, OpKind, TierId, TierSupportMatrix, Workload, load_workload, search_space_size

__all__ = [
    "Allocation", "ConfigError", "ContractError", "CostBreakdown", "FrontArchive", "HetmapError", "LayerSpec",
    "NoiseConfig", "ObjectiveVector", "OpKind", "QuantSpec", "RemapConfig", "RowAssignment", "SearchConfig",
    "StrategyResult", "TierId", "TierSpec", "TierSupportMatrix", "Workload", "default_tiers", "evolve",
    "exhaustive_front", "hypervolume", "lep_score", "load_tiers", "load_workload", "objectives", "quantize",
    "remap", "search_space_size", "sensitivity_sorted_assignment", "tier_energy", "tier_latency",
]
