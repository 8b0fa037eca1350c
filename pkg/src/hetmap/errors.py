class HetmapError(Exception):
    """Base class for package errors."""


class ConfigError(HetmapError):
    """Bad input file, descriptor or CLI configuration."""


class ContractError(HetmapError):
    """An operation was called with arguments violating its preconditions."""
