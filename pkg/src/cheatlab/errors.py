"""Exception taxonomy shared by every module.

All package errors derive from CheatLabError so callers can catch one base
class; the subclasses separate caller bugs (contract, dimension), bad inputs
(config, format), corrupted or mutated artifacts (integrity), and runtime
failures of the generation / evolution loops.
"""


class CheatLabError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(CheatLabError, ValueError):
    """Operand shapes are incompatible; the message names both shapes."""


class ConfigError(CheatLabError, ValueError):
    """Unknown key, unparsable value, or out-of-range configuration."""


class ContractError(CheatLabError):
    """A documented precondition was violated by the caller."""


class FormatError(CheatLabError):
    """A serialized artifact violates its container layout."""


class IntegrityError(CheatLabError):
    """Stored digests or manifests disagree with the payload."""


class FrozenWeightError(IntegrityError):
    """Weights that were pledged frozen changed during a training stage."""


class DependencyError(CheatLabError):
    """A pipeline stage is missing an artifact a previous stage produces."""


class GenerationError(CheatLabError):
    """World or data generation exhausted its rejection budget."""


class EvolutionError(CheatLabError):
    """The evolutionary loop hit a non-finite fitness or invalid state."""
