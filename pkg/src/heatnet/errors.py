"""Exception types shared across the package."""


class HeatnetError(Exception):
    """Base class for all package errors."""


class ShapeError(HeatnetError, ValueError):
    """Tensor/array dimensions do not match an operation's contract."""


class NonFiniteError(HeatnetError, ArithmeticError):
    """An operation produced (or was given) NaN/Inf values."""


class ContractError(HeatnetError, RuntimeError):
    """A call violated an internal contract (e.g. empty neighborhood)."""


class ConfigError(HeatnetError, ValueError):
    """Invalid configuration value or combination."""


class GraphLookupError(HeatnetError, KeyError):
    """A node id was not found in the graph."""


class GraphValidationError(HeatnetError, ValueError):
    """A graph description failed structural validation."""

    def __init__(self, violation):
        super().__init__(str(violation))
        self.violation = violation


class PatchTableError(HeatnetError, ValueError):
    """A patch-table file could not be parsed; carries the 1-based line."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class TrainingError(HeatnetError, RuntimeError):
    """Optimization failed (non-finite gradients, divergence)."""


class GenerationError(HeatnetError, RuntimeError):
    """Synthetic data generation could not satisfy its constraints."""


class AttributionError(HeatnetError, RuntimeError):
    """A node's causal contribution could not be computed."""


class ExportError(HeatnetError, RuntimeError):
    """An artifact could not be exported (e.g. missing coordinates)."""
