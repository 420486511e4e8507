"""Exception types shared across the package."""


class CobexError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(CobexError, ValueError):
    """Operand dimensions are incompatible."""


class MathDomainError(CobexError, ValueError):
    """An operand is outside the mathematical domain of an op (e.g. log of <= 0)."""


class ContractError(CobexError, ValueError):
    """An API contract was violated (e.g. backward from a non-scalar root)."""


class InvalidCandidateSetError(CobexError, ValueError):
    """A candidate set is empty or fully masked."""


class ConfigError(CobexError, ValueError):
    """Invalid configuration value."""


class PropensityFloorError(CobexError, ValueError):
    """A logged propensity is below the accepted floor."""


class DivergenceError(CobexError, RuntimeError):
    """Training produced a non-finite loss or exploding parameters."""


class BenchmarkParseError(CobexError, ValueError):
    """A constraint benchmark file could not be parsed."""


class BenchmarkValidationError(CobexError, ValueError):
    """A parsed constraint benchmark violates its invariants."""


class ReportError(CobexError, ValueError):
    """A comparison report could not be assembled."""
