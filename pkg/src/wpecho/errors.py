"""Exception hierarchy shared by all modules."""


class EchoError(Exception):
    """Base class for all package errors."""


class DomainError(EchoError, ValueError):
    """A closed-form relation was evaluated outside its domain of validity."""


class UsageError(EchoError, ValueError):
    """Arguments are inconsistent with each other (e.g. mismatched grids)."""


class ConfigurationError(EchoError, ValueError):
    """A run configuration violates a physical or numerical constraint."""


class NumericError(EchoError, ArithmeticError):
    """Non-finite values or a failed decomposition were detected."""


class AnalysisError(EchoError):
    """A data reduction could not be performed on the given trace."""


class RunError(EchoError):
    """Too many trajectories failed inside an ensemble."""
