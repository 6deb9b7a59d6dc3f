"""Exception hierarchy shared by all trapscope modules."""


class TrapscopeError(Exception):
    """Base class for every error raised by trapscope."""


class SchemaError(TrapscopeError):
    """Input file does not match the declared column schema."""


class ConfigurationError(TrapscopeError, ValueError):
    """Invalid run or operation configuration."""


class ValidationError(ConfigurationError):
    """A configuration field failed validation.

    ``field`` names the offending entry so callers can report it.
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class DegenerateRangeError(TrapscopeError, ValueError):
    pass


class ResolutionError(TrapscopeError, ValueError):
    pass


class IncompleteObservationError(TrapscopeError, KeyError):
    pass


class EstimationError(TrapscopeError):
    pass


class NumericalError(TrapscopeError, ArithmeticError):
    def __init__(self, message, residual=None):
        super().__init__(message if residual is None else f"{message} (residual={residual:.3e})")
        self.residual = residual


class DomainError(TrapscopeError, ValueError):
    pass


class ArgumentError(TrapscopeError, ValueError):
    pass


class ComparabilityError(TrapscopeError, ValueError):
    pass


class StageError(TrapscopeError):
    """Wraps an error raised inside a pipeline stage with the stage label."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
