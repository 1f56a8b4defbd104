"""Exception hierarchy. The CLI maps these onto exit codes."""


class PitofError(Exception):
    """Base class for toolkit errors."""


class ConfigError(PitofError, ValueError):
    """Invalid configuration or parameter values."""


class DomainError(PitofError, ValueError):
    """Argument outside the mathematical domain of a model function."""


class NumericError(PitofError, ArithmeticError):
    """A numerical procedure failed to reach its tolerance."""


class QuadratureError(NumericError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class CalibrationError(NumericError):
    pass


class PipelineError(NumericError):
    """Reconstruction failure, attributed to the stage that raised it."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class FormatError(PitofError, IOError):
    """Malformed container or manifest."""
