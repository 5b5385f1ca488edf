class KsdError(Exception):
    """Base class for library errors."""


class DomainError(KsdError, ValueError):
    pass


class ClosureError(KsdError, ValueError):
    pass


class BasisDependentError(KsdError, ValueError):
    pass


class ApproximationSpanError(KsdError, ValueError):
    pass


class SchemaError(KsdError, ValueError):
    """System file does not conform to the schema; ``field`` names the culprit."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ConfigError(KsdError, ValueError):
    pass


class DivergenceError(KsdError, RuntimeError):
    def __init__(self, message: str, last_time: float):
        super().__init__(message)
        self.last_time = last_time


class SolverUnavailableError(KsdError, RuntimeError):
    pass
