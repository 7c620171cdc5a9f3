"""Exception hierarchy shared by all modules."""


class MqsRomError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(MqsRomError, ValueError):
    pass


class ContractViolation(MqsRomError):
    """An input violates a documented precondition (e.g. asymmetric matrix)."""


class FactorizationError(MqsRomError):
    """A factorization failed; carries the offending pivot when known."""

    def __init__(self, message, pivot_index=None, pivot_value=None):
        super().__init__(message)
        self.pivot_index = pivot_index
        self.pivot_value = pivot_value


class GeometryError(MqsRomError):
    pass


class IngestionError(MqsRomError):
    """Malformed or inconsistent Matrix Market file / problem bundle."""


class StructuralError(MqsRomError):
    """A structural assumption of the model is violated (e.g. X2 rank deficient)."""


class IndexViolation(MqsRomError):
    """The regularized DAE failed the tractability-index-one certificate."""


class ConstructionError(MqsRomError):
    """A transformation could not be built to the required accuracy."""


class AssumptionViolation(MqsRomError):
    """A modelling assumption (SPD resistance, negative log-Lipschitz bound, ...) fails."""


class NewtonError(MqsRomError):
    def __init__(self, message, step=None, iterations=None, residual=None):
        super().__init__(message)
        self.step = step
        self.iterations = iterations
        self.residual = residual


class InitialConditionError(MqsRomError):
    pass


class DegenerateBasisError(MqsRomError):
    pass


class NormalizationError(MqsRomError):
    pass


class ConfigError(MqsRomError):
    pass


class StageDependencyError(MqsRomError):
    """A pipeline stage was run before the artifacts it consumes exist."""
