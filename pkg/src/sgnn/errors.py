"""Exception types shared across the package."""


class SgnnError(Exception):
    """Base class for all package errors."""


class GraphError(SgnnError, ValueError):
    """Invalid graph, shift operator, or edge-model construction."""


class ConfigError(SgnnError, ValueError):
    """Malformed or inconsistent configuration."""


class NumericalError(SgnnError, RuntimeError):
    """A numerical routine failed to converge or produced non-finite values."""


class TrainingDiverged(NumericalError):
    """Training aborted because the cost blew up or became non-finite.

    Carries the partial trace so the failure can be inspected.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
