"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Scenario file failed to parse or violated a type invariant."""


class CapExceededError(RuntimeError):
    """State or action enumeration would exceed the configured cap."""

    def __init__(self, message, size):
        super().__init__(message)
        self.size = size


class ConvergenceError(RuntimeError):
    """Iterative solver exhausted its budget before reaching tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class UndefinedMetricError(ValueError):
    """Metric is undefined for the given inputs (e.g. zero arrival rate)."""


class InfiniteDelayError(ValueError):
    """Average delay diverges because the measured service rate is zero."""
