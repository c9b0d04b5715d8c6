"""Exception types shared across the toolkit."""


class CsvParseError(ValueError):
    """A dataset CSV cell or row could not be parsed; message names the line."""


class CsvSchemaError(ValueError):
    """Dataset CSV header/row structure does not match the declared schema."""


class EmptyDatasetError(ValueError):
    """Dataset file contains no data rows."""


class ExcitationBoundError(ValueError):
    """Excitation amplitude exceeds the plant input saturation."""


class BasisTooLargeError(ValueError):
    """Requested monomial basis exceeds the configured size cap."""


class SingularFitError(ValueError):
    """Least-squares regressor matrix is rank deficient."""


class NumericRangeError(ValueError):
    """A numeric evaluation left the finite floating-point range."""


class BudgetExceededError(ValueError):
    """A grid or sampling budget would be exceeded."""


class InsufficientDataError(ValueError):
    """Not enough samples for the requested operation."""


class PlantDivergenceError(RuntimeError):
    """Simulated output diverged; carries the step index and any partial trace."""

    def __init__(self, message, step=None, partial_trace=None):
        super().__init__(message)
        self.step = step
        self.partial_trace = partial_trace


class DegenerateDomainError(ValueError):
    """Sampling box has zero volume."""


class AssumptionViolationError(ValueError):
    """A certification assumption fails, so a derived quantity is undefined."""


class LpInfeasibleError(ValueError):
    """Linear program has no feasible point."""


class LpUnboundedError(ValueError):
    """Linear program objective is unbounded below."""


class ConfigError(ValueError):
    """Run configuration is malformed or inconsistent."""
