"""Exception hierarchy. The CLI maps these onto exit codes."""


class DegradeNetError(Exception):
    pass


class InvalidInputError(DegradeNetError, ValueError):
    pass


class ShapeError(DegradeNetError, ValueError):
    pass


class SchemaError(DegradeNetError, ValueError):
    """Input file is missing columns or has an unreadable layout."""


class ValidationError(DegradeNetError, ValueError):
    """A record violates a data invariant (score range, wave contiguity...)."""


class SpecError(DegradeNetError, ValueError):
    """A synthetic-cohort specification is infeasible."""


class SingularSystemError(DegradeNetError, ArithmeticError):
    pass


class TrainingDivergedError(DegradeNetError, ArithmeticError):
    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch} (loss is not finite)")


class NumericalFailureError(DegradeNetError, ArithmeticError):
    def __init__(self, iteration, message=None):
        self.iteration = iteration
        super().__init__(message or f"non-finite value encountered at iteration {iteration}")


class UndefinedMetricError(DegradeNetError, ValueError):
    pass


class ConsistencyError(DegradeNetError, ValueError):
    pass


class ConfigError(DegradeNetError, ValueError):
    pass


class DegenerateDataError(DegradeNetError, ValueError):
    """Input has no spread to analyse (e.g. all rows identical)."""
