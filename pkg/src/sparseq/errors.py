"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument violates a documented precondition."""


class StructuralError(ValueError):
    """An MDP, policy or feature table is malformed or incomplete."""


class InstanceIntegrityError(RuntimeError):
    """Observed data disagree with the construction of a hard instance."""


class StrategyError(ValueError):
    """A query strategy issued an out-of-range query."""


class EliminationError(RuntimeError):
    """Base class for aborted elimination runs; carries the partial report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class EliminationExhausted(EliminationError):
    """Some candidate set became empty."""


class IterationCapExceeded(EliminationError):
    """The loop hit its hard iteration bound without terminating."""
