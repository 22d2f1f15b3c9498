"""Exception hierarchy shared across the package.

Validation problems (bad input files, violated preconditions) derive from
``ValidationError``; numerical failures derive from ``SolverError``. The CLI
maps the two families onto distinct exit codes.
"""


class ValidationError(ValueError):
    """Input data or arguments violate a documented precondition."""


class SolverError(RuntimeError):
    """A numerical routine could not produce a trustworthy result."""


class SingularJacobianError(SolverError):
    pass


class InfeasibleBaseError(SolverError):
    """The zero-transfer operating point already violates a limit or diverges."""

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class UnderdeterminedError(ValidationError):
    pass


class RankDeficientError(SolverError):
    def __init__(self, message, condition_number=float("inf")):
        super().__init__(message)
        self.condition_number = condition_number


class IllConditionedMomentsError(SolverError):
    def __init__(self, message, variable=None, degree=None):
        super().__init__(message)
        self.variable = variable
        self.degree = degree


class ZeroVarianceError(ValidationError):
    pass
