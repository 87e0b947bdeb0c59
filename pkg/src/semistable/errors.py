"""Exception types shared across the package.

The CLI maps these onto exit codes, so each carries a short machine-readable
``kind`` in addition to its message.
"""


class SemistableError(Exception):
    kind = "error"


class NotInScopeError(SemistableError):
    """The distribution does not have the geometric-rate tail structure required."""

    kind = "not_in_scope"


class DivergenceError(SemistableError, ArithmeticError):
    """A series that must converge was found (or is known) to diverge."""

    kind = "diverges"


class InconclusiveError(SemistableError, ArithmeticError):
    """A ratio test or truncation did not settle within the iteration budget."""

    kind = "inconclusive"


class NotSupportedError(SemistableError):
    kind = "not_supported"


class BudgetExceededError(SemistableError):
    kind = "budget"


class OutOfTheoryError(SemistableError):
    """Requested computation is only defined in a different regime."""

    kind = "out_of_theory"


class InsufficientSupportError(SemistableError):
    kind = "insufficient_support"
