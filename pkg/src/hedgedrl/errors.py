"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes, so keep the hierarchy flat.
"""


class HedgeError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(HedgeError, ValueError):
    pass


class DataError(HedgeError, ValueError):
    pass


class ShapeError(HedgeError, ValueError):
    pass


class DomainError(HedgeError, ValueError):
    """Input outside the mathematical domain of an op (empty reduction...)."""


class NumericError(HedgeError, ArithmeticError):
    pass


class ContractError(HedgeError, RuntimeError):
    """A caller broke an API precondition (wrong tape state, misaligned dates...)."""


class RangeError(HedgeError, IndexError):
    """Not enough history for the requested date index."""


class TrainingError(HedgeError, RuntimeError):
    pass


class UndefinedMetric(HedgeError, ArithmeticError):
    """A ratio metric whose denominator vanished (zero volatility, no losses)."""


class InfeasibleProblem(HedgeError, ValueError):
    pass
