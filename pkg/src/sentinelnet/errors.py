"""Exception hierarchy shared by all modules."""


class SentinelError(Exception):
    """Base class for every error raised by sentinelnet."""


class BadConfig(SentinelError, ValueError):
    pass


class DimensionMismatch(SentinelError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class NotDiagonalBlock(SentinelError, ValueError):
    pass


class SingularMatrix(SentinelError, ArithmeticError):
    pass


class NumericalFailure(SentinelError, ArithmeticError):
    pass


class EmptyDynamics(SentinelError, ValueError):
    pass


class NonFiniteEmbedding(SentinelError, ValueError):
    pass


class EmptyTruth(SentinelError, ValueError):
    pass


class IndexOutOfRange(SentinelError, IndexError):
    pass
