"""Exception hierarchy shared by every module."""


class ConsensusError(Exception):
    """Base class for all errors raised by this package."""


class NotPositiveDefinite(ConsensusError):
    def __init__(self, pivot: int, message: str | None = None):
        self.pivot = pivot
        super().__init__(message or f"matrix is not positive definite (pivot {pivot} <= 0)")


class EmptyRashomon(ConsensusError):
    """The tolerance is below the smallest achievable loss."""


class Infeasible(EmptyRashomon):
    """No sub-forest size keeps the worst-case loss under the tolerance."""


class DegenerateColumn(ConsensusError):
    pass


class SignNotEstablished(ConsensusError):
    pass


class TransitivityViolation(ConsensusError):
    pass


class ParseError(ConsensusError):
    def __init__(self, row: int, column: str | int, message: str):
        self.row = row
        self.column = column
        super().__init__(f"row {row}, column {column!r}: {message}")


class NonNumericCell(ParseError):
    pass


class MissingTarget(ConsensusError):
    pass


class ConfigError(ConsensusError):
    pass
