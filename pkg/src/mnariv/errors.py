"""Exception hierarchy."""


class MnarIvError(Exception):
    """Base class for all package errors."""


class PositivityViolation(MnarIvError):
    """An observation probability fell below the positivity floor."""

    def __init__(self, min_prob, floor):
        self.min_prob = float(min_prob)
        self.floor = float(floor)
        super().__init__(
            f"extended propensity {self.min_prob:.3g} below positivity floor {self.floor:.3g}"
        )


class NonFiniteEvaluation(MnarIvError):
    pass


class NoConvergence(MnarIvError):
    """Raised when a solver gives up; carries the best iterate seen."""

    def __init__(self, message, best=None, residual=float("nan"), diagnostics=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.diagnostics = diagnostics


class SingularJacobian(MnarIvError):
    pass


class NoSignChange(MnarIvError):
    pass


class IllConditionedWeight(MnarIvError):
    pass


class SingularBread(MnarIvError):
    pass


class SingularUpdate(MnarIvError):
    pass


class Separation(MnarIvError):
    """Logistic maximum likelihood estimate does not exist (or diverges)."""


class InsufficientData(MnarIvError):
    pass


class OutOfParameterSpace(MnarIvError):
    pass


class ParseError(MnarIvError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if column is not None:
            loc.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)


class SchemaError(MnarIvError):
    pass


class ConsistencyError(MnarIvError):
    def __init__(self, message, row=None):
        self.row = row
        super().__init__(message if row is None else f"{message} (row {row})")
