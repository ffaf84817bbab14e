"""Exception hierarchy shared by the library and the CLI."""


class DDSynthError(Exception):
    """Base class for all errors raised by ddsynth."""


class LibraryError(DDSynthError):
    """Malformed basis library source."""

    def __init__(self, message, position=None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


class EvaluationError(DDSynthError):
    """Numeric overflow or a non-finite value while evaluating a basis."""


class DivergenceError(DDSynthError):
    """A simulated trajectory left the divergence guard ball."""


class ModelError(DDSynthError):
    """Inconsistent dimensions or structure in a plant, data set or problem."""


class SynthesisError(DDSynthError):
    """Base class for synthesis failures."""


class Infeasible(SynthesisError):
    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals or {}


class NotAttainable(SynthesisError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class PreconditionError(SynthesisError):
    """An objective was requested on data or a library it does not apply to."""


class RankDeficient(PreconditionError):
    def __init__(self, what, rank, expected):
        super().__init__(f"{what} has rank {rank}, expected {expected}")
        self.rank = rank
        self.expected = expected


class MonotonicityViolation(PreconditionError):
    pass


class ClassMViolation(PreconditionError):
    def __init__(self, message, defect):
        super().__init__(f"{message} (worst symmetry defect {defect:.3e})")
        self.defect = defect


class QuadratureError(DDSynthError):
    pass
