"""Exception types raised across the package."""


class TracePhaseError(Exception):
    """Base class for all package errors."""


class NonMonic(TracePhaseError, ValueError):
    pass


class RepeatedRoots(TracePhaseError, ValueError):
    pass


class EmptyPolynomial(TracePhaseError, ValueError):
    pass


class IllConditioned(TracePhaseError, ArithmeticError):
    pass


class DimensionMismatch(TracePhaseError, ValueError):
    pass


class BadEmbeddingIndex(TracePhaseError, IndexError):
    pass


class DegenerateBasis(TracePhaseError, ValueError):
    pass


class RealEmbedding(TracePhaseError, ValueError):
    pass


class ZeroVector(TracePhaseError, ValueError):
    pass


class NotUnivariate(TracePhaseError, ValueError):
    pass


class DimensionTooLarge(TracePhaseError, ValueError):
    pass


class NotConjugationClosed(TracePhaseError, ValueError):
    pass


class EmptySet(TracePhaseError, ValueError):
    pass


class BudgetExceeded(TracePhaseError, RuntimeError):
    pass


class RankDeficient(TracePhaseError, ArithmeticError):
    pass


class DegenerateQ(TracePhaseError, ValueError):
    pass


class EmptyEm(TracePhaseError, ValueError):
    """No point of the annulus satisfies the embedding lower bound."""


class ConfigInvalid(TracePhaseError, ValueError):
    pass


class ExperimentFailed(TracePhaseError, RuntimeError):
    def __init__(self, assertion: str, detail: str = ""):
        self.assertion = assertion
        msg = assertion if not detail else f"{assertion}: {detail}"
        super().__init__(msg)


class CalibrationUnstable(TracePhaseError, RuntimeError):
    pass
