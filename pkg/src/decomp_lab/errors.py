"""Exception hierarchy shared by every module."""


class DecompLabError(Exception):
    """Base class for all library errors."""


class LengthMismatch(DecompLabError, ValueError):
    pass


class NegativeWeight(DecompLabError, ValueError):
    pass


class ZeroTotalMass(DecompLabError, ValueError):
    pass


class InvalidDistribution(DecompLabError, ValueError):
    pass


class InvalidSpace(DecompLabError, ValueError):
    pass


class UnmappedSymbol(DecompLabError, KeyError):
    pass


class ImageOutsideTarget(DecompLabError, ValueError):
    pass


class SpaceMismatch(DecompLabError, ValueError):
    pass


class SymbolNotInSpace(DecompLabError, KeyError):
    pass


class InvalidParams(DecompLabError, ValueError):
    pass


class NotBijective(DecompLabError, ValueError):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class SolverFailure(DecompLabError, RuntimeError):
    pass


class NonConvergence(DecompLabError, RuntimeError):
    """Raised when an iterative solver stops without meeting its criterion.

    Carries whatever partial output the solver produced so callers can
    still persist it.
    """

    def __init__(self, message, *, violation=None, trace=None, solution=None, report=None):
        super().__init__(message)
        self.violation = violation
        self.trace = trace
        self.solution = solution
        self.report = report


class MissingFragment(DecompLabError, ValueError):
    pass


class RankDeficient(DecompLabError, ValueError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class SymmetryAbsent(DecompLabError, ValueError):
    pass


class PreconditionFailed(DecompLabError, ValueError):
    pass


class NonFinite(DecompLabError, FloatingPointError):
    pass


class FragmentVisibilityViolation(DecompLabError, ValueError):
    pass


class StageSchemaMismatch(DecompLabError, ValueError):
    pass
