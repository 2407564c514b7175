"""Exception hierarchy.

Validation problems derive from :class:`ValueError` so callers that only care
about "bad input" can catch that; algorithmic failures derive from
:class:`ConvergenceError`.
"""


class ProtobasisError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(ProtobasisError, ValueError):
    pass


class NonFiniteEntry(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class NonMonotoneGrid(ValidationError):
    pass


class EmptyGrid(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class MissingTruth(ValidationError):
    pass


class MissingNoiseScale(ValidationError):
    pass


class InconsistentBasis(ValidationError):
    pass


class DegenerateDictionary(ValidationError):
    pass


class EpsilonTooSmall(ValidationError):
    pass


class ConvergenceError(ProtobasisError):
    pass


class NonConvergence(ConvergenceError):
    """Archetypal analysis cannot support the requested number of archetypes."""

    def __init__(self, K, message=None, rank=None):
        self.K = K
        self.rank = rank
        if message is None:
            message = f"archetype update is rank deficient for K={K}"
            if rank is not None:
                message += f" (rank {rank})"
        super().__init__(message)


class NotConverged(ConvergenceError):
    pass


class IterationLimit(ConvergenceError):
    pass


class TargetKUnreachable(ConvergenceError):
    def __init__(self, target_k, nearest_k, lam):
        self.target_k = target_k
        self.nearest_k = nearest_k
        self.lam = lam
        super().__init__(
            f"could not select exactly {target_k} prototypes; "
            f"nearest achievable count {nearest_k} at lambda={lam:.6g}"
        )
