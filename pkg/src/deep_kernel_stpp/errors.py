"""Exception types raised across the package."""


class StppError(Exception):
    """Base class for all package errors."""


class ValidationError(StppError):
    """Raised when an event sequence violates its invariants.

    ``violations`` holds ``(index, reason)`` pairs; the reason is one of
    ``"NonMonotoneTimes"``, ``"OutOfDomain"``, ``"MixedSchema"`` or
    ``"OutOfWindow"``.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        msg = "; ".join(f"{i}: {r}" for i, r in self.violations[:10])
        super().__init__(f"{len(self.violations)} violation(s): {msg}")


class DimensionMismatch(StppError, ValueError):
    pass


class NonCausalPair(StppError, ValueError):
    """Kernel evaluated with t <= t'."""


class OutOfDomain(StppError, ValueError):
    pass


class NodeOutOfRange(StppError, IndexError):
    pass


class NonSquare(StppError, ValueError):
    pass


class GridMismatch(StppError, ValueError):
    pass


class NonPositiveIntensityAtEvent(StppError, ArithmeticError):
    """The intensity at an observed event is <= 0, so log-likelihood is undefined."""

    def __init__(self, sequence, index, value):
        self.sequence = sequence
        self.index = index
        self.value = value
        super().__init__(
            f"intensity {value:.6g} <= 0 at event {index} of sequence {sequence}"
        )


class BoundViolationLoop(StppError, RuntimeError):
    """Thinning had to raise its upper bound too many times for one event."""


class TooFewEvents(StppError, ValueError):
    pass


class NegativeIntensity(StppError, ArithmeticError):
    pass


class TailMassTooLarge(StppError, ArithmeticError):
    def __init__(self, tail_mass):
        self.tail_mass = tail_mass
        super().__init__(f"unresolved tail mass {tail_mass:.3g} exceeds tolerance")


class InsufficientHistory(StppError, ValueError):
    pass


class Infeasible(StppError, RuntimeError):
    pass


class ConfigError(StppError, ValueError):
    pass
