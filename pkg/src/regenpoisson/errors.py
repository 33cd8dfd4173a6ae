"""Exception hierarchy shared by all modules."""


class RegenPoissonError(Exception):
    """Base class for every error raised by this package."""


class NotIrreducible(RegenPoissonError):
    """The positive-entry graph of a (truncated) chain is not strongly connected."""


class LeakTooLarge(RegenPoissonError):
    """A truncated row lost more probability mass than the configured cap."""


class SingularSystem(RegenPoissonError):
    """A sparse linear solve failed or returned non-finite values."""


class TruncationNotConverged(RegenPoissonError):
    """Doubling the truncation did not stabilise the probed quantity."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class PeriodicChain(RegenPoissonError):
    """An operation that needs aperiodicity was called on a periodic chain."""


class HorizonExceeded(RegenPoissonError):
    """Neither convergence nor divergence was detected within the horizon."""


class ConditionViolated(RegenPoissonError):
    """A moment condition required by the operation does not hold."""


class DriftViolated(RegenPoissonError):
    """A Lyapunov drift inequality fails at one or more states."""

    def __init__(self, message, states=(), certificate=None):
        super().__init__(message)
        self.states = list(states)
        self.certificate = certificate


class UnboundedAtK(RegenPoissonError):
    """``E_x v(X_1)`` is not finite for some state of the finite set K."""


class Infeasible(RegenPoissonError):
    """No certificate of the requested form exists."""


class CycleLengthCap(RegenPoissonError):
    """A simulated regeneration cycle exceeded the step cap."""


class HorizonWindowTooSmall(RegenPoissonError):
    """Probability mass reached a state whose row was altered by truncation."""


class CoefficientSumNonzero(RegenPoissonError, ValueError):
    """Harmonic coefficients must sum to zero."""


class NullOrTransient(RegenPoissonError, ValueError):
    """The increment law has non-negative mean."""


class InvalidTail(RegenPoissonError, ValueError):
    """The tail exponent does not give a finite mean."""


class DegenerateVariance(RegenPoissonError):
    """The time-average variance constant is zero."""


class ConfigError(RegenPoissonError, ValueError):
    """A run configuration could not be parsed or validated."""

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno
