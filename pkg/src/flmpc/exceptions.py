"""Exception hierarchy shared across the toolkit."""


class FlmpcError(Exception):
    """Base class for all toolkit errors."""


class SteeringSingularityError(FlmpcError, ValueError):
    """Raised when |phi| reaches pi/2 (or the configured steering bound)."""


class StallError(FlmpcError, ValueError):
    """Reference speed too small for the flatness formulas."""


class DegenerateSegmentError(FlmpcError, ValueError):
    """Two consecutive waypoints coincide."""


class InfeasibleSpeedError(FlmpcError, ValueError):
    """A reference sample exceeds the vehicle's speed bound."""


class InfeasibleQPError(FlmpcError, RuntimeError):
    """No point satisfies the inequality constraints within tolerance."""

    def __init__(self, message, violation=None):
        super().__init__(message)
        self.violation = violation


class MaxIterationsError(FlmpcError, RuntimeError):
    """The active-set loop did not converge within its iteration budget."""


class InvariantViolationError(FlmpcError, RuntimeError):
    """An internal guarantee did not hold (e.g. a terminal QP was infeasible)."""


class NotCertifiedError(FlmpcError, ValueError):
    """A terminal set failed its invariance certificate."""
