"""Exception types shared across the package."""


class Hr4bpError(Exception):
    """Base class for package errors."""


class DomainError(Hr4bpError, ValueError):
    """Input outside the physically meaningful domain (e.g. m < 0)."""


class SingularityError(Hr4bpError, RuntimeError):
    """Trajectory entered the guard radius of a primary."""


class ConvergenceError(Hr4bpError, RuntimeError):
    """An iterative solve (Newton, secant, continuation step) failed."""


class SingularJacobianError(ConvergenceError):
    """Corrector Jacobian is numerically singular; caller should switch
    to an augmented (pseudo-arclength or least-squares) formulation."""


class ExtrapolationError(Hr4bpError, RuntimeError):
    """Richardson tableau failed its internal convergence check."""


class IdenticallyZeroError(Hr4bpError, RuntimeError):
    """The persistence function vanishes identically at this order; the
    caller should escalate to the next order before zero-finding."""
