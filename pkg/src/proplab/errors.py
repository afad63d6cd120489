"""Exception types raised across the package."""


class PropLabError(Exception):
    """Base class for all package errors."""


class SingularMatrix(PropLabError):
    """A linear system could not be solved because the matrix is rank deficient."""


class NoConvergence(PropLabError):
    """An iterative method exhausted its iteration budget."""


class ActionOutOfBox(PropLabError):
    """An action violates the bounds of the environment's action box."""


class InfeasibleFloor(PropLabError):
    """A requested minimum transition probability cannot be met (eps * |S| >= 1)."""


class BoxActive(PropLabError):
    """The unconstrained offline optimum touches the action box, so it is not valid."""


class SingularInnerBlock(PropLabError):
    """The matrix R + B^T P B of a Riccati step is singular."""


class LambdaBarTooSmall(PropLabError):
    """The requested decay rate does not exceed the certified contraction rate."""


class NonPositiveCurvature(PropLabError):
    """The action block of a quadratic Q-value advice is not positive definite."""


class NonpositiveOptimum(PropLabError):
    """The optimal cost is not strictly positive, so a ratio is undefined."""


class LipschitzViolation(PropLabError):
    """A declared Lipschitz constant is smaller than a measured difference quotient."""
