"""Custom exceptions for the reduction engine.

Every class carries the process exit code the CLI maps it to.
"""


class ElReduceError(Exception):
    """Base exception for all engine errors."""

    exit_code = 4


class ConfigError(ElReduceError):
    """Configuration could not be parsed or violates the model constraints."""

    exit_code = 2


class RegimeError(ElReduceError):
    """The computation left the asymptotic regime of the reduction."""

    exit_code = 3


class GroundStateError(RegimeError):
    """No strictly stable positive constant background solution exists."""

    pass


class CoercivityError(RegimeError):
    """A discretized operator lost coercivity."""

    pass


class AdmissibilityError(RegimeError):
    """An outer iterate escaped the admissible set F_k."""

    pass


class ContractionError(RegimeError):
    """A fixed-point iteration stopped contracting."""

    pass


class KappaSignError(RegimeError):
    """The six-dimensional balance constant kappa is not positive."""

    pass


class TruncationActiveError(RegimeError):
    """The negative-power truncation is active at the fixed point."""

    pass


class MonotonicityError(RegimeError):
    """A sweep discrepancy failed to decrease under mu halving."""

    pass


class NumericalError(ElReduceError):
    """A numerical kernel failed."""

    exit_code = 4


class QuadratureError(NumericalError):
    """Adaptive quadrature did not reach the requested tolerance."""

    pass


class SingularSystemError(NumericalError):
    """A Gram matrix or saddle-point system is singular."""

    pass


class ConvergenceError(NumericalError):
    """An iteration did not converge within its budget."""

    pass
