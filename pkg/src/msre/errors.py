"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes, so each failure class has one type.
"""


class MSREError(Exception):
    pass


class DomainError(MSREError, ValueError):
    """Bad box, surface shape or vertex."""


class ParameterError(MSREError, ValueError):
    """Out-of-range model or experiment parameter."""


class UnsupportedError(MSREError, ValueError):
    """Valid request that this implementation does not handle."""


class ContractError(MSREError, ValueError):
    """A surface or input violates an operation's precondition."""


class PreconditionError(MSREError, ValueError):
    """Experimental precondition not met (too few sizes, misaligned grid, ...)."""


class SolverError(MSREError, RuntimeError):
    """Numerical failure: no convergence, residual too large."""


class InfeasibleError(SolverError):
    """Every admissible configuration has infinite energy."""


class ResourceError(SolverError):
    """Problem exceeds a configured size or budget."""


class IncomparableError(MSREError, ArithmeticError):
    """An identity was asked to compare infinite energies."""


class BudgetError(ResourceError):
    """Estimated work exceeds the configured budget; raised before any solve."""


class FitError(PreconditionError):
    """A log-log fit cannot be formed (too few sizes, non-positive means)."""


class ConfigError(MSREError, ValueError):
    """Malformed or invalid run configuration."""
