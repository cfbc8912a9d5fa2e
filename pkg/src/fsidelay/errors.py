"""Exception hierarchy shared by all modules.

Each class maps to one CLI exit code so that command-line failures are
classified without string matching.
"""


class FsiError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InadmissibleProfileError(FsiError, ValueError):
    """A plate profile violates ``min(1 + eta) >= threshold``."""

    exit_code = 3


class AssemblyError(FsiError):
    """Discretization or assembly failed (rank deficiency, bad quadrature)."""

    exit_code = 2


class ConfigError(FsiError, ValueError):
    """Invalid configuration key or value."""

    exit_code = 3


class CriterionError(FsiError):
    """A verification criterion or synthesis precondition failed."""

    exit_code = 4


class IllConditionedError(AssemblyError):
    """Numerical differentiation or a resolvent solve is ill-conditioned."""


class IntegrationError(FsiError):
    """Time integration aborted (non-contraction, inadmissible state)."""

    exit_code = 5
