"""
Exception hierarchy for qswitch

Every error raised on purpose by the library derives from QSwitchError so the
CLI can map it to an exit code.
"""


class QSwitchError(Exception):
    """Base class for all library errors"""
    pass


class MdpValidationError(QSwitchError):
    """Invalid transition kernel, rewards, discount or MDP document"""
    pass


class DimensionMismatchError(QSwitchError):
    """Vector, matrix or policy dimensions do not match the model"""
    pass


class ConvergenceError(QSwitchError):
    """An iterative procedure did not converge within its cap"""
    pass


class EnumerationCapError(QSwitchError):
    """Deterministic-policy enumeration exceeds the configured cap"""
    pass


class BudgetExceededError(QSwitchError):
    """Product enumeration budget exhausted"""
    pass


class ChainError(QSwitchError):
    """Behavior chain is reducible or periodic"""
    pass


class InvariantViolationError(QSwitchError):
    """A proven invariant failed; signals an implementation bug"""
    pass


class CertificateError(QSwitchError):
    """Certificate preconditions do not hold"""
    pass


class ConfigError(QSwitchError):
    """Experiment config failed schema or reference validation"""
    pass
