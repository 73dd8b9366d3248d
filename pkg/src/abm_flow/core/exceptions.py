"""
Exceptions

Error hierarchy shared by the library and the study harness.
"""


class AbmFlowError(Exception):
    """Base class for every error raised by abm_flow"""


class ContractViolation(AbmFlowError, ValueError):
    """Shape, dimension or precondition mismatch"""


class DomainError(AbmFlowError, ValueError):
    """Time outside the [0, 1] integration domain"""


class SolverStateError(AbmFlowError, RuntimeError):
    """Multistep history missing or inconsistent"""


class UnsupportedFieldError(AbmFlowError):
    """Operation needs an exact solution or oracle the field lacks"""


class InsufficientPointsError(AbmFlowError, ValueError):
    """Too few usable points for a log-log fit"""


class ConfigError(AbmFlowError):
    """Unreadable or invalid configuration"""
