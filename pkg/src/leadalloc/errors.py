"""Shared exception hierarchy.

Three base classes partition failures by who has to fix them: bad input
data, bad configuration, or an optimization with no feasible answer.
The CLI maps these onto distinct exit codes.
"""


class LeadAllocError(Exception):
    """Base class for all package errors."""


class DataError(LeadAllocError):
    """The input data violates a contract (parse failures, bad cells)."""


class ConfigError(LeadAllocError):
    """The requested configuration cannot be applied to the given data."""


class InfeasibleError(LeadAllocError):
    """No candidate satisfies the stated constraints."""
