"""Exception hierarchy shared across the package.

Everything raised deliberately by the library derives from ``MdmError``
so callers can catch library failures without also catching programming
mistakes. ``DomainError`` doubles as a ``ValueError`` because that is
what most Python code expects for bad scalar arguments.
"""


class MdmError(Exception):
    """Base class for all errors raised by mdmkit."""


class DomainError(MdmError, ValueError):
    """An argument lies outside its documented domain (e.g. t outside [0, 1])."""


class ContractError(MdmError):
    """An internal invariant was violated (unnormalized grid, shape mismatch)."""


class FormatError(MdmError):
    """A data file is malformed; the message names the offending line."""


class SchemaError(MdmError):
    """A run config contains unknown keys or values of the wrong type."""


class DivergenceError(MdmError):
    """Training produced a non-finite loss or gradient."""


class ProtocolError(MdmError):
    """A remote embedding server returned an unusable response."""


class SupportError(MdmError):
    """An oracle query is inconsistent with every corpus atom."""
