"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: ``GuardExceeded`` -> 3,
``PropertyFailure`` -> 2, everything else -> 1.
"""


class QPlusError(Exception):
    """Base class for all package errors."""


class MalformedInstance(QPlusError, ValueError):
    """An instance document failed validation."""


class InvalidParameters(QPlusError, ValueError):
    pass


class GuardExceeded(QPlusError):
    """A brute-force or enumeration guard would be exceeded."""


class CertificationError(QPlusError):
    """An expander could not be certified within the retry budget."""


class NotRegular(QPlusError, ValueError):
    pass


class DisconnectedGraph(QPlusError, ValueError):
    pass


class NoPrimeFound(QPlusError):
    pass


class PreconditionViolation(QPlusError):
    pass


class PropertyFailure(QPlusError):
    """A checked inequality or identity did not hold."""
