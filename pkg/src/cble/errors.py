"""Exception hierarchy shared by the library and the command line."""


class CbleError(Exception):
    """Base class for all package errors."""


class DomainError(CbleError, ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class RegimeError(CbleError):
    """The environment is not in the regime an operation requires."""


class BoundaryError(RegimeError):
    """A sign test could not be resolved within the classification tolerance."""


class NumericalError(CbleError):
    """A numerical routine failed to meet its tolerance or budget."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class GreyConditionError(DomainError):
    """v(0, inf) was requested for a mechanism violating Grey's condition."""


class DegenerateWeightError(NumericalError):
    """Every importance / h-transform weight vanished."""


class TailCoverageError(NumericalError):
    """A tabulated renewal function does not reach far enough in x."""


class NormalizationMismatchError(CbleError):
    """Renewal-type inputs carry different local-time normalizations."""


class UnsupportedError(CbleError):
    """The requested combination of parameters is deliberately not supported."""


class StatisticalFailure(CbleError):
    """A validation criterion was evaluated and did not pass."""


class ConfigError(CbleError):
    """Configuration text failed to parse or validate.

    ``errors`` is a list of ``(line, key, reason)`` triples.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        lines = [f"line {ln}: {key}: {reason}" if ln else f"{key}: {reason}"
                 for ln, key, reason in self.errors]
        super().__init__("; ".join(lines))
