"""Exception hierarchy shared across the package."""


class CmgndError(Exception):
    """Base class for all package errors."""


class ParameterDomainError(CmgndError, ValueError):
    """A distribution or model parameter is outside its valid domain."""


class InputError(CmgndError, ValueError):
    """User-supplied data or configuration is unusable."""


class FitFailure(CmgndError, RuntimeError):
    """Every start of a fit produced a non-finite likelihood."""

    def __init__(self, message, diagnostics=()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)


class SelectionFailure(CmgndError, RuntimeError):
    """No candidate model could be fitted."""


class ExperimentError(CmgndError, RuntimeError):
    """A simulation experiment lost too many replications to be meaningful."""
