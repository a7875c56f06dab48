"""Exception types shared by all modules.

Every error carries a short machine-readable ``code`` and a CLI exit status so
the command-line front end can report failures in one parsable line.
"""


class ScopeKitError(Exception):
    code = "error"
    exit_status = 1


class InvalidArgument(ScopeKitError, ValueError):
    code = "invalid-argument"
    exit_status = 2


class FormatError(ScopeKitError):
    code = "format-error"
    exit_status = 3


class FitError(ScopeKitError):
    code = "fit-error"
    exit_status = 4

    def __init__(self, message, best_residual=float("nan")):
        super().__init__(message)
        self.best_residual = best_residual


class GenerationError(ScopeKitError):
    code = "generation-error"
    exit_status = 5


class TableError(ScopeKitError):
    code = "table-error"
    exit_status = 6


class Unreachable(ScopeKitError):
    code = "unreachable"
    exit_status = 7
