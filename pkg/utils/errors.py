"""Exception hierarchy shared by the library and the command line.

Every error that can reach ``main`` carries the exit code the process should
return with.
"""

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_INGESTION = 2
EXIT_NOT_CONVERGED = 3


class VBScopeError(Exception):
    """Base class for all VBScope errors"""

    exit_code = EXIT_VALIDATION

    def __init__(self, message, details=None):
        super().__init__(message)
        self.message = message
        self.details = list(details or [])

    def __str__(self):
        if not self.details:
            return self.message
        return self.message + "\n" + "\n".join(f"  - {d}" for d in self.details)


class ConfigError(VBScopeError):
    """The run configuration is malformed or refers to something that does not exist"""

    exit_code = EXIT_VALIDATION


class IngestionError(VBScopeError):
    """A spectrum file could not be read"""

    exit_code = EXIT_INGESTION


class ConvergenceError(VBScopeError):
    """A fit stopped before meeting its convergence criteria"""

    exit_code = EXIT_NOT_CONVERGED
