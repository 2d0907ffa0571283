"""Exception hierarchy. CLI exit codes hang off these classes."""


class XVAError(Exception):
    exit_code = 1


class ConfigError(XVAError):
    """Invalid model, portfolio, credit or run configuration."""

    exit_code = 2


class ParseError(ConfigError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class ConvergenceError(XVAError):
    """A backward solver did not reach its tolerance."""

    exit_code = 3

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class EstimationError(XVAError):
    """A risk measure was asked for on a sample with no surviving mass."""


class StateError(XVAError):
    """An operation was called before the data it needs was built."""


class StageError(XVAError):
    """Wraps an error raised inside an engine stage, keeping the stage name."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        super().__init__(f"stage '{stage}' failed: {cause}")
