class HomoptError(Exception):
    """Base class for package errors."""


class ConfigurationError(HomoptError, ValueError):
    """Invalid problem, map, hyperparameter or experiment configuration."""


class TreeError(HomoptError, RuntimeError):
    """Violation of an optimization-tree contract (unknown ids, duplicate attempts)."""


class TreeInitError(HomoptError):
    """The easy problem could not be solved, so no tree can be rooted."""


class ParseError(HomoptError, ValueError):
    """Malformed tree or config file."""

    def __init__(self, message, line=None, source=None):
        where = ""
        if source is not None:
            where += f"{source}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.line = line
        self.source = source
