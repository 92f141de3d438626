"""Exception hierarchy shared by every stage."""


class SuperspillError(Exception):
    """Base class for all errors raised by the package."""


class SchemaError(SuperspillError):
    """An input file is missing a declared column or a field fails to parse."""


class IntegrityError(SuperspillError):
    """A uniqueness or cross-field constraint is violated."""

    def __init__(self, message, offenders=()):
        super().__init__(message)
        self.offenders = list(offenders)


class MissingKeyError(SuperspillError, KeyError):
    """A lookup table has no entry for a required key."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key

    def __str__(self):
        return self.args[0]


class InsufficientDataError(SuperspillError):
    pass


class DomainError(SuperspillError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigError(SuperspillError, ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class EmptyMarketError(SuperspillError):
    """The surviving mass above a cutoff is numerically zero."""


class DivergenceError(SuperspillError):
    pass


class ConvergenceError(SuperspillError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class RankDeficiencyError(SuperspillError):
    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = list(columns)


class DegenerateInstrumentError(SuperspillError):
    pass


class SeparationError(SuperspillError):
    pass
