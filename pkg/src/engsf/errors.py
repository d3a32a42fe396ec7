"""Exception hierarchy.

Numerical failures map to CLI exit code 3, configuration problems to 2.
"""


class EngsfError(Exception):
    pass


class NumericalError(EngsfError):
    pass


class NotPositiveDefinite(NumericalError):
    pass


class NonFiniteState(NumericalError):
    pass


class AllWeightsZero(NumericalError):
    pass


class NonDiagonalR(NumericalError):
    pass


class ZeroMass(NumericalError):
    pass


class LengthMismatch(EngsfError):
    pass


class ConfigError(EngsfError):
    pass


class ParseError(ConfigError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(ConfigError):
    def __init__(self, field, message=""):
        self.field = field
        super().__init__(f"{field}: {message}" if message else field)


class MissingRun(EngsfError):
    pass
