"""Exception types raised by the simulation engine."""


class GasGridError(Exception):
    """Base class for all engine errors."""


class NonIntegerCellCount(GasGridError, ValueError):
    pass


class NonPositivePressure(GasGridError, ArithmeticError):
    """A cell pressure reached zero or below, where the friction model is singular."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class StencilTooNarrow(GasGridError, ValueError):
    pass


class ParameterOutOfRange(GasGridError, ValueError):
    pass


class BelowAtmospheric(GasGridError, ValueError):
    pass


class TurbineTripped(GasGridError, RuntimeError):
    pass


class NoConvergence(GasGridError, RuntimeError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class SingularIteration(GasGridError, RuntimeError):
    pass


class ThetaOutOfRange(GasGridError, ValueError):
    pass


class StepSizeUnderflow(GasGridError, RuntimeError):
    def __init__(self, message, t=None, h=None, variable=None):
        super().__init__(message)
        self.t = t
        self.h = h
        self.variable = variable


class NoRootBracketed(GasGridError, RuntimeError):
    pass


class InconsistentRestart(GasGridError, RuntimeError):
    pass


class NewtonDivergence(GasGridError, RuntimeError):
    pass


class LengthMismatch(GasGridError, ValueError):
    pass


class ParseError(GasGridError, ValueError):
    def __init__(self, message, field=None, line=None):
        super().__init__(message)
        self.field = field
        self.line = line


class ValidationError(GasGridError, ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
