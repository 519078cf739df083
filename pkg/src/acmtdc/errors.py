"""Exception hierarchy shared by every module."""


class AcMtdcError(Exception):
    """Base class for all errors raised by the package."""


# netmodel
class ParseError(AcMtdcError):
    pass


class ValidationError(AcMtdcError):
    def __init__(self, message, element=None):
        super().__init__(message)
        self.element = element


class MissingBase(AcMtdcError):
    pass


# network solvers
class SingularNetwork(ValidationError):
    pass


class NonConvergence(AcMtdcError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SingularJacobian(AcMtdcError):
    pass


class DisconnectedGraph(AcMtdcError):
    def __init__(self, message, components=None):
        super().__init__(message)
        self.components = components or []


# converter
class ZeroVoltage(AcMtdcError):
    pass


class NegativeCurrent(AcMtdcError):
    pass


# opf
class ModelError(AcMtdcError):
    pass


class Infeasible(AcMtdcError):
    def __init__(self, message, violations=None, solution=None):
        super().__init__(message)
        self.violations = violations or []
        self.solution = solution


class NotOptimal(AcMtdcError):
    pass


# forecast
class InsufficientData(AcMtdcError):
    pass


class DimensionMismatch(AcMtdcError):
    pass


# control
class ZeroCoefficient(AcMtdcError):
    pass


class MarginExhausted(AcMtdcError):
    pass


# simulator
class CascadingInfeasibility(AcMtdcError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
