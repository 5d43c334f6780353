"""Exception hierarchy shared by the solvers, detectors and CLI."""


class RdmcError(Exception):
    """Base class for all package errors."""


class ConfigError(RdmcError):
    pass


class ConfigParseError(ConfigError):
    pass


class ValidationError(ConfigError, ValueError):
    pass


class NonPositiveExtent(ValidationError):
    pass


class TooFewSamples(ValidationError):
    pass


class LocationOutsideGrid(ValidationError):
    pass


class GridMismatch(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class SolverError(RdmcError):
    pass


class MissingPriorOrder(SolverError):
    pass


class OrderUnavailable(SolverError):
    pass


class SubintervalTooCoarse(SolverError):
    pass


class ConvergenceRadiusExceeded(SolverError):
    pass


class NegativeConcentration(SolverError):
    pass


class UnstableConfiguration(SolverError):
    pass


class NegativeBlowup(SolverError):
    pass


class DetectionError(RdmcError, ValueError):
    pass


class DegenerateMeans(DetectionError):
    pass


class NonPositiveMean(DetectionError):
    pass


class EmptyHypothesisSet(DetectionError):
    pass


class TimeOutsideSlot(RdmcError, ValueError):
    pass
