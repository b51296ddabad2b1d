"""Exception types raised by the library."""


class AdiabatError(Exception):
    """Base class for all library errors."""


class CapabilityError(AdiabatError):
    """A requested operation exceeds what a symbol or routine supports."""


class NumericError(AdiabatError):
    """Non-finite values or a numerically inconsistent input."""


class DimensionError(AdiabatError):
    """Operands with incompatible phase-space or fiber dimensions."""


class GapViolation(AdiabatError):
    """The selected band is not separated from the rest of the spectrum."""

    def __init__(self, message, gap=None, point=None):
        super().__init__(message)
        self.gap = gap
        self.point = point


class BandIdentificationError(AdiabatError):
    """The selected eigenvalue group has the wrong multiplicity."""


class TransportDomainError(AdiabatError):
    """Two projectors are too far apart for the Nagy transport formula."""


class DefectError(AdiabatError):
    """A constructed series fails its defining identities."""

    def __init__(self, message, defects=None):
        super().__init__(message)
        self.defects = defects


class ClusterViolation(AdiabatError):
    """An almost-projector has spectrum away from {0, 1}."""


class IntegratorError(AdiabatError):
    """A time stepper lost its conservation property."""


class ConfigError(AdiabatError):
    """Invalid experiment configuration."""

    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field
