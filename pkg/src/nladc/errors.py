"""Exception types shared across the package."""


class NladcError(Exception):
    """Base class for all package errors."""


class OutOfRange(NladcError, ValueError):
    """A value lies outside the domain an operation is defined on."""


class GridError(NladcError, ValueError):
    """A sampling grid is not strictly monotone or leaves the function range."""


class DimensionMismatch(NladcError, ValueError):
    """Array shapes do not agree."""


class NoZeroCrossing(NladcError, ValueError):
    """The ideal ramp never passes through zero, so calibration has no anchor."""


class RangeError(NladcError, ValueError):
    """A weight maps to a conductance above the device maximum."""


class MissingComponent(NladcError, KeyError):
    """The component database lacks an entry a scenario needs."""

    def __str__(self):
        return str(self.args[0]) if self.args else "missing component"
