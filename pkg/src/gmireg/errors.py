"""Exception hierarchy shared by all gmireg modules."""


class GmiRegError(Exception):
    """Base class for every error raised by gmireg."""


class VolumeReadError(GmiRegError, OSError):
    """The volume file could not be opened or parsed."""


class UnsupportedDatatypeError(GmiRegError, ValueError):
    """The file declares a voxel datatype this reader does not decode."""


class SizeMismatchError(GmiRegError, ValueError):
    """Declared header size disagrees with the payload length."""


class EmptyOverlapError(GmiRegError):
    """No fixed voxel maps inside the moving volume; the metric is undefined."""


class SingularMetricError(GmiRegError, ArithmeticError):
    """A normalized MI variant hit a (near) zero denominator."""
