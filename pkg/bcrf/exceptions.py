

class BcrfError(Exception):
    """
    Base class for everything raised by bcrf.

    """
    pass


class InputError(BcrfError):
    """
    Raised when caller-supplied data is invalid. The command line maps this to
    exit status 1.

    """
    pass


class SchemaError(InputError):
    """
    Raised when a label schema violates one of its invariants.

    """
    pass


class ConfigError(InputError):
    """
    Raised for unknown keys or invalid values in a config document.

    """
    pass


class FormatError(InputError):
    """
    Raised when a file can't be decoded: bad magic, truncated payload, dtype
    mismatch, malformed JSON/PPM/CSV.

    """
    pass


class ShapeError(InputError):
    """
    Raised when fields, images, masks or labelings disagree on their shape.

    """
    pass


class SizeGuardError(InputError):
    """
    Raised when a problem is too large for exhaustive enumeration or for naive
    filtering.

    """
    pass


class InvariantError(BcrfError):
    """
    Raised when an internal invariant fails (e.g. a marginal leaves the
    simplex). The command line maps this to exit status 2.

    """
    pass


class TrainingError(BcrfError):
    """
    Raised when gradients are undefined or training diverges.

    """
    def __init__(self, message, trace=None):
        super(TrainingError, self).__init__(message)
        self.trace = list(trace or [])
