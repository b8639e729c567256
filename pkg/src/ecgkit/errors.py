"""Exception hierarchy shared by all ecgkit modules.

Two families matter to callers:

* ``ValidationError`` — the user/config side is wrong (bad header text,
  unknown stage type, invalid band edges ...).  CLI exit code 2,
  HTTP 422.
* ``DataError`` — inputs were well-formed but the data cannot be
  processed (truncated byte stream, shape mismatch, unstable filter ...).
  CLI exit code 3, HTTP 409.
"""


class EcgKitError(Exception):
    """Base class for all ecgkit errors."""


class ValidationError(EcgKitError):
    """User or configuration error (CLI exit 2, HTTP 422)."""


class DataError(EcgKitError):
    """Data or shape error (CLI exit 3, HTTP 409)."""


# --- wfdb_io ---------------------------------------------------------------

class MalformedHeader(ValidationError):
    pass


class UnsupportedFormat(ValidationError):
    pass


class MissingSignalFile(ValidationError):
    pass


class UnknownCode(ValidationError):
    pass


class TruncatedData(DataError):
    pass


class RangeOverflow(DataError):
    pass


# --- sigproc ---------------------------------------------------------------

class InvalidBand(ValidationError):
    pass


class ConfigError(ValidationError):
    """Malformed pipeline/architecture configuration."""


class DegenerateSignal(DataError):
    pass


class SignalTooShort(DataError):
    pass


class UnstableSection(DataError):
    pass


class WindowTooLarge(DataError):
    pass


# --- archsynth / inferengine -----------------------------------------------

class UnknownFamily(ValidationError):
    pass


class ChannelMismatch(ValidationError):
    pass


class NegativeLength(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class WeightsMismatch(DataError):
    pass


# --- taskout / metrics -----------------------------------------------------

class OutOfRange(ValidationError):
    pass


class UnsortedInput(ValidationError):
    pass


class UnpairedOffset(DataError):
    pass


class DegenerateNormalization(DataError):
    pass
