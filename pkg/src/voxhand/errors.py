"""Exception types raised across the pipeline.

Data problems derive from :class:`DataError`, configuration problems from
:class:`ConfigError`; the CLI maps those two families onto distinct exit codes.
"""


class VoxHandError(Exception):
    """Base class for every error raised by this package."""


class DataError(VoxHandError):
    pass


class ConfigError(VoxHandError, ValueError):
    pass


# ingest
class TruncatedFile(DataError):
    pass


class MalformedHeader(DataError):
    pass


class CountMismatch(DataError):
    pass


class ParseError(DataError):
    pass


class DatasetMissing(DataError):
    pass


# geometry
class EmptyFrame(DataError):
    pass


class EmptyCloud(DataError):
    pass


# voxelize
class TargetTooLarge(VoxHandError, ValueError):
    pass


# tensor engine
class ShapeMismatch(VoxHandError, ValueError):
    pass


class TapeMissing(VoxHandError, RuntimeError):
    pass


class DegenerateBatch(VoxHandError, ValueError):
    pass


class MissingGradient(VoxHandError, RuntimeError):
    pass


# models / training / evaluation
class ConfigInvalid(ConfigError):
    pass


class UnknownSubject(ConfigError):
    pass


class LengthMismatch(VoxHandError, ValueError):
    pass


class DivergedLoss(VoxHandError, RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step
        self.value = value
