"""Exception hierarchy.

InputError covers everything caused by bad user input (malformed files,
shape mismatches, out-of-range values); the CLI maps it to exit code 2.
Anything else escaping a command is treated as an internal invariant
violation and maps to exit code 3.
"""


class MagCropError(Exception):
    """Base class for all errors raised by this package."""


class InputError(MagCropError):
    """Invalid input data or arguments."""


# Tensor / image wire format
class BadMagic(InputError):
    pass


class UnsupportedDtype(InputError):
    pass


class ShapeOverflow(InputError):
    pass


class NonFiniteElement(InputError):
    pass


class IoFailure(MagCropError):
    pass


class UnsupportedFormat(InputError):
    pass


class CorruptFile(InputError):
    pass


class ConfigError(InputError):
    pass


# Heatmap
class ShapeMismatch(InputError):
    pass


class NotAGrid(InputError):
    pass


# Granularity classifier
class NonFiniteWeight(InputError):
    pass


class EmptyQuery(InputError):
    pass


# Semantic crop
class HeatmapTooSmall(InputError):
    pass


class ParentTooSmall(InputError):
    pass


# Resolution adjustment
class ImageTooSmall(InputError):
    pass


class BoxOutOfBounds(InputError):
    pass


class SizeMismatch(InputError):
    pass


class PlanMismatch(InputError):
    pass


# Mask fusion
class WeightCountMismatch(InputError):
    pass


class WeightsNotNormalized(InputError):
    pass


# Metrics
class EmptyEvaluation(InputError):
    pass


class EmptyGroundTruth(InputError):
    pass


# Synthetic scenes
class TargetOutOfBounds(InputError):
    pass


class BadGrid(InputError):
    pass


# Pipeline
class MissingInput(InputError):
    def __init__(self, stage, message=""):
        self.stage = stage
        super().__init__(f"missing input for stage '{stage}'" + (f": {message}" if message else ""))
