class VolSegError(Exception):
    """Base class for every error raised by pyvolseg."""


# volume_io


class InvariantViolation(VolSegError, ValueError):
    pass


class BadMagic(VolSegError, ValueError):
    pass


class TruncatedFile(VolSegError, ValueError):
    pass


class TrailingData(VolSegError, ValueError):
    pass


class BadDtypeCode(VolSegError, ValueError):
    pass


class LabelOutOfRange(VolSegError, ValueError):
    pass


class IndexOutOfRange(VolSegError, IndexError):
    pass


class BadPgmHeader(VolSegError, ValueError):
    pass


class IoFailure(VolSegError, OSError):
    pass


# weight_maps


class EvenWindow(VolSegError, ValueError):
    pass


class EmptySlice(VolSegError, ValueError):
    pass


class NonPositiveSigma(VolSegError, ValueError):
    pass


class NonPositiveRatio(VolSegError, ValueError):
    pass


# autodiff


class ShapeMismatch(VolSegError, ValueError):
    pass


class IndivisibleSpatialDims(VolSegError, ValueError):
    pass


class AllZeroWeights(VolSegError, ValueError):
    pass


class NonFiniteError(VolSegError, ArithmeticError):
    pass


class MissingGradient(VolSegError, ValueError):
    pass


class NonScalarOutput(VolSegError, ValueError):
    pass


# networks


class BadConfig(VolSegError, ValueError):
    pass


class NotAProbabilityMap(VolSegError, ValueError):
    pass


class CorruptEntry(VolSegError, ValueError):
    pass


# training


class CropLargerThanSlice(VolSegError, ValueError):
    pass


class DivergedLoss(VolSegError, ArithmeticError):
    pass


class MissingPretrained(VolSegError, FileNotFoundError):
    pass
